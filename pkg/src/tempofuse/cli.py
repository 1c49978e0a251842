"""Command-line pipeline: synth, pretrain, finetune, evaluate, bench.

One executable with subcommands.  Everything non-trivial lives in a JSON
config whose sections mirror the module configs field for field, with the
same names and defaults; flags carry only paths, the output directory and
an optional seed override.  Every command writes its fully-resolved config
into the output directory, and a rerun from that echo reproduces the run.

Config sections: seed, data (+ n_pretrain), masking, model, train,
finetune, eval, bench.  The model section omits `modalities`, which are
derived from the dataset.  Dataset directories come from `synth`: TFSC
scenes, PGM label maps (with exact float sidecars) and a manifest.jsonl
whose records carry {path, split, seed}; the label for scenes/X.tfsc sits
at labels/X.pgm by construction.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench as B
from . import downstream as D
from . import model as M
from . import scenes as S
from . import train as T
from .errors import ConfigError, DataError, NumericError, ShapeError
from .masking import Strategy, StrategyConfig
from .metrics import read_risk_map, write_report, write_risk_map

__all__ = ["main", "resolve_config", "RunConfig"]

# the unlabeled pretraining pool draws seeds far above every task split
_PRETRAIN_OFFSET = 30_000_000

_SECTIONS = ("seed", "data", "masking", "model", "train", "finetune",
             "eval", "bench")
_EVAL_DEFAULTS = {"seed": 0, "plans_per_scene": 2, "time_shuffle_probe": False}
_ABLATION_ORDER = ("RS", "TDS", "TDS_FUTURE", "CONSISTENT")


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Fully-resolved run settings for one command invocation."""

    seed: int
    data: S.RiskConfig
    n_pretrain: int
    masking: StrategyConfig
    model_kw: dict          # ModelConfig overrides; modalities come from data
    train: T.TrainConfig
    finetune: D.FinetuneConfig
    eval: dict
    bench: B.BenchConfig


def _suggest(key, valid) -> str:
    near = difflib.get_close_matches(key, sorted(valid), n=1)
    return f' (nearest valid key: "{near[0]}")' if near else ""


def _kwargs(cls, raw, where: str, errors: list, skip=(), extra=()) -> dict:
    """Known fields of `cls` out of `raw`; unknown keys land in `errors`."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    valid = [f.name for f in dc_fields(cls) if f.name not in skip]
    out = {}
    for k, v in raw.items():
        if k in valid:
            out[k] = v
        elif k not in extra:
            errors.append(f"{where}.{k}: unknown key"
                          + _suggest(k, list(valid) + list(extra)))
    return out


def resolve_config(doc) -> RunConfig:
    """Validate a raw JSON document against the section schema.

    Unknown keys are collected across the whole document and reported in
    one error; value checks are delegated to the module configs.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root: expected a JSON object")
    errors = []
    for k in doc:
        if k not in _SECTIONS:
            errors.append(f"{k}: unknown key" + _suggest(k, _SECTIONS))

    data_raw = doc.get("data", {})
    data_kw = _kwargs(S.RiskConfig, data_raw, "data", errors,
                      extra=("n_pretrain",))
    scene_kw = _kwargs(S.SceneConfig, data_kw.pop("scene", {}), "data.scene",
                       errors)
    dyn_kw = _kwargs(S.Dynamics, scene_kw.pop("dynamics", {}),
                     "data.scene.dynamics", errors)
    mods_raw = scene_kw.pop("modalities", None)
    mod_kws = None
    if mods_raw is not None:
        if not isinstance(mods_raw, list):
            raise ConfigError("data.scene.modalities: expected a JSON array")
        mod_kws = [_kwargs(S.ModalitySpec, mr, f"data.scene.modalities[{i}]",
                           errors) for i, mr in enumerate(mods_raw)]

    mask_kw = _kwargs(StrategyConfig, doc.get("masking", {}), "masking",
                      errors)
    model_kw = _kwargs(M.ModelConfig, doc.get("model", {}), "model", errors,
                       skip=("modalities",))
    train_kw = _kwargs(T.TrainConfig, doc.get("train", {}), "train", errors)
    ft_kw = _kwargs(D.FinetuneConfig, doc.get("finetune", {}), "finetune",
                    errors)
    sub_kw = _kwargs(D.SubsamplePolicy, ft_kw.pop("subsample", {}),
                     "finetune.subsample", errors)
    eval_raw = doc.get("eval", {})
    if not isinstance(eval_raw, dict):
        raise ConfigError("eval: expected a JSON object")
    for k in eval_raw:
        if k not in _EVAL_DEFAULTS:
            errors.append(f"eval.{k}: unknown key"
                          + _suggest(k, _EVAL_DEFAULTS))
    bench_kw = _kwargs(B.BenchConfig, doc.get("bench", {}), "bench", errors)

    if errors:
        raise ConfigError("config: " + "; ".join(errors))

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    n_pretrain = data_raw.get("n_pretrain", 16)
    if isinstance(n_pretrain, bool) or not isinstance(n_pretrain, int) \
            or n_pretrain < 0:
        raise ConfigError("data.n_pretrain must be a non-negative integer")

    # JSON arrays into the tuples the dataclasses expect
    if "phase_band" in data_kw:
        data_kw["phase_band"] = tuple(data_kw["phase_band"])
    if "k_choices" in dyn_kw:
        dyn_kw["k_choices"] = tuple(dyn_kw["k_choices"])
    if mod_kws is not None:
        specs = []
        for i, mk in enumerate(mod_kws):
            if "name" not in mk:
                raise ConfigError(
                    f"data.scene.modalities[{i}]: every modality needs a name")
            specs.append(S.ModalitySpec(**mk))
        scene_kw["modalities"] = tuple(specs)
    scene_kw["dynamics"] = S.Dynamics(**dyn_kw)
    data_cfg = S.RiskConfig(scene=S.SceneConfig(**scene_kw), **data_kw)

    if "kind" in mask_kw:
        try:
            mask_kw["kind"] = Strategy(mask_kw["kind"])
        except ValueError:
            raise ConfigError("masking.kind: pick from "
                              f"{[s.value for s in Strategy]}") from None
    mask_cfg = StrategyConfig(**mask_kw)

    # overrides are validated now, against placeholder modalities; the real
    # ones arrive with the dataset
    M.ModelConfig(modalities=(("probe", 16),), **model_kw)

    if "betas" in train_kw:
        train_kw["betas"] = tuple(train_kw["betas"])
    train_cfg = T.TrainConfig(**train_kw)

    for k in ("head_widths", "betas"):
        if k in ft_kw:
            ft_kw[k] = tuple(ft_kw[k])
    if ft_kw.get("tap_layers") is not None:
        ft_kw["tap_layers"] = tuple(ft_kw["tap_layers"])
    ft_kw["subsample"] = D.SubsamplePolicy(**sub_kw)
    ft_cfg = D.FinetuneConfig(**ft_kw)

    ev = dict(_EVAL_DEFAULTS)
    ev.update(eval_raw)
    if isinstance(ev["seed"], bool) or not isinstance(ev["seed"], int):
        raise ConfigError("eval.seed must be an integer")
    if isinstance(ev["plans_per_scene"], bool) \
            or not isinstance(ev["plans_per_scene"], int) \
            or ev["plans_per_scene"] < 1:
        raise ConfigError("eval.plans_per_scene must be a positive integer")
    if not isinstance(ev["time_shuffle_probe"], bool):
        raise ConfigError("eval.time_shuffle_probe must be a boolean")

    if "t_values" in bench_kw:
        bench_kw["t_values"] = tuple(bench_kw["t_values"])
    bench_cfg = B.BenchConfig(**bench_kw)

    return RunConfig(seed=seed, data=data_cfg, n_pretrain=n_pretrain,
                     masking=mask_cfg, model_kw=dict(model_kw),
                     train=train_cfg, finetune=ft_cfg, eval=ev,
                     bench=bench_cfg)


def _apply_seed(rc: RunConfig, seed) -> RunConfig:
    """--seed N overrides every seed the config carries."""
    if seed is None:
        return rc
    ev = dict(rc.eval)
    ev["seed"] = seed
    return RunConfig(seed=seed, data=rc.data, n_pretrain=rc.n_pretrain,
                     masking=rc.masking, model_kw=rc.model_kw,
                     train=replace(rc.train, seed=seed),
                     finetune=replace(rc.finetune, seed=seed),
                     eval=ev, bench=replace(rc.bench, seed=seed))


def echo_dict(rc: RunConfig) -> dict:
    """The resolved config as a JSON-ready document; feeding it back in
    reproduces the run without any flags beyond the paths."""
    data = asdict(rc.data)
    data["n_pretrain"] = rc.n_pretrain
    mask = asdict(rc.masking)
    mask["kind"] = rc.masking.kind.value
    model = {f.name: f.default for f in dc_fields(M.ModelConfig)
             if f.name not in ("modalities", "max_h", "max_w")}
    model.update(rc.model_kw)
    return {"seed": rc.seed, "data": data, "masking": mask, "model": model,
            "train": asdict(rc.train), "finetune": asdict(rc.finetune),
            "eval": dict(rc.eval), "bench": asdict(rc.bench)}


def _echo(rc: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(echo_dict(rc), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Dataset plumbing
# ---------------------------------------------------------------------------


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e})") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def _data_io(fn, path, what: str):
    try:
        return fn(path)
    except OSError as e:
        raise DataError(f"{path}: cannot read {what} ({e})") from e


def _load_manifest(data_path):
    p = Path(data_path)
    if p.is_dir():
        p = p / "manifest.jsonl"
    if not p.is_file():
        raise DataError(f"{data_path}: no manifest.jsonl here")
    return p.parent, S.read_manifest(p)


def _label_path(scene_rel: str) -> str:
    return f"labels/{Path(scene_rel).stem}.pgm"


def _load_pretrain_scenes(root: Path, records: list) -> list:
    out = [_data_io(S.read_scene, root / r["path"], "scene")
           for r in records if r["split"] == "pretrain"]
    if not out:
        raise DataError("manifest has no pretraining scenes")
    return out


def _load_tasks(root: Path, records: list) -> list:
    tasks = []
    for r in records:
        if r["split"] == "pretrain":
            continue
        scene = _data_io(S.read_scene, root / r["path"], "scene")
        probs = _data_io(read_risk_map, root / _label_path(r["path"]),
                         "label map")
        tasks.append(S.RiskTask(scene=scene,
                                label=(probs > 0.5).astype(np.uint8),
                                split=r["split"], seed=int(r["seed"])))
    if not tasks:
        raise DataError("manifest has no labelled tasks")
    return tasks


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(rc: RunConfig, out: Path) -> int:
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(rc.n_pretrain):
        sd = rc.seed + _PRETRAIN_OFFSET + i
        scene = S.generate_scene(sd, rc.data.scene, keep_latent=False)
        rel = f"scenes/pretrain_{i:04d}.tfsc"
        S.write_scene(out / rel, scene)
        records.append({"path": rel, "split": "pretrain", "seed": sd})
    counts = {"train": 0, "val": 0, "test": 0}
    for task in S.make_risk_dataset(rc.seed, rc.data):
        i = counts[task.split]
        counts[task.split] += 1
        rel = f"scenes/{task.split}_{i:04d}.tfsc"
        S.write_scene(out / rel, task.scene)
        write_risk_map(out / _label_path(rel), task.label.astype(np.float64))
        records.append({"path": rel, "split": task.split, "seed": task.seed})
    S.write_manifest(out / "manifest.jsonl", records)
    print(f"synth: {rc.n_pretrain} pretraining scenes, "
          f"{sum(counts.values())} labelled tasks -> {out / 'manifest.jsonl'}")
    return 0


def cmd_pretrain(rc: RunConfig, data, out: Path) -> int:
    root, records = _load_manifest(data)
    dataset = _load_pretrain_scenes(root, records)
    mcfg = M.ModelConfig.for_scene(dataset[0], **rc.model_kw)
    _, _, trace = T.pretrain(dataset, rc.masking, mcfg, rc.train, out_dir=out)
    print(f"pretrain: {len(trace)} steps, final loss {trace[-1][2]:.4f} "
          f"-> {out / 'ckpt_final.tfck'}")
    return 0


def cmd_finetune(rc: RunConfig, ckpt, data, out: Path) -> int:
    root, records = _load_manifest(data)
    tasks = _load_tasks(root, records)
    params, _ = _data_io(T.load_state, ckpt, "checkpoint")
    state, trace = D.finetune(tasks, params, params.cfg, rc.finetune)
    D.save_finetune(out / "state.tfck", state)
    # the wall-seconds column is dropped so reruns are byte-identical
    lines = ["epoch,train_loss,val_metric"]
    lines += [f"{e},{l!r},{m!r}" for e, _, l, m in trace]
    (out / "finetune_trace.csv").write_text("\n".join(lines) + "\n")
    best = max(m for *_, m in trace)
    write_report(out / "report.json",
                 {"best_val_metric": best, "epochs_run": len(trace),
                  "threshold": state.threshold})
    print(f"finetune: {len(trace)} epochs, best val metric {best:.4f} "
          f"-> {out / 'state.tfck'}")
    return 0


def cmd_evaluate(rc: RunConfig, ckpt, data, out: Path) -> int:
    state = _data_io(D.load_finetune, ckpt, "fine-tuned state")
    root, records = _load_manifest(data)
    tasks = _load_tasks(root, records)
    if state.fcfg.head_kind == "risk":
        report, maps = D.evaluate_risk(tasks, state)
        (out / "maps").mkdir(parents=True, exist_ok=True)
        for seed in sorted(maps):
            write_risk_map(out / "maps" / f"risk_{seed}.pgm",
                           maps[seed].astype(np.float64))
    else:
        report = D.evaluate_segmentation(tasks, state)
    if rc.eval["time_shuffle_probe"]:
        report["time_shuffle"] = D.probe_time_shuffle(
            tasks, state, seed=rc.eval["seed"])
    write_report(out / "report.json", report)
    shown = ", ".join(f"{k}={v:.4f}" for k, v in report.items()
                      if isinstance(v, float))
    print(f"evaluate: {shown} -> {out / 'report.json'}")
    return 0


def cmd_ablate_masking(rc: RunConfig, data, out: Path) -> int:
    root, records = _load_manifest(data)
    scenes = _load_pretrain_scenes(root, records)
    if len(scenes) < 2:
        raise DataError("ablation needs >= 2 pretraining scenes "
                        "(some are held out for evaluation)")
    n_hold = max(1, len(scenes) // 4)
    pool, held = scenes[:-n_hold], scenes[-n_hold:]
    mcfg = M.ModelConfig.for_scene(pool[0], **rc.model_kw)
    # every strategy is scored on the same held-out disjoint-time plans
    eval_cfg = replace(rc.masking, kind=Strategy.TDS)
    rows = []
    for kind in _ABLATION_ORDER:
        scfg = replace(rc.masking, kind=Strategy(kind))
        params, _, trace = T.pretrain(pool, scfg, mcfg, rc.train)
        acc = T.eval_token_accuracy(held, params, eval_cfg, rc.eval["seed"],
                                    rc.eval["plans_per_scene"])
        rows.append((kind, trace[-1][2], acc))
        print(f"ablate: {kind}: final loss {trace[-1][2]:.4f}, "
              f"held-out accuracy {acc:.4f}")
    lines = ["strategy,final_loss,heldout_tds_accuracy"]
    lines += [f"{k},{l!r},{a!r}" for k, l, a in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    print(f"ablate: {len(rows)} strategies -> {out / 'ablation.csv'}")
    return 0


def cmd_bench(rc: RunConfig, out: Path) -> int:
    res = B.run_scaling(rc.bench)
    exps = {}
    for variant, r in res.items():
        B.write_table(out / f"{variant}.csv", r["table"])
        B.write_scatter(out / f"{variant}_scatter.txt", r["table"])
        exps[variant] = r["exponent"]
    write_report(out / "exponents.json", exps)
    print("bench: "
          + ", ".join(f"{v} exponent {e:.3f}" for v, e in exps.items())
          + f" -> {out / 'exponents.json'}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tempofuse",
        description="Temporal masked multimodal pretraining, end to end "
                    "on synthetic scenes.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, data=False, checkpoint=None):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        if data:
            p.add_argument("--data", required=True,
                           help="dataset directory (or manifest.jsonl) "
                                "from `synth`")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help=checkpoint)

    add("synth", "generate a synthetic dataset and its manifest")
    add("pretrain", "masked-token pretraining over the manifest's scene pool",
        data=True)
    add("finetune", "fine-tune a pretrained checkpoint on the labelled tasks",
        data=True, checkpoint="pretraining checkpoint (.tfck)")
    add("evaluate", "threshold on val, metrics and risk maps on test",
        data=True, checkpoint="fine-tuned state (.tfck) from `finetune`")
    add("ablate-masking", "train all four masking strategies on one dataset",
        data=True)
    add("bench", "runtime scaling of both encoder variants")
    return ap


def _dispatch(args) -> int:
    rc = _apply_seed(resolve_config(_read_json(args.config)), args.seed)
    out = Path(args.out)
    _echo(rc, out)
    if args.command == "synth":
        return cmd_synth(rc, out)
    if args.command == "pretrain":
        return cmd_pretrain(rc, args.data, out)
    if args.command == "finetune":
        return cmd_finetune(rc, args.checkpoint, args.data, out)
    if args.command == "evaluate":
        return cmd_evaluate(rc, args.checkpoint, args.data, out)
    if args.command == "ablate-masking":
        return cmd_ablate_masking(rc, args.data, out)
    return cmd_bench(rc, out)


def _thread_cap():
    raw = os.environ.get("TEMPOFUSE_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TEMPOFUSE_THREADS={raw!r} is not an integer") \
            from None
    if n < 1:
        raise ConfigError("TEMPOFUSE_THREADS must be >= 1")
    return n


def _fail(code: int, kind: str, err: Exception) -> int:
    print(json.dumps({"error": kind, "detail": str(err)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_thread_cap()):
            return _dispatch(args)
    except ConfigError as e:
        return _fail(2, "config", e)
    except (DataError, ShapeError) as e:
        return _fail(3, "data", e)
    except NumericError as e:
        return _fail(4, "numeric", e)


if __name__ == "__main__":
    sys.exit(main())
