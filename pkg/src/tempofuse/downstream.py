"""Fine-tuning on top of a pretrained encoder.

The protocol: tap features at several encoder depths, fuse them across
modalities and time, decode to pixel space with a small progressive
upsampling head, and train with cross entropy (class maps) or squared
error (probability / regression maps).  Token subsampling and the
time-shuffle robustness probe live here too.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import nd
from . import train as T
from .errors import ConfigError, DataError
from .metrics import brier, f1_class, miou, rmse, select_threshold
from .model import ModelConfig, Params
from .scenes import Scene

__all__ = [
    "SubsamplePolicy", "FinetuneConfig", "FinetuneState",
    "default_taps", "extract_features", "fuse", "subsample_tokens",
    "shuffle_times", "apply_time_permutation", "flip_scene",
    "init_head", "head_forward", "predict", "finetune",
    "evaluate_risk", "evaluate_segmentation", "probe_time_shuffle",
    "save_finetune", "load_finetune",
]

MEAN_POOL = "mean_pool"
CONCAT = "concat"

_R_HEAD = 0xF7
_R_EPOCH = 3


@dataclass(frozen=True)
class SubsamplePolicy:
    kind: str = "none"            # none | image_level | patch_level
    keep_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "image_level", "patch_level"):
            raise ConfigError(f"unknown subsample kind {self.kind!r}")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ConfigError("keep_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class FinetuneConfig:
    tap_layers: tuple | None = None   # None: quarter-spaced defaults
    fusion: str = MEAN_POOL
    head_widths: tuple = (64, 32)
    head_kind: str = "segmentation"   # segmentation | risk | regression
    n_classes: int = 2
    late_fusion: bool = False         # per-frame encoding baseline
    freeze_encoder: bool = False
    subsample: SubsamplePolicy = field(default_factory=SubsamplePolicy)
    augment: bool = True
    lr: float = 1e-3
    epochs: int = 30
    patience: int = 5
    batch_size: int = 4
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in (MEAN_POOL, CONCAT):
            raise ConfigError(f"unknown fusion mode {self.fusion!r}")
        if self.head_kind not in ("segmentation", "risk", "regression"):
            raise ConfigError(f"unknown head kind {self.head_kind!r}")
        if self.head_kind == "segmentation" and self.n_classes < 2:
            raise ConfigError("segmentation needs n_classes >= 2")
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("epochs, patience, batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not self.head_widths:
            raise ConfigError("head_widths must not be empty")

    def out_channels(self) -> int:
        return 1 if self.head_kind in ("risk", "regression") else self.n_classes


def default_taps(enc_layers: int) -> tuple:
    """Up to four tap points at quarter spacing through the encoder.

    A 12-layer encoder yields blocks (3, 6, 9, 12); shallow encoders get
    every block.
    """
    if enc_layers < 1:
        raise ConfigError("feature taps need at least one encoder layer")
    return tuple(sorted({math.ceil(k * enc_layers / 4) for k in (1, 2, 3, 4)}))


def resolve_taps(fcfg: FinetuneConfig, mcfg: ModelConfig) -> tuple:
    if fcfg.tap_layers is None:
        return default_taps(mcfg.enc_layers)
    return M.check_taps(fcfg.tap_layers, mcfg.enc_layers)


# ---------------------------------------------------------------------------
# Features and fusion
# ---------------------------------------------------------------------------


def extract_features(scene: Scene, pt: dict, mcfg: ModelConfig, taps,
                     coords=None, late_fusion: bool = False):
    """Per-tap token features; (token_set, {tap: (L, d) Tensor})."""
    if coords is None:
        coords = M.all_token_coords(scene)
    if late_fusion:
        ts, _, tapped = M.late_fusion_encode(scene, coords, pt, mcfg,
                                             taps=taps)
    else:
        ts, _, tapped = M.encode(scene, coords, pt, mcfg, taps=taps)
    return ts, tapped


def _frame_table(scene: Scene):
    frames = []
    for mi, spec in enumerate(scene.modalities):
        for t in range(scene.frames_of(spec)):
            frames.append((mi, t))
    return frames


def fuse(x, token_set, scene: Scene, mode: str):
    """(H*W, channels) fused grid from per-token features.

    MEAN_POOL averages every token that lands on a spatial cell and
    accepts ragged token sets.  CONCAT stacks channels in canonical
    (modality-major, time-minor) frame order and requires every frame to
    be complete.
    """
    n_cells = scene.H * scene.W
    cells = token_set.coords[:, 2]
    if mode == MEAN_POOL:
        counts = np.bincount(cells, minlength=n_cells)
        if (counts == 0).any():
            raise DataError("every spatial cell needs at least one token")
        pool = np.zeros((n_cells, len(token_set)), dtype=x.dtype)
        pool[cells, np.arange(len(token_set))] = 1.0 / counts[cells]
        return nd.matmul(nd.wrap(pool), x)
    frames = _frame_table(scene)
    if len(token_set) != len(frames) * n_cells:
        raise ConfigError("concat fusion requires complete frames")
    # canonical order is (modality, t, cell): frame-major blocks of n_cells
    mt = token_set.coords[:, :2]
    want = np.repeat(np.asarray(frames, dtype=np.int64), n_cells, axis=0)
    if not (np.array_equal(mt, want)
            and np.array_equal(cells.reshape(len(frames), n_cells),
                               np.tile(np.arange(n_cells), (len(frames), 1)))):
        raise ConfigError("concat fusion requires complete frames")
    d = x.shape[1]
    grid = nd.reshape(x, (len(frames), n_cells, d))
    return nd.reshape(nd.transpose(grid, (1, 0, 2)),
                      (n_cells, len(frames) * d))


def fused_channels(scene: Scene, mcfg: ModelConfig, fcfg: FinetuneConfig) -> int:
    per_tap = mcfg.d_model
    if fcfg.fusion == CONCAT:
        per_tap *= len(_frame_table(scene))
    return per_tap * len(resolve_taps(fcfg, mcfg))


# ---------------------------------------------------------------------------
# Token subsampling
# ---------------------------------------------------------------------------


def subsample_tokens(scene: Scene, policy: SubsamplePolicy, rng) -> np.ndarray:
    """(n, 3) coordinate subset; every spatial cell keeps >= 1 token."""
    coords = M.all_token_coords(scene)
    if policy.kind == "none" or policy.keep_fraction == 1.0:
        return coords
    frames = _frame_table(scene)
    n_frames = len(frames)
    keep = math.ceil(policy.keep_fraction * n_frames)
    n_cells = scene.H * scene.W
    if policy.kind == "image_level":
        chosen = rng.choice(n_frames, size=keep, replace=False)
        chosen = np.sort(chosen)
        rows = []
        for f in chosen:
            mi, t = frames[f]
            rows.append(np.column_stack([
                np.full(n_cells, mi), np.full(n_cells, t),
                np.arange(n_cells)]))
        return np.concatenate(rows).astype(np.int64)
    # patch_level: an independent draw of `keep` frames per spatial cell
    ranks = rng.random((n_cells, n_frames)).argsort(axis=1)[:, :keep]
    cell_idx = np.repeat(np.arange(n_cells), keep)
    frame_idx = ranks.ravel()
    ft = np.asarray(frames, dtype=np.int64)
    out = np.column_stack([ft[frame_idx], cell_idx])
    return out.astype(np.int64)


# ---------------------------------------------------------------------------
# Scene surgery: time shuffling, flips
# ---------------------------------------------------------------------------


def apply_time_permutation(scene: Scene, perm: np.ndarray) -> Scene:
    """Move frame contents across time slots; timestamps stay put."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(scene.T)):
        raise ConfigError(f"not a permutation of 0..{scene.T - 1}: {perm}")
    sc = copy.copy(scene)
    sc.tokens = dict(scene.tokens)
    sc.values = dict(scene.values)
    for spec in scene.modalities:
        if spec.temporal:
            sc.tokens[spec.name] = scene.tokens[spec.name][perm]
            sc.values[spec.name] = scene.values[spec.name][perm]
    if scene.latent is not None and scene.latent.shape[0] == scene.T:
        sc.latent = scene.latent[perm]
    return sc


def shuffle_times(scene: Scene, rng):
    """(shuffled scene, permutation); T=1 scenes come back untouched."""
    if scene.T < 2:
        return scene, None
    perm = rng.permutation(scene.T)
    while np.array_equal(perm, np.arange(scene.T)):
        perm = rng.permutation(scene.T)
    return apply_time_permutation(scene, perm), perm


def flip_scene(scene: Scene, flip_v: bool, flip_h: bool) -> Scene:
    """Spatial flips applied to every modality and every timestamp."""
    if not (flip_v or flip_h):
        return scene
    axes_3 = [ax for ax, on in ((1, flip_v), (2, flip_h)) if on]
    sc = copy.copy(scene)
    sc.tokens = {k: np.flip(v, axis=axes_3).copy()
                 for k, v in scene.tokens.items()}
    sc.values = {k: np.flip(v, axis=axes_3).copy()
                 for k, v in scene.values.items()}
    if scene.latent is not None:
        sc.latent = np.flip(scene.latent, axis=axes_3).copy()
    return sc


def flip_label(label: np.ndarray, flip_v: bool, flip_h: bool) -> np.ndarray:
    axes = [ax for ax, on in ((0, flip_v), (1, flip_h)) if on]
    return np.flip(label, axis=axes).copy() if axes else label


# ---------------------------------------------------------------------------
# Pixel head
# ---------------------------------------------------------------------------


def _n_upsamples(patch_px: int) -> int:
    n = int(round(math.log2(patch_px)))
    if 2 ** n != patch_px:
        raise ConfigError(f"patch_px {patch_px} is not a power of 2")
    return n


def init_head(in_channels: int, patch_px: int, fcfg: FinetuneConfig,
              seed: int) -> dict:
    """Parameter arrays for the progressive upsampling head.

    The first log2(patch_px) stages double the spatial size; remaining
    widths run at pixel scale.  A 1x1 projection produces the per-pixel
    outputs.
    """
    n_up = _n_upsamples(patch_px)
    if len(fcfg.head_widths) < n_up:
        raise ConfigError(
            f"head needs >= {n_up} widths to reach pixel scale, "
            f"got {fcfg.head_widths}")
    rng = nd.stream(seed, _R_HEAD)
    values = {}
    c_in = in_channels
    for i, width in enumerate(fcfg.head_widths):
        values[f"stage{i}/w"] = rng.normal(
            0.0, 0.02, size=(9, c_in, width)).astype(np.float32)
        values[f"stage{i}/b"] = np.zeros(width, dtype=np.float32)
        c_in = width
    values["out/w"] = rng.normal(
        0.0, 0.02, size=(c_in, fcfg.out_channels())).astype(np.float32)
    values["out/b"] = np.zeros(fcfg.out_channels(), dtype=np.float32)
    return values


def _conv3x3(x, w, b):
    """3x3 same-padding convolution on an (H, W, C) grid."""
    h, wd = x.shape[0], x.shape[1]
    xp = nd.pad2d(x, ((1, 1), (1, 1), (0, 0)))
    out = None
    for k in range(9):
        dy, dx = divmod(k, 3)
        patch = nd.slice_(xp, (slice(dy, dy + h), slice(dx, dx + wd)))
        term = nd.matmul(patch, nd.slice_(w, (k,)))
        out = term if out is None else nd.add(out, term)
    return nd.add(out, b)


def head_forward(fused, hp: dict, scene: Scene, fcfg: FinetuneConfig):
    """Fused (H*W, C) grid -> per-pixel (H_px, W_px, out) Tensor."""
    n_up = _n_upsamples(scene.patch_px)
    x = nd.reshape(fused, (scene.H, scene.W, fused.shape[1]))
    for i in range(len(fcfg.head_widths)):
        if i < n_up:
            x = nd.repeat(nd.repeat(x, 2, axis=0), 2, axis=1)
        x = nd.gelu(_conv3x3(x, hp[f"stage{i}/w"], hp[f"stage{i}/b"]))
    return nd.add(nd.matmul(x, hp["out/w"]), hp["out/b"])


# ---------------------------------------------------------------------------
# Fine-tune state
# ---------------------------------------------------------------------------


@dataclass
class FinetuneState:
    """Trainable values plus whatever stays frozen, ready for `predict`."""
    mcfg: ModelConfig
    fcfg: FinetuneConfig
    taps: tuple
    values: dict                 # optimized arrays, "head/..." and "backbone/..."
    frozen: dict                 # constant backbone arrays when the encoder is frozen
    step: int = 0
    threshold: float = 0.5       # risk heads: decision threshold fitted on val

    def split_tensors(self):
        """(backbone pt, head pt) with trainables wrapped for the tape."""
        bb, hp = {}, {}
        for k, v in self.values.items():
            kind, name = k.split("/", 1)
            (bb if kind == "backbone" else hp)[name] = nd.wrap(v)
        for name, v in self.frozen.items():
            bb[name] = nd.wrap(v)
        return bb, hp


def init_finetune_state(params: Params, mcfg: ModelConfig,
                        fcfg: FinetuneConfig, sample_scene: Scene):
    taps = resolve_taps(fcfg, mcfg)
    head = init_head(fused_channels(sample_scene, mcfg, fcfg),
                     sample_scene.patch_px, fcfg, fcfg.seed)
    values = {f"head/{k}": v for k, v in head.items()}
    frozen = {}
    if fcfg.freeze_encoder:
        frozen = dict(params.values)
    else:
        values.update({f"backbone/{k}": v for k, v in params.values.items()})
    return FinetuneState(mcfg=mcfg, fcfg=fcfg, taps=taps, values=values,
                         frozen=frozen)


def _fused_features(scene, state: FinetuneState, bb: dict, coords=None):
    fcfg = state.fcfg
    ts, tapped = extract_features(scene, bb, state.mcfg, state.taps,
                                  coords=coords, late_fusion=fcfg.late_fusion)
    per_tap = [fuse(tapped[t], ts, scene, fcfg.fusion) for t in state.taps]
    return per_tap[0] if len(per_tap) == 1 else nd.concat(per_tap, axis=1)


def _pixel_output(scene, state: FinetuneState, bb: dict, hp: dict,
                  coords=None):
    fused = _fused_features(scene, state, bb, coords=coords)
    return head_forward(fused, hp, scene, state.fcfg)


def _loss_for(out, label: np.ndarray, fcfg: FinetuneConfig):
    hpx, wpx = out.shape[0], out.shape[1]
    if fcfg.head_kind == "segmentation":
        logits = nd.reshape(out, (hpx * wpx, fcfg.n_classes))
        return nd.cross_entropy_logits(logits, label.ravel().astype(np.int64))
    pred = nd.reshape(out, (hpx, wpx))
    if fcfg.head_kind == "risk":
        pred = nd.sigmoid(pred)
    diff = nd.sub(pred, nd.wrap(label.astype(pred.dtype)))
    return nd.mean(nd.mul(diff, diff))


def predict(scene: Scene, state: FinetuneState):
    """Per-pixel prediction map, eagerly (no tape).

    Segmentation: (H_px, W_px) argmax class ids.  Risk: probabilities in
    [0, 1].  Regression: raw values.
    """
    bb, hp = state.split_tensors()
    out = _pixel_output(scene, state, bb, hp)
    if state.fcfg.head_kind == "segmentation":
        return np.argmax(out.data, axis=-1)
    flat = out.data[..., 0]
    if state.fcfg.head_kind == "risk":
        return 1.0 / (1.0 + np.exp(-flat.astype(np.float64)))
    return flat


def _val_metric(tasks, state: FinetuneState) -> float:
    """Bigger is better: mIoU, thresholded F1, or negative RMSE."""
    fcfg = state.fcfg
    preds = [predict(t.scene, state) for t in tasks]
    labels = [t.label for t in tasks]
    if fcfg.head_kind == "segmentation":
        p = np.concatenate([x.ravel() for x in preds])
        y = np.concatenate([x.ravel() for x in labels]).astype(np.int64)
        return miou(p, y, fcfg.n_classes)
    p = np.concatenate([x.ravel() for x in preds])
    y = np.concatenate([x.ravel() for x in labels])
    if fcfg.head_kind == "risk":
        thr = select_threshold(p, y.astype(np.int64))
        state.threshold = thr
        return f1_class((p >= thr).astype(np.int64), y.astype(np.int64), 1)
    return -rmse(p, y)


def finetune(tasks: list, params: Params, mcfg: ModelConfig,
             fcfg: FinetuneConfig):
    """Train head (and, unless frozen, the encoder) on the train split.

    Early stopping keeps the epoch with the best validation metric and
    restores it before returning.  Returns (state, trace) with trace rows
    (epoch, seconds, train_loss, val_metric).
    """
    train_tasks = [t for t in tasks if t.split == "train"]
    val_tasks = [t for t in tasks if t.split == "val"]
    if not train_tasks or not val_tasks:
        raise ConfigError("finetune needs non-empty train and val splits")
    if params.cfg != mcfg:
        raise ConfigError("checkpoint config differs from mcfg")
    state = init_finetune_state(params, mcfg, fcfg, train_tasks[0].scene)
    opt = T.init_opt_state(state)

    best_metric, best_epoch = -math.inf, -1
    best_values, best_threshold = None, 0.5
    trace = []
    for epoch in range(fcfg.epochs):
        t0 = time.perf_counter()
        erng = nd.stream(fcfg.seed, _R_EPOCH, epoch)
        order = erng.permutation(len(train_tasks))
        losses = []
        for start in range(0, len(order), fcfg.batch_size):
            batch = order[start:start + fcfg.batch_size]
            bb, hp = state.split_tensors()
            items = []
            for i in batch:
                task = train_tasks[int(i)]
                scene, label = task.scene, task.label
                if fcfg.augment:
                    fv, fh = bool(erng.integers(2)), bool(erng.integers(2))
                    scene = flip_scene(scene, fv, fh)
                    label = flip_label(label, fv, fh)
                coords = subsample_tokens(scene, fcfg.subsample, erng)
                if fcfg.freeze_encoder:
                    # frozen features never need gradients: keep the
                    # encoder forward off the tape entirely
                    fused = _fused_features(scene, state, bb, coords=coords)
                    items.append((nd.wrap(fused.data), scene, label, None))
                else:
                    items.append((None, scene, label, coords))
            with nd.Tape() as tape:
                loss = None
                for fused, scene, label, coords in items:
                    if fused is not None:
                        out = head_forward(fused, hp, scene, fcfg)
                    else:
                        out = _pixel_output(scene, state, bb, hp,
                                            coords=coords)
                    term = nd.scale(_loss_for(out, label, fcfg), 1 / len(batch))
                    loss = term if loss is None else nd.add(loss, term)
            losses.append(float(loss.item()))
            grads = tape.backward(loss)
            gdict = {}
            for k in state.values:
                kind, name = k.split("/", 1)
                gdict[k] = grads.of((bb if kind == "backbone" else hp)[name])
            T.clip_global_norm(gdict, fcfg.grad_clip)
            T.optimizer_step(state, gdict, opt, fcfg.lr, fcfg)
        metric = _val_metric(val_tasks, state)
        trace.append((epoch, time.perf_counter() - t0,
                      float(np.mean(losses)), metric))
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best_values = {k: v.copy() for k, v in state.values.items()}
            best_threshold = state.threshold
        elif epoch - best_epoch >= fcfg.patience:
            break
    state.values = best_values
    state.threshold = best_threshold
    return state, trace


# ---------------------------------------------------------------------------
# Evaluation protocols
# ---------------------------------------------------------------------------


def evaluate_risk(tasks: list, state: FinetuneState):
    """Threshold from the val split, metrics and maps from the test split.

    Returns (report dict, {task seed: probability map}).
    """
    if state.fcfg.head_kind != "risk":
        raise ConfigError("evaluate_risk needs a risk head")
    val = [t for t in tasks if t.split == "val"]
    test = [t for t in tasks if t.split == "test"]
    if not val or not test:
        raise ConfigError("risk evaluation needs val and test splits")
    vp = np.concatenate([predict(t.scene, state).ravel() for t in val])
    vy = np.concatenate([t.label.ravel() for t in val]).astype(np.int64)
    thr = select_threshold(vp, vy)
    state.threshold = thr
    maps = {t.seed: predict(t.scene, state) for t in test}
    p = np.concatenate([maps[t.seed].ravel() for t in test])
    y = np.concatenate([t.label.ravel() for t in test]).astype(np.int64)
    report = {
        "threshold": thr,
        "f1_event": f1_class((p >= thr).astype(np.int64), y, 1),
        "brier": brier(p, y),
        "rmse": rmse(p, y.astype(np.float64)),
        "n_test": len(test),
    }
    return report, maps


def evaluate_segmentation(tasks: list, state: FinetuneState,
                          split: str = "test") -> dict:
    sel = [t for t in tasks if t.split == split]
    if not sel:
        raise ConfigError(f"no {split} tasks to evaluate")
    p = np.concatenate([predict(t.scene, state).ravel() for t in sel])
    y = np.concatenate([t.label.ravel() for t in sel]).astype(np.int64)
    return {"miou": miou(p, y, state.fcfg.n_classes), "n": len(sel)}


def probe_time_shuffle(tasks: list, state: FinetuneState, seed: int = 0):
    """Metric on ordered vs time-shuffled test inputs.

    Scenes whose T is 1 are skipped (there is nothing to shuffle); the
    report counts them.
    """
    test = [t for t in tasks if t.split == "test"]
    ordered, shuffled, labels = [], [], []
    skipped = 0
    rng = nd.stream(seed, 0x5F)
    for t in test:
        sc, perm = shuffle_times(t.scene, rng)
        if perm is None:
            skipped += 1
            continue
        ordered.append(predict(t.scene, state))
        shuffled.append(predict(sc, state))
        labels.append(t.label)
    if not ordered:
        raise DataError("time-shuffle probe needs scenes with T >= 2")
    y = np.concatenate([x.ravel() for x in labels]).astype(np.int64)
    po = np.concatenate([x.ravel() for x in ordered])
    ps = np.concatenate([x.ravel() for x in shuffled])
    if state.fcfg.head_kind == "segmentation":
        mo, ms = miou(po, y, state.fcfg.n_classes), miou(ps, y,
                                                        state.fcfg.n_classes)
    else:
        thr = state.threshold
        mo = f1_class((po >= thr).astype(np.int64), y, 1)
        ms = f1_class((ps >= thr).astype(np.int64), y, 1)
    return {"ordered": mo, "shuffled": ms, "delta": mo - ms,
            "skipped_t1": skipped}


# ---------------------------------------------------------------------------
# State persistence
# ---------------------------------------------------------------------------


def save_finetune(path, state: FinetuneState) -> None:
    """Fine-tuned state on disk: array container plus a JSON sidecar.

    Arrays (trainable and frozen alike) go into the checkpoint container
    under "value/" / "frozen/" prefixes; everything non-array lands in
    `<path>.json`.
    """
    merged = {f"value/{k}": v for k, v in state.values.items()}
    merged.update({f"frozen/{k}": v for k, v in state.frozen.items()})
    M.save_checkpoint(path, Params(cfg=state.mcfg, values=merged,
                                   step=state.step))
    side = {
        "fcfg": asdict(state.fcfg),
        "taps": list(state.taps),
        "threshold": state.threshold,
        "step": state.step,
    }
    Path(str(path) + ".json").write_text(
        json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_finetune(path) -> FinetuneState:
    raw = M.load_checkpoint(path)
    values, frozen = {}, {}
    for k, arr in raw.values.items():
        kind, name = k.split("/", 1)
        if kind == "value":
            values[name] = arr
        elif kind == "frozen":
            frozen[name] = arr
        else:
            raise DataError(f"{path}: unexpected array namespace {kind!r}")
    side = json.loads(Path(str(path) + ".json").read_text())
    d = dict(side["fcfg"])
    d["subsample"] = SubsamplePolicy(**d["subsample"])
    for k in ("head_widths", "betas"):
        d[k] = tuple(d[k])
    if d["tap_layers"] is not None:
        d["tap_layers"] = tuple(d["tap_layers"])
    return FinetuneState(mcfg=raw.cfg, fcfg=FinetuneConfig(**d),
                         taps=tuple(side["taps"]), values=values,
                         frozen=frozen, step=int(side["step"]),
                         threshold=float(side["threshold"]))
