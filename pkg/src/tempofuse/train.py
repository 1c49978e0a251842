"""Pretraining loop: AdamW with decoupled decay, warmup+cosine schedule.

Every stochastic choice (batch composition, mask plans) draws from a
stream keyed by (seed, purpose, absolute step), so a run is a pure
function of (dataset, configs, seed) and resuming from a checkpoint
replays the uninterrupted trace: nothing depends on generator state
carried across steps, only on the step counter stored in the checkpoint.

Training is single-writer: one Params instance is mutated in place by one
loop.  Scene generation may run ahead concurrently (scenes are immutable);
this loop consumes whatever list it is handed.

Checkpoints persist model parameters and optimizer moments in one TFCK
container; moment arrays are namespaced under "optim/".  The loss trace is
a CSV of (step, lr, loss) rows written with full-precision reprs so reruns
are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tempofuse import model as M
from tempofuse import nd
from tempofuse.errors import ConfigError, NumericError
from tempofuse.masking import StrategyConfig, sample_plan
from tempofuse.model import ModelConfig, Params

__all__ = [
    "TrainConfig",
    "OptimState",
    "cosine_lr",
    "init_opt_state",
    "clip_global_norm",
    "optimizer_step",
    "pretrain",
    "save_state",
    "load_state",
    "write_trace",
    "read_trace",
]

# rng purpose codes
_R_BATCH, _R_PLAN = 1, 2


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200
    max_lr: float = 6.4e-4
    warmup_steps: int | None = None   # None: 5% of total_steps (at least 1)
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be positive")
        if self.max_lr <= 0 or self.eps <= 0 or self.grad_clip <= 0:
            raise ConfigError("max_lr, eps and grad_clip must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.resolved_warmup >= self.total_steps:
            raise ConfigError("warmup_steps must be < total_steps")

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, int(0.05 * self.total_steps))


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> max_lr, then half-cosine decay to 0 at total_steps."""
    if not (0 <= step <= cfg.total_steps):
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    w = cfg.resolved_warmup
    if step < w:
        return cfg.max_lr * step / w
    progress = (step - w) / (cfg.total_steps - w)
    return cfg.max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    moments: dict      # name -> [m, v] ndarrays shaped like the parameter
    t: int = 0


def init_opt_state(params: Params) -> OptimState:
    return OptimState(
        moments={k: [np.zeros_like(v), np.zeros_like(v)]
                 for k, v in params.values.items()},
        t=0,
    )


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is <= max_norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(sq)
    if norm > max_norm:
        s = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


def optimizer_step(params: Params, grads: dict, state: OptimState, lr: float,
                   cfg: TrainConfig) -> None:
    """One decoupled-weight-decay adaptive update, in place.

    Gradients must already be clipped; weight decay multiplies the
    parameter directly, outside the adaptive term.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.values.items():
        g = grads[name].astype(p.dtype, copy=False)
        m, v = state.moments[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new = p * (1.0 - lr * cfg.weight_decay) - lr * update
        if not np.all(np.isfinite(new)):
            raise NumericError(f"non-finite value in parameter {name!r}")
        params.values[name] = new.astype(p.dtype, copy=False)
    params.step += 1


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def pretrain(dataset: list, strategy_cfg: StrategyConfig,
             model_cfg: ModelConfig, train_cfg: TrainConfig,
             out_dir=None, resume: tuple | None = None):
    """Masked-token pretraining over a list of scenes.

    Returns (params, opt_state, trace) where trace rows are
    (step, lr, loss).  `resume` takes (params, opt_state) from load_state;
    the continued run replays exactly what the uninterrupted run would
    have produced from that step on.
    """
    if not dataset:
        raise ConfigError("pretraining dataset is empty")
    if resume is not None:
        params, opt = resume
        if params.cfg != model_cfg:
            raise ConfigError("resume checkpoint config differs from model_cfg")
    else:
        params = M.init_params(model_cfg, train_cfg.seed)
        opt = init_opt_state(params)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    trace = []
    for step in range(params.step, train_cfg.total_steps):
        lr = cosine_lr(step, train_cfg)
        batch_rng = nd.stream(train_cfg.seed, _R_BATCH, step)
        idx = batch_rng.integers(0, len(dataset), size=train_cfg.batch_size)
        pt = params.tensors()
        with nd.Tape() as tape:
            loss = None
            for j, i in enumerate(idx):
                scene = dataset[int(i)]
                plan_rng = nd.stream(train_cfg.seed, _R_PLAN, step, j)
                plan = sample_plan(scene, strategy_cfg, plan_rng)
                sc_loss, _ = M.forward_loss(scene, plan, model_cfg, pt)
                term = nd.scale(sc_loss, 1.0 / train_cfg.batch_size)
                loss = term if loss is None else nd.add(loss, term)
        loss_val = float(loss.item())
        if not math.isfinite(loss_val):
            raise NumericError(f"non-finite loss at step {step}")
        grads = tape.backward(loss)
        gdict = {k: grads.of(t) for k, t in pt.items()}
        clip_global_norm(gdict, train_cfg.grad_clip)
        optimizer_step(params, gdict, opt, lr, train_cfg)
        trace.append((step, lr, loss_val))
        if (out_dir is not None and train_cfg.checkpoint_every
                and (step + 1) % train_cfg.checkpoint_every == 0):
            save_state(out_dir / f"ckpt_{step + 1:06d}.tfck", params, opt)

    if out_dir is not None:
        save_state(out_dir / "ckpt_final.tfck", params, opt)
        write_trace(out_dir / "trace.csv", trace)
    return params, opt, trace


# ---------------------------------------------------------------------------
# State persistence
# ---------------------------------------------------------------------------


def eval_token_accuracy(dataset: list, params: Params,
                        strategy_cfg: StrategyConfig, seed: int,
                        plans_per_scene: int = 1) -> float:
    """Fraction of masked target tokens predicted exactly (argmax).

    Runs eagerly, no gradient recording.  The plan streams are keyed by
    (seed, scene index, plan index) so two models evaluated with the same
    seed see identical plans.
    """
    pt = params.tensors()
    hit = total = 0
    for si, scene in enumerate(dataset):
        for pi in range(plans_per_scene):
            plan = sample_plan(scene, strategy_cfg, nd.stream(seed, si, pi))
            _, info = M.forward_loss(scene, plan, params.cfg, pt)
            for _, logits, ids in info["groups"]:
                hit += int(np.sum(np.argmax(logits.data, axis=-1) == ids))
                total += len(ids)
    return hit / total


def save_state(path, params: Params, opt: OptimState | None = None) -> None:
    """One TFCK container holding parameters and (optionally) moments."""
    merged = dict(params.values)
    if opt is not None:
        if opt.t != params.step:
            raise ConfigError("optimizer step does not match parameter step")
        for k, (m, v) in opt.moments.items():
            merged[f"optim/m/{k}"] = m
            merged[f"optim/v/{k}"] = v
    M.save_checkpoint(path, Params(cfg=params.cfg, values=merged,
                                   step=params.step))


def load_state(path):
    """(params, opt_state or None) back from save_state."""
    raw = M.load_checkpoint(path)
    values, ms, vs = {}, {}, {}
    for k, arr in raw.values.items():
        if k.startswith("optim/m/"):
            ms[k[len("optim/m/"):]] = arr
        elif k.startswith("optim/v/"):
            vs[k[len("optim/v/"):]] = arr
        else:
            values[k] = arr
    params = Params(cfg=raw.cfg, values=values, step=raw.step)
    if not ms:
        return params, None
    if set(ms) != set(values) or set(vs) != set(values):
        raise ConfigError(f"{path}: optimizer moments do not cover parameters")
    opt = OptimState(moments={k: [ms[k], vs[k]] for k in values}, t=raw.step)
    return params, opt


def write_trace(path, trace: list) -> None:
    lines = ["step,lr,loss"]
    lines += [f"{s},{lr!r},{loss!r}" for s, lr, loss in trace]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> list:
    lines = Path(path).read_text().splitlines()
    out = []
    for row in lines[1:]:
        s, lr, loss = row.split(",")
        out.append((int(s), float(lr), float(loss)))
    return out
