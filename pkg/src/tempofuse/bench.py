"""Runtime scaling of the two encoding strategies.

Full temporal attention puts every frame in one attention context, so its
cost grows roughly quadratically with the number of timestamps; per-frame
encoding with feature fusion grows roughly linearly.  This module
measures both and fits the log-log exponent.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as M
from .errors import ConfigError, DataError
from .model import ModelConfig
from .scenes import Dynamics, ModalitySpec, SceneConfig, generate_scene

__all__ = [
    "BenchConfig", "TimingTable", "single_threaded", "time_forward",
    "fit_exponent", "write_table", "read_table", "write_scatter",
    "run_scaling",
]

VARIANTS = ("temporal", "late_fusion")


@dataclass(frozen=True)
class BenchConfig:
    t_values: tuple = (1, 2, 4, 8, 16)
    reps: int = 50
    warmup: int = 3
    batch: int = 8
    H: int = 12
    W: int = 12
    d_model: int = 32
    n_heads: int = 4
    enc_layers: int = 2
    vocab: int = 16
    seed: int = 0
    single_thread: bool = True   # False: multi-threaded, not comparable

    def __post_init__(self):
        if not self.t_values or any(t < 1 for t in self.t_values):
            raise ConfigError("t_values must be >= 1")
        if list(self.t_values) != sorted(set(self.t_values)):
            raise ConfigError("t_values must be strictly increasing")
        if self.reps < 10:
            raise ConfigError("reps must be >= 10")
        if self.warmup < 0 or self.batch < 1:
            raise ConfigError("warmup must be >= 0, batch >= 1")


@dataclass(frozen=True)
class TimingTable:
    variant: str
    rows: tuple     # (T, mean_ms, std_ms, reps)

    def __post_init__(self):
        ts = [r[0] for r in self.rows]
        if ts != sorted(set(ts)):
            raise DataError("table rows must be strictly increasing in T")
        if any(r[3] < 10 for r in self.rows):
            raise DataError("every row needs reps >= 10")


@contextmanager
def single_threaded(enabled: bool = True):
    """Pin BLAS pools to one thread for stable timing exponents."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _bench_scenes(T: int, cfg: BenchConfig) -> list:
    scfg = SceneConfig(
        H=cfg.H, W=cfg.W, T=T, patch_px=2,
        modalities=(ModalitySpec("optical", vocab_size=cfg.vocab),),
        dynamics=Dynamics(kind="persistence"),
        day_start=0, day_step=31,
    )
    return [generate_scene(cfg.seed + i, scfg) for i in range(cfg.batch)]


def _median_of_means(per_rep_ms: np.ndarray, groups: int = 5) -> float:
    g = min(groups, len(per_rep_ms))
    chunks = np.array_split(per_rep_ms, g)
    return float(np.median([c.mean() for c in chunks]))


def time_forward(variant: str, cfg: BenchConfig) -> TimingTable:
    """Wall-clock per batch forward pass, one row per T.

    No gradients are recorded; `warmup` initial passes per T are thrown
    away.  The reported mean is a median of rep-group means, which keeps
    one preempted repetition from skewing the row.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; pick from {VARIANTS}")
    rows = []
    with single_threaded(cfg.single_thread):
        for T in cfg.t_values:
            scenes = _bench_scenes(T, cfg)
            mcfg = ModelConfig.for_scene(
                scenes[0], d_model=cfg.d_model, n_heads=cfg.n_heads,
                enc_layers=cfg.enc_layers, dec_layers=1, dtype="f32")
            pt = M.init_params(mcfg, cfg.seed).tensors()
            coords = [M.all_token_coords(s) for s in scenes]

            def one_pass():
                for s, c in zip(scenes, coords):
                    if variant == "temporal":
                        M.encode(s, c, pt, mcfg)
                    else:
                        M.late_fusion_encode(s, c, pt, mcfg)

            for _ in range(cfg.warmup):
                one_pass()
            per_rep = np.empty(cfg.reps)
            for r in range(cfg.reps):
                t0 = time.perf_counter()
                one_pass()
                per_rep[r] = (time.perf_counter() - t0) * 1e3
            rows.append((T, _median_of_means(per_rep),
                         float(per_rep.std()), cfg.reps))
    return TimingTable(variant=variant, rows=tuple(rows))


def fit_exponent(table: TimingTable) -> float:
    """Least-squares slope of log(time) against log(T)."""
    if len(table.rows) < 4:
        raise DataError("exponent fit needs >= 4 rows")
    ts = np.array([r[0] for r in table.rows], dtype=np.float64)
    ms = np.array([r[1] for r in table.rows], dtype=np.float64)
    if ts.max() / ts.min() < 4.0:
        raise DataError("T values must span at least a factor of 4")
    if (ms <= 0).any() or not np.all(np.isfinite(ms)):
        raise DataError("timings must be positive and finite")
    slope, _ = np.polyfit(np.log(ts), np.log(ms), 1)
    return float(slope)


def run_scaling(cfg: BenchConfig) -> dict:
    """Both variants timed on the same grid; exponents included."""
    out = {}
    for variant in VARIANTS:
        table = time_forward(variant, cfg)
        out[variant] = {"table": table, "exponent": fit_exponent(table)}
    return out


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def write_table(path, table: TimingTable) -> None:
    lines = ["T,mean_ms,std_ms,reps"]
    lines += [f"{t},{m!r},{s!r},{n}" for t, m, s, n in table.rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path, variant: str = "") -> TimingTable:
    lines = Path(path).read_text().splitlines()
    rows = []
    for row in lines[1:]:
        t, m, s, n = row.split(",")
        rows.append((int(t), float(m), float(s), int(n)))
    return TimingTable(variant=variant, rows=tuple(rows))


def write_scatter(path, table: TimingTable) -> None:
    """Bare x,y pairs (T, mean ms) for external plotting."""
    lines = [f"{t} {m!r}" for t, m, _, _ in table.rows]
    Path(path).write_text("\n".join(lines) + "\n")
