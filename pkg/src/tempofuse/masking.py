"""Mask-plan sampling: which tokens a model sees and which it must predict.

Four strategies:

  RS           random over every (modality, timestamp, cell) token
  TDS          timestamps split into disjoint non-empty input/target sets;
               the input size is uniform over {1..T-1}
  TDS_FUTURE   a TDS split where every input timestamp precedes every
               target timestamp
  CONSISTENT   input/target (timestamp, cell) pairs shared across
               modalities, so no modality leaks a target coordinate

Token counts are spread over (modality x timestamp) cells by a symmetric
Dirichlet(alpha) draw, rounded to integers by largest remainder and
clipped to per-cell capacity with deterministic redistribution of the
excess.  Static (single-frame) modalities are always eligible as inputs;
under the TDS variants and CONSISTENT they are never targets, since they
sit outside the timestamp partition.

Budgets default to 50% of the scene's tokens as inputs and 25% as targets
(the rest are dropped).  When a particular timestamp partition cannot
absorb a requested budget, the budget is clipped to the partition's
capacity; a budget that exceeds the whole scene raises CapacityError.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from tempofuse.errors import ConfigError, DataError, TempofuseError
from tempofuse.scenes import Scene

__all__ = [
    "Strategy",
    "StrategyConfig",
    "MaskPlan",
    "CapacityError",
    "StrategyError",
    "partition_timestamps",
    "dirichlet_allocate",
    "sample_plan",
    "validate_plan",
    "write_plan",
    "read_plan",
]


class CapacityError(TempofuseError):
    """Requested token budgets exceed what the scene can provide."""


class StrategyError(TempofuseError):
    """Strategy is undefined for the given scene (e.g. TDS with T < 2)."""


class Strategy(str, Enum):
    RS = "RS"
    TDS = "TDS"
    TDS_FUTURE = "TDS_FUTURE"
    CONSISTENT = "CONSISTENT"


@dataclass(frozen=True)
class StrategyConfig:
    kind: Strategy = Strategy.TDS
    alpha: float = 0.2
    input_budget: int | None = None   # token count; None -> input_frac
    target_budget: int | None = None
    input_frac: float = 0.50
    target_frac: float = 0.25

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("dirichlet alpha must be > 0")
        for b in (self.input_budget, self.target_budget):
            if b is not None and b < 1:
                raise ConfigError("explicit budgets must be >= 1")
        for f in (self.input_frac, self.target_frac):
            if not (0.0 < f < 1.0):
                raise ConfigError("budget fractions must lie in (0, 1)")


@dataclass
class MaskPlan:
    """A partition of scene tokens into encoder inputs and decoder targets.

    Coordinates are (modality_idx, t_idx, cell) rows; t_idx is 0 for static
    modalities.  input_ts/target_ts are the timestamp index sets the
    strategy committed to (empty tuples for strategies without timestamp
    structure on that side).
    """

    strategy: Strategy
    input_tokens: np.ndarray    # (n_in, 3) i64
    target_tokens: np.ndarray   # (n_tgt, 3) i64
    input_ts: tuple
    target_ts: tuple

    def input_set(self) -> set:
        return set(map(tuple, self.input_tokens.tolist()))

    def target_set(self) -> set:
        return set(map(tuple, self.target_tokens.tolist()))


# ---------------------------------------------------------------------------
# Primitive samplers
# ---------------------------------------------------------------------------


def partition_timestamps(T: int, rng: np.random.Generator) -> tuple:
    """Disjoint, non-empty (input_ts, target_ts) covering range(T).

    |input_ts| is uniform over {1..T-1}; membership is a uniform
    without-replacement draw.
    """
    if T < 2:
        raise StrategyError(f"timestamp partition needs T >= 2, got {T}")
    n_in = int(rng.integers(1, T))
    chosen = rng.choice(T, size=n_in, replace=False)
    mask = np.zeros(T, dtype=bool)
    mask[chosen] = True
    return tuple(np.flatnonzero(mask)), tuple(np.flatnonzero(~mask))


def _largest_remainder(raw: np.ndarray, total: int) -> np.ndarray:
    """Integer rounding of non-negative `raw` (summing ~total) to exactly total."""
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")  # ties -> lower index
        base[order[:short]] += 1
    return base


def dirichlet_allocate(budget: int, k: int, alpha: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Integer split of `budget` over k cells by a symmetric Dirichlet draw."""
    if alpha <= 0:
        raise ConfigError("dirichlet alpha must be > 0")
    if k < 1:
        raise ConfigError("need at least one cell")
    if budget < 0:
        raise ConfigError("budget must be >= 0")
    if budget == 0:
        return np.zeros(k, dtype=np.int64)
    if k == 1:
        return np.array([budget], dtype=np.int64)
    w = rng.dirichlet(np.full(k, float(alpha)))
    return _largest_remainder(w * budget, budget)


def _fit_capacities(counts: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Clip counts to caps, redistributing the excess to cells with room.

    Deterministic: redistribution is proportional to remaining capacity with
    largest-remainder rounding.  Raises CapacityError when the total budget
    exceeds sum(caps).
    """
    counts = counts.astype(np.int64).copy()
    total = int(counts.sum())
    if total > int(caps.sum()):
        raise CapacityError(f"budget {total} exceeds capacity {int(caps.sum())}")
    for _ in range(len(counts) + 1):
        over = np.maximum(counts - caps, 0)
        excess = int(over.sum())
        counts = np.minimum(counts, caps)
        if excess == 0:
            return counts
        free = caps - counts
        w = free / free.sum()
        counts += _largest_remainder(w * excess, excess)
    raise AssertionError("capacity redistribution failed to converge")


# ---------------------------------------------------------------------------
# Plan sampling
# ---------------------------------------------------------------------------


def _resolve_budgets(scene: Scene, cfg: StrategyConfig) -> tuple:
    total = scene.n_tokens()
    n_in = cfg.input_budget if cfg.input_budget is not None else max(
        1, int(total * cfg.input_frac))
    n_tgt = cfg.target_budget if cfg.target_budget is not None else max(
        1, int(total * cfg.target_frac))
    if n_in + n_tgt > total:
        raise CapacityError(
            f"budgets {n_in}+{n_tgt} exceed the scene's {total} tokens")
    return n_in, n_tgt


def _choose_in_cells(cells: list, counts: np.ndarray, free: dict,
                     rng: np.random.Generator) -> list:
    """Uniform without-replacement coordinate choice inside each cell."""
    rows = []
    for (m, t), c in zip(cells, counts):
        if c == 0:
            continue
        pool = free[(m, t)]
        pick = rng.choice(len(pool), size=int(c), replace=False)
        chosen = pool[pick]
        rows.extend((m, t, int(cell)) for cell in chosen)
        keep = np.ones(len(pool), dtype=bool)
        keep[pick] = False
        free[(m, t)] = pool[keep]
    return rows


def _rows_to_array(rows: list) -> np.ndarray:
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array(sorted(rows), dtype=np.int64)


def sample_plan(scene: Scene, cfg: StrategyConfig,
                rng: np.random.Generator) -> MaskPlan:
    n_in, n_tgt = _resolve_budgets(scene, cfg)
    hw = scene.H * scene.W
    temporal = [i for i, m in enumerate(scene.modalities) if m.temporal]
    static = [i for i, m in enumerate(scene.modalities) if not m.temporal]

    if cfg.kind == Strategy.RS:
        in_cells = [(m, t) for m in temporal for t in range(scene.T)]
        in_cells += [(m, 0) for m in static]
        tgt_cells = in_cells
        input_ts, target_ts = (), ()
    elif cfg.kind in (Strategy.TDS, Strategy.TDS_FUTURE):
        if not temporal or scene.T < 2:
            raise StrategyError(
                f"{cfg.kind.value} needs >= 2 timestamps on a temporal modality")
        if cfg.kind == Strategy.TDS:
            input_ts, target_ts = partition_timestamps(scene.T, rng)
        else:
            cut = int(rng.integers(1, scene.T))
            input_ts = tuple(range(cut))
            target_ts = tuple(range(cut, scene.T))
        in_cells = [(m, t) for m in temporal for t in input_ts]
        in_cells += [(m, 0) for m in static]
        tgt_cells = [(m, t) for m in temporal for t in target_ts]
    else:
        return _sample_consistent(scene, cfg, rng, n_in, n_tgt)

    free = {}
    for m, t in set(in_cells) | set(tgt_cells):
        free[(m, t)] = np.arange(hw)

    in_caps = np.array([len(free[c]) for c in in_cells])
    n_in_eff = min(n_in, int(in_caps.sum()))
    in_counts = _fit_capacities(
        dirichlet_allocate(n_in_eff, len(in_cells), cfg.alpha, rng), in_caps)
    in_rows = _choose_in_cells(in_cells, in_counts, free, rng)

    tgt_caps = np.array([len(free[c]) for c in tgt_cells])
    n_tgt_eff = min(n_tgt, int(tgt_caps.sum()))
    tgt_counts = _fit_capacities(
        dirichlet_allocate(n_tgt_eff, len(tgt_cells), cfg.alpha, rng), tgt_caps)
    tgt_rows = _choose_in_cells(tgt_cells, tgt_counts, free, rng)

    return MaskPlan(
        strategy=cfg.kind,
        input_tokens=_rows_to_array(in_rows),
        target_tokens=_rows_to_array(tgt_rows),
        input_ts=tuple(map(int, input_ts)),
        target_ts=tuple(map(int, target_ts)),
    )


def _sample_consistent(scene: Scene, cfg: StrategyConfig,
                       rng: np.random.Generator, n_in: int,
                       n_tgt: int) -> MaskPlan:
    """Shared (timestamp, cell) pairs across modalities.

    Budgets are interpreted per expanded token: a chosen pair contributes
    one token in every temporal modality, so pair counts are the budgets
    divided by the number of temporal modalities (rounded, at least 1).
    The static modality receives the input pairs at timestamp 0.
    """
    hw = scene.H * scene.W
    temporal = [i for i, m in enumerate(scene.modalities) if m.temporal]
    static = [i for i, m in enumerate(scene.modalities) if not m.temporal]
    if not temporal:
        raise StrategyError("CONSISTENT needs at least one temporal modality")
    mt = len(temporal)
    n_pairs_total = scene.T * hw
    pairs_tgt = min(max(1, round(n_tgt / mt)), n_pairs_total - 1)
    pairs_in = min(max(1, round(n_in / mt)), n_pairs_total - pairs_tgt)

    # allocate pairs over timestamps; targets first, inputs take what's left
    caps = np.full(scene.T, hw, dtype=np.int64)
    tgt_counts = _fit_capacities(
        dirichlet_allocate(pairs_tgt, scene.T, cfg.alpha, rng), caps)
    in_counts = _fit_capacities(
        dirichlet_allocate(pairs_in, scene.T, cfg.alpha, rng), caps - tgt_counts)

    in_rows, tgt_rows = [], []
    for t in range(scene.T):
        k = int(in_counts[t] + tgt_counts[t])
        if k == 0:
            continue
        cells = rng.choice(hw, size=k, replace=False)
        in_cells_t = cells[: int(in_counts[t])]
        tgt_cells_t = cells[int(in_counts[t]):]
        for m in temporal:
            in_rows.extend((m, t, int(c)) for c in in_cells_t)
            tgt_rows.extend((m, t, int(c)) for c in tgt_cells_t)
        # the static frame shares the t=0 spatial pattern; its cells are
        # disjoint from t=0 targets by construction
        if t == 0:
            for m in static:
                in_rows.extend((m, 0, int(c)) for c in in_cells_t)

    return MaskPlan(
        strategy=Strategy.CONSISTENT,
        input_tokens=_rows_to_array(in_rows),
        target_tokens=_rows_to_array(tgt_rows),
        input_ts=(),
        target_ts=(),
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_plan(plan: MaskPlan, scene: Scene) -> list:
    """Every violated invariant as a human-readable string; [] iff valid."""
    v = []
    hw = scene.H * scene.W
    temporal = {i for i, m in enumerate(scene.modalities) if m.temporal}

    if len(plan.input_tokens) == 0:
        v.append("input token set is empty")
    if len(plan.target_tokens) == 0:
        v.append("target token set is empty")

    for label, arr in (("input", plan.input_tokens), ("target", plan.target_tokens)):
        for m, t, c in arr.tolist():
            if not (0 <= m < len(scene.modalities)):
                v.append(f"{label} token references modality {m} out of range")
            elif not (0 <= t < (scene.T if m in temporal else 1)):
                v.append(f"{label} token at modality {m} has timestamp {t} out of range")
            elif not (0 <= c < hw):
                v.append(f"{label} token cell {c} out of range")
        rows = set(map(tuple, arr.tolist()))
        if len(rows) != len(arr):
            v.append(f"duplicate coordinates in {label} set")

    overlap = plan.input_set() & plan.target_set()
    if overlap:
        v.append(f"{len(overlap)} coordinates appear as both input and target")

    if plan.strategy in (Strategy.TDS, Strategy.TDS_FUTURE):
        shared = set(plan.input_ts) & set(plan.target_ts)
        for t in sorted(shared):
            v.append(f"timestamp {t} appears in both input_ts and target_ts")
        if not plan.input_ts:
            v.append("input_ts is empty")
        if not plan.target_ts:
            v.append("target_ts is empty")
        for m, t, c in plan.input_tokens.tolist():
            if m in temporal and t not in plan.input_ts:
                v.append(f"input token at undeclared timestamp {t}")
                break
        for m, t, c in plan.target_tokens.tolist():
            if m not in temporal:
                v.append("static modality token used as target under a TDS variant")
                break
            if t not in plan.target_ts:
                v.append(f"target token at undeclared timestamp {t}")
                break
        if (plan.strategy == Strategy.TDS_FUTURE and plan.input_ts and
                plan.target_ts and max(plan.input_ts) >= min(plan.target_ts)):
            v.append("an input timestamp does not precede every target timestamp")

    if plan.strategy == Strategy.CONSISTENT:
        tgt_pairs = {(t, c) for m, t, c in plan.target_tokens.tolist()}
        for m, t, c in plan.input_tokens.tolist():
            if (t, c) in tgt_pairs:
                v.append(
                    f"input token (modality {m}) at pair ({t},{c}) leaks a "
                    f"target coordinate")
    return v


# ---------------------------------------------------------------------------
# Plan serialization (debugging aid)
# ---------------------------------------------------------------------------


def write_plan(path, plan: MaskPlan) -> None:
    lines = [
        "#tempofuse-plan v1 strategy={} input_ts={} target_ts={}".format(
            plan.strategy.value,
            ",".join(map(str, plan.input_ts)) or "-",
            ",".join(map(str, plan.target_ts)) or "-",
        )
    ]
    for role, arr in (("input", plan.input_tokens), ("target", plan.target_tokens)):
        lines.extend(f"{role} {m} {t} {c}" for m, t, c in arr.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_plan(path) -> MaskPlan:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#tempofuse-plan v1 "):
        raise DataError(f"{path}: not a mask plan file")
    fields = dict(kv.split("=", 1) for kv in text[0].split()[2:])
    parse_ts = lambda s: () if s == "-" else tuple(int(x) for x in s.split(","))
    ins, tgts = [], []
    for line_no, line in enumerate(text[1:], 2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in ("input", "target"):
            raise DataError(f"{path}:{line_no}: bad plan record")
        (ins if parts[0] == "input" else tgts).append(tuple(map(int, parts[1:])))
    return MaskPlan(
        strategy=Strategy(fields["strategy"]),
        input_tokens=_rows_to_array(ins),
        target_tokens=_rows_to_array(tgts),
        input_ts=parse_ts(fields["input_ts"]),
        target_ts=parse_ts(fields["target_ts"]),
    )
