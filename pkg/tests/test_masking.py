import numpy as np
import pytest
from scipy import stats

from tempofuse import nd
from tempofuse.errors import ConfigError
from tempofuse.masking import (
    CapacityError,
    MaskPlan,
    Strategy,
    StrategyConfig,
    StrategyError,
    dirichlet_allocate,
    partition_timestamps,
    read_plan,
    sample_plan,
    validate_plan,
    write_plan,
)
from tempofuse.scenes import Dynamics, ModalitySpec, SceneConfig, generate_scene


def scene(T=4, H=4, W=4, static=False):
    mods = [ModalitySpec("optical"), ModalitySpec("radar", rendering="inverted")]
    if static:
        mods.append(ModalitySpec("elevation", temporal=False))
    cfg = SceneConfig(H=H, W=W, T=T, patch_px=2, modalities=tuple(mods),
                      day_start=0, dynamics=Dynamics(kind="persistence"))
    return generate_scene(0, cfg)


# ---------------------------------------------------------------------------
# partition_timestamps
# ---------------------------------------------------------------------------


def test_partition_t2_exhaustive():
    rng = nd.stream(1, 0)
    seen = set()
    for _ in range(200):
        i, t = partition_timestamps(2, rng)
        seen.add((i, t))
    assert seen <= {((0,), (1,)), ((1,), (0,))}
    assert len(seen) == 2


def test_partition_sizes_uniform_chi2():
    rng = nd.stream(1, 1)
    counts = np.zeros(3)
    for _ in range(10_000):
        i, _ = partition_timestamps(4, rng)
        counts[len(i) - 1] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_partition_always_disjoint_and_complete():
    rng = nd.stream(1, 2)
    for _ in range(10_000):
        i, t = partition_timestamps(4, rng)
        assert set(i) & set(t) == set()
        assert set(i) | set(t) == {0, 1, 2, 3}
        assert i and t


def test_partition_rejects_t1():
    with pytest.raises(StrategyError):
        partition_timestamps(1, nd.stream(1, 3))


# ---------------------------------------------------------------------------
# dirichlet_allocate
# ---------------------------------------------------------------------------


def test_allocate_single_cell_and_zero_budget():
    rng = nd.stream(2, 0)
    np.testing.assert_array_equal(dirichlet_allocate(17, 1, 0.2, rng), [17])
    np.testing.assert_array_equal(dirichlet_allocate(0, 5, 0.2, rng), np.zeros(5))


def test_allocate_sums_to_budget():
    rng = nd.stream(2, 1)
    for _ in range(200):
        counts = dirichlet_allocate(37, 6, 0.2, rng)
        assert counts.sum() == 37
        assert np.all(counts >= 0)


def test_allocate_concentration_limit():
    rng = nd.stream(2, 2)
    for _ in range(20):
        counts = dirichlet_allocate(100, 4, 1e6, rng)
        assert np.all(np.abs(counts - 25) <= 2)


def test_allocate_small_alpha_is_skewed():
    rng = nd.stream(2, 3)
    maxima = [dirichlet_allocate(100, 8, 0.05, rng).max() for _ in range(50)]
    assert np.median(maxima) > 60  # most of the budget lands in few cells


def test_allocate_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        dirichlet_allocate(10, 4, 0.0, nd.stream(2, 4))
    with pytest.raises(ConfigError):
        dirichlet_allocate(10, 4, -1.0, nd.stream(2, 4))


# ---------------------------------------------------------------------------
# sample_plan per strategy
# ---------------------------------------------------------------------------


def test_rs_on_single_timestamp_scene():
    sc = scene(T=1)
    plan = sample_plan(sc, StrategyConfig(kind=Strategy.RS), nd.stream(3, 0))
    assert validate_plan(plan, sc) == []
    assert len(plan.input_tokens) > 0 and len(plan.target_tokens) > 0


def test_tds_rejects_single_timestamp():
    sc = scene(T=1)
    with pytest.raises(StrategyError):
        sample_plan(sc, StrategyConfig(kind=Strategy.TDS), nd.stream(3, 1))


@pytest.mark.parametrize("kind", [Strategy.RS, Strategy.TDS, Strategy.TDS_FUTURE,
                                  Strategy.CONSISTENT])
def test_ten_thousand_plans_have_zero_violations(kind):
    sc = scene(T=4, static=True)
    cfg = StrategyConfig(kind=kind)
    rng = nd.stream(4, hash(kind.value) % 1000)
    for _ in range(10_000):
        plan = sample_plan(sc, cfg, rng)
        errs = validate_plan(plan, sc)
        assert errs == [], errs


def test_tds_input_and_target_timestamps_never_shared():
    sc = scene(T=4)
    rng = nd.stream(4, 1)
    cfg = StrategyConfig(kind=Strategy.TDS)
    temporal = {0, 1}
    for _ in range(10_000):
        plan = sample_plan(sc, cfg, rng)
        in_ts = {t for m, t, c in plan.input_tokens.tolist() if m in temporal}
        tgt_ts = {t for m, t, c in plan.target_tokens.tolist()}
        assert in_ts & tgt_ts == set()


def test_tds_future_ordering():
    sc = scene(T=4)
    rng = nd.stream(4, 2)
    cfg = StrategyConfig(kind=Strategy.TDS_FUTURE)
    for _ in range(500):
        plan = sample_plan(sc, cfg, rng)
        assert max(plan.input_ts) < min(plan.target_ts)


def test_tds_future_plans_pass_tds_validation():
    sc = scene(T=4)
    rng = nd.stream(4, 3)
    cfg = StrategyConfig(kind=Strategy.TDS_FUTURE)
    for _ in range(200):
        plan = sample_plan(sc, cfg, rng)
        as_tds = MaskPlan(strategy=Strategy.TDS,
                          input_tokens=plan.input_tokens,
                          target_tokens=plan.target_tokens,
                          input_ts=plan.input_ts, target_ts=plan.target_ts)
        assert validate_plan(as_tds, sc) == []


def test_consistent_never_leaks_target_pairs():
    sc = scene(T=4, static=True)
    rng = nd.stream(4, 4)
    cfg = StrategyConfig(kind=Strategy.CONSISTENT)
    for _ in range(300):
        plan = sample_plan(sc, cfg, rng)
        tgt_pairs = {(t, c) for m, t, c in plan.target_tokens.tolist()}
        for m, t, c in plan.input_tokens.tolist():
            assert (t, c) not in tgt_pairs


def test_consistent_same_pairs_across_temporal_modalities():
    sc = scene(T=4)
    plan = sample_plan(sc, StrategyConfig(kind=Strategy.CONSISTENT), nd.stream(4, 5))
    by_mod = {}
    for m, t, c in plan.target_tokens.tolist():
        by_mod.setdefault(m, set()).add((t, c))
    assert len(set(map(frozenset, by_mod.values()))) == 1


def test_static_modality_enters_inputs_under_every_strategy():
    sc = scene(T=4, static=True)
    static_idx = 2
    for kind in Strategy:
        hits = 0
        rng = nd.stream(4, 100 + hash(kind.value) % 50)
        for _ in range(50):
            plan = sample_plan(sc, StrategyConfig(kind=kind), rng)
            if any(m == static_idx for m, t, c in plan.input_tokens.tolist()):
                hits += 1
            if kind != Strategy.RS:
                assert not any(
                    m == static_idx for m, t, c in plan.target_tokens.tolist())
        assert hits > 0, f"{kind} never placed static tokens in inputs"


def test_rs_per_timestamp_selection_balanced():
    sc = scene(T=4)
    rng = nd.stream(4, 6)
    cfg = StrategyConfig(kind=Strategy.RS, alpha=1e6)  # near-uniform allocation
    counts = np.zeros(4)
    n_draws = 400
    for _ in range(n_draws):
        plan = sample_plan(sc, cfg, rng)
        for m, t, c in plan.input_tokens.tolist():
            counts[t] += 1
    total = counts.sum()
    expect = total / 4
    sigma = np.sqrt(total * 0.25 * 0.75)
    assert np.all(np.abs(counts - expect) <= 3 * sigma)


def test_budget_resolution_and_capacity_error():
    sc = scene(T=2, H=2, W=2)  # 2 mods * 2 ts * 4 cells = 16 tokens
    cfg = StrategyConfig(kind=Strategy.RS, input_budget=12, target_budget=5)
    with pytest.raises(CapacityError):
        sample_plan(sc, cfg, nd.stream(5, 0))
    ok = StrategyConfig(kind=Strategy.RS, input_budget=12, target_budget=4)
    plan = sample_plan(sc, ok, nd.stream(5, 1))
    assert len(plan.input_tokens) == 12 and len(plan.target_tokens) == 4


def test_default_budgets_are_half_and_quarter():
    sc = scene(T=4)  # 2 * 4 * 16 = 128 tokens
    plan = sample_plan(sc, StrategyConfig(kind=Strategy.RS), nd.stream(5, 2))
    assert len(plan.input_tokens) == 64
    assert len(plan.target_tokens) == 32


# ---------------------------------------------------------------------------
# validate_plan on corrupted plans
# ---------------------------------------------------------------------------


def test_valid_tds_plan_is_clean():
    sc = scene(T=4)
    plan = sample_plan(sc, StrategyConfig(kind=Strategy.TDS), nd.stream(6, 0))
    assert validate_plan(plan, sc) == []


def test_shared_timestamp_yields_exactly_one_violation():
    sc = scene(T=4)
    plan = MaskPlan(
        strategy=Strategy.TDS,
        input_tokens=np.array([[0, 0, 1], [0, 2, 3]]),
        target_tokens=np.array([[0, 1, 5]]),
        input_ts=(0, 2), target_ts=(1, 2),   # timestamp 2 shared
    )
    errs = validate_plan(plan, sc)
    assert len(errs) == 1 and "timestamp 2" in errs[0]


def test_validator_catches_injected_corruptions():
    sc = scene(T=4, static=True)
    rng = nd.stream(6, 1)
    base = sample_plan(sc, StrategyConfig(kind=Strategy.TDS), rng)
    assert validate_plan(base, sc) == []

    def mutate(**kw):
        d = dict(strategy=base.strategy, input_tokens=base.input_tokens,
                 target_tokens=base.target_tokens, input_ts=base.input_ts,
                 target_ts=base.target_ts)
        d.update(kw)
        return MaskPlan(**d)

    corruptions = [
        mutate(input_tokens=np.zeros((0, 3), dtype=np.int64)),      # empty inputs
        mutate(target_tokens=np.zeros((0, 3), dtype=np.int64)),     # empty targets
        mutate(target_tokens=np.vstack([base.target_tokens,
                                        base.input_tokens[:1]])),   # overlap
        mutate(input_tokens=np.vstack([base.input_tokens,
                                       base.input_tokens[:1]])),    # duplicate
        mutate(input_tokens=np.array([[9, 0, 0]])),                 # bad modality
        mutate(input_tokens=np.array([[0, 9, 0]])),                 # bad timestamp
        mutate(input_tokens=np.array([[0, base.input_ts[0], 999]])),  # bad cell
        mutate(target_tokens=np.array([[2, 0, 0]])),                # static target
        mutate(input_ts=base.input_ts + (base.target_ts[0],)),      # shared ts
    ]
    for plan in corruptions:
        assert validate_plan(plan, sc) != []


def test_tds_future_violation_detected():
    sc = scene(T=4)
    plan = MaskPlan(
        strategy=Strategy.TDS_FUTURE,
        input_tokens=np.array([[0, 3, 0]]),
        target_tokens=np.array([[0, 1, 0]]),
        input_ts=(3,), target_ts=(1,),
    )
    errs = validate_plan(plan, sc)
    assert any("precede" in e for e in errs)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_plan_round_trip(tmp_path):
    sc = scene(T=4, static=True)
    for kind in Strategy:
        plan = sample_plan(sc, StrategyConfig(kind=kind), nd.stream(7, 0))
        p = tmp_path / f"{kind.value}.plan"
        write_plan(p, plan)
        back = read_plan(p)
        assert back.strategy == plan.strategy
        assert back.input_ts == plan.input_ts
        assert back.target_ts == plan.target_ts
        np.testing.assert_array_equal(back.input_tokens, plan.input_tokens)
        np.testing.assert_array_equal(back.target_tokens, plan.target_tokens)
