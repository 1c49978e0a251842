import numpy as np
import pytest

from tempofuse import bench as B
from tempofuse.errors import ConfigError, DataError


def synthetic_table(exponent, c=2.0, ts=(1, 2, 4, 8, 16)):
    rows = tuple((t, c * t ** exponent, 0.0, 10) for t in ts)
    return B.TimingTable(variant="synthetic", rows=rows)


def test_fit_recovers_linear():
    assert B.fit_exponent(synthetic_table(1.0)) == pytest.approx(1.0, abs=0.01)


def test_fit_recovers_quadratic():
    assert B.fit_exponent(synthetic_table(2.0)) == pytest.approx(2.0, abs=0.01)


def test_fit_recovers_fractional():
    assert B.fit_exponent(synthetic_table(1.37)) == pytest.approx(1.37,
                                                                 abs=0.01)


def test_fit_rejects_degenerate_tables():
    with pytest.raises(DataError):
        B.fit_exponent(synthetic_table(1.0, ts=(1, 2, 4)))       # too few
    with pytest.raises(DataError):
        B.fit_exponent(synthetic_table(1.0, ts=(4, 5, 6, 7)))    # small span
    rows = tuple((t, 0.0, 0.0, 10) for t in (1, 2, 4, 8))
    with pytest.raises(DataError):
        B.fit_exponent(B.TimingTable(variant="x", rows=rows))


def test_table_invariants():
    with pytest.raises(DataError):
        B.TimingTable(variant="x", rows=((2, 1.0, 0.0, 10), (1, 1.0, 0.0, 10)))
    with pytest.raises(DataError):
        B.TimingTable(variant="x", rows=((1, 1.0, 0.0, 9),))


def test_config_validation():
    with pytest.raises(ConfigError):
        B.BenchConfig(reps=9)
    with pytest.raises(ConfigError):
        B.BenchConfig(t_values=(4, 2, 1))
    with pytest.raises(ConfigError):
        B.BenchConfig(t_values=())
    with pytest.raises(ConfigError):
        B.BenchConfig(batch=0)


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        B.time_forward("both", B.BenchConfig())


def test_median_of_means_robust_to_outlier():
    clean = np.full(50, 10.0)
    clean[3] = 500.0   # one preempted rep
    assert B._median_of_means(clean) == pytest.approx(10.0, rel=0.2)


@pytest.mark.slow
def test_variants_agree_at_t1_and_grow():
    cfg = B.BenchConfig(t_values=(1, 2, 4, 8), reps=20, warmup=2, batch=2,
                        H=8, W=8)
    tables = {v: B.time_forward(v, cfg) for v in B.VARIANTS}
    a = tables["temporal"].rows[0][1]
    b = tables["late_fusion"].rows[0][1]
    # a single-day scene takes the exact same code path in both variants
    assert abs(a - b) / max(a, b) < 0.10
    for table in tables.values():
        means = [r[1] for r in table.rows]
        assert all(y > x for x, y in zip(means, means[1:]))


def test_table_round_trip(tmp_path):
    t = synthetic_table(1.5)
    B.write_table(tmp_path / "t.csv", t)
    back = B.read_table(tmp_path / "t.csv", variant="synthetic")
    assert back == t
    B.write_scatter(tmp_path / "s.txt", t)
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("1 ")
