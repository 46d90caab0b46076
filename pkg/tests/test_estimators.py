import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlpf.estimators import (
    Allocation,
    LevelEstimates,
    SignedLog,
    allocate_section4,
    allocate_section5,
    filter_ml_estimate,
    mlmc_case,
    nc_ml_biased,
    nc_ml_unbiased,
    nc_single_level,
    signed_logsumexp,
)


def _random_signed(rng, size):
    return [SignedLog(int(s), float(a)) for s, a in zip(rng.choice([-1, 1], size), rng.uniform(-700, 700, size))]


def test_signed_log_canonical_zero():
    z = SignedLog(1, -math.inf)
    assert z.sign == 0 and z == SignedLog.zero()
    assert SignedLog(0, 5.0).log_abs == -math.inf
    assert float(SignedLog.zero()) == 0.0
    with pytest.raises(ValueError):
        SignedLog(2, 0.0)


def test_signed_log_arithmetic_examples():
    a, b = SignedLog.from_float(3.0), SignedLog.from_float(-5.0)
    assert float(a + b) == pytest.approx(-2.0)
    assert float(a - b) == pytest.approx(8.0)
    assert float(a * b) == pytest.approx(-15.0)
    assert (a - a) == SignedLog.zero()
    assert float(a.scaled(math.log(2))) == pytest.approx(6.0)
    big = SignedLog(1, 1000.0)
    assert (big + big).log_abs == pytest.approx(1000.0 + math.log(2))


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_signed_log_float_roundtrip(x):
    back = float(SignedLog.from_float(x))
    assert back == pytest.approx(x, rel=1e-12, abs=0)


def test_signed_log_associative_and_distributive():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        a, b, c = _random_signed(rng, 3)
        assert ((a + b) + c).isclose(a + (b + c), 1e-12)
        assert (a * (b + c)).isclose(a * b + a * c, 1e-12)


def test_signed_logsumexp_matches_float_sum():
    rng = np.random.default_rng(1)
    for _ in range(200):
        vals = rng.normal(size=5) * 10
        s = signed_logsumexp(np.log(np.abs(vals)), np.sign(vals).astype(int))
        assert float(s) == pytest.approx(vals.sum(), rel=1e-10, abs=1e-12)
    assert signed_logsumexp([], []) == SignedLog.zero()
    with pytest.raises(OverflowError):
        signed_logsumexp([math.inf], [1])


def _levels(values):
    """values: [p0, (f1, c1), (f2, c2), ...] as log evidences."""
    out = [LevelEstimates(0, 10, values[0], None, np.array([0.5]), 10)]
    for l, (f, c) in enumerate(values[1:], start=1):
        out.append(LevelEstimates(l, 10, f, c, np.array([0.1 * l]), 10))
    return out


def test_single_level_examples():
    assert nc_single_level([math.log(0.3)] * 4) == pytest.approx(4 * math.log(0.3))
    with pytest.raises(ValueError):
        nc_single_level([])


def test_unbiased_level_zero_is_single_level_bitwise():
    trace = [-1.25, -0.5, -2.0]
    p0 = nc_single_level(trace)
    v = nc_ml_unbiased(_levels([p0]))
    assert v.sign == 1 and v.log_abs == p0


def test_unbiased_perfect_coupling_collapses():
    v = nc_ml_unbiased(_levels([-3.0, (-7.0, -7.0), (-2.0, -2.0)]))
    assert v.isclose(SignedLog.from_log(-3.0))


def test_unbiased_can_be_negative():
    v = nc_ml_unbiased(_levels([math.log(0.1), (math.log(0.2), math.log(0.5))]))
    assert v.sign == -1
    assert float(v) == pytest.approx(-0.2)


def test_biased_examples():
    assert nc_ml_biased(_levels([-3.0])) == -3.0
    assert nc_ml_biased(_levels([-3.0, (-7.0, -7.0), (-1.0, -1.0)])) == -3.0
    assert nc_ml_biased(_levels([-3.0, (-2.0, -2.5)])) == pytest.approx(-2.5)
    with pytest.raises(ValueError):
        nc_ml_biased(_levels([-3.0, (-math.inf, -1.0)]))


def test_level_sequence_checks():
    lv = _levels([-1.0, (-1.0, -1.0)])
    with pytest.raises(ValueError):
        nc_ml_unbiased(lv[1:])
    lv[1].log_nc_coarse = None
    with pytest.raises(ValueError):
        nc_ml_biased(lv)


def test_filter_ml_estimate():
    lv = _levels([-1.0, (-1.0, -1.0), (-1.0, -1.0)])
    assert filter_ml_estimate(lv) == pytest.approx(0.5 + 0.1 + 0.2)
    assert filter_ml_estimate(lv[:1]) == 0.5


def test_level_cost():
    assert LevelEstimates.level_cost(0, 32, 10) == 320
    assert LevelEstimates.level_cost(1, 16, 10) == 480
    assert LevelEstimates.level_cost(2, 8, 10) == 480


def test_section5_examples():
    assert allocate_section5(2, 2, 1).N == (32, 16, 8)
    assert allocate_section5(1, 1, 1).N == (4, 2)
    assert allocate_section5(1, 1, 1).rule == "section5"


@given(st.integers(1, 20), st.sampled_from([1, 2]))
def test_section5_monotone(L, beta):
    a = allocate_section5(L, beta)
    assert all(x >= y for x, y in zip(a.N, a.N[1:]))
    assert min(a.N) >= 1
    assert a == allocate_section5(L, beta)


def test_section5_guards():
    with pytest.raises(OverflowError):
        allocate_section5(21, 2)
    with pytest.raises(ValueError):
        allocate_section5(2, 3)
    with pytest.raises(ValueError):
        allocate_section5(2, 2, gamma=2)


def test_section4_example():
    a = allocate_section4(0.5, 1.0)
    assert a.L == 1
    assert a.N == (8, 5)
    with pytest.raises(ValueError):
        allocate_section4(1.0)
    with pytest.raises(ValueError):
        allocate_section4(0.5, 0.0)


@given(st.floats(1e-4, 0.99), st.floats(1e-6, 10))
def test_section4_counts_positive(eps, C):
    a = allocate_section4(eps, C)
    assert a.L == math.ceil(math.log2(1 / eps))
    assert min(a.N) >= 1
    assert all(x >= y for x, y in zip(a.N, a.N[1:]))


def test_allocation_validation_and_cost():
    with pytest.raises(ValueError):
        Allocation(1, (1, 2), "x")
    with pytest.raises(ValueError):
        Allocation(1, (1,), "x")
    with pytest.raises(ValueError):
        Allocation(0, (0,), "x")
    assert Allocation(2, (32, 16, 8), "x").cost(10) == 1280
    assert Allocation(1, (10, 3), "x").scaled(0.25).N == (2, 1)


def test_mlmc_cases():
    c = mlmc_case(2, 1)
    assert (c.label, c.cost_exponent, c.log_power) == ("beta_gt_gamma", 2.0, 0)
    c = mlmc_case(1, 1)
    assert (c.label, c.cost_exponent, c.log_power) == ("beta_eq_gamma", 2.0, 2)
    c = mlmc_case(1, 2)
    assert (c.label, c.cost_exponent) == ("beta_lt_gamma", 3.0)
    with pytest.raises(ValueError):
        mlmc_case(0, 1)
