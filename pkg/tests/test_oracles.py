import json
import math

import numpy as np
import pytest

from mlpf.discretization import Level
from mlpf.models import get_model
from mlpf.oracles import (
    KalmanState,
    LinearGaussianSSM,
    data_hash,
    euler_ou_ssm,
    exact_ou_ssm,
    gbm_filter_mean,
    gbm_log_ssm,
    kalman_filter,
    kalman_step,
    load_reference,
    model_ssm,
    reference_pf,
    truth_for,
)


def test_conjugate_step():
    ssm = LinearGaussianSSM(1.0, 0.0, 0.0, R=1.0, m0=0.0, P0=1.0)
    st = kalman_step(KalmanState.prior(ssm), ssm, 0.0)
    assert st.mean == 0.0
    assert st.variance == pytest.approx(0.5)
    assert st.log_evidence == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-14)


def test_uninformative_observation():
    ssm = LinearGaussianSSM(1.0, 0.0, 0.0, R=1e12, m0=0.3, P0=2.0)
    st = kalman_step(KalmanState.prior(ssm), ssm, 5.0)
    assert st.mean == pytest.approx(0.3, abs=1e-10)
    assert st.variance == pytest.approx(2.0, rel=1e-10)


def test_invalid_variances_rejected():
    with pytest.raises(ValueError):
        LinearGaussianSSM(1.0, 0.0, 0.0, R=0.0)
    with pytest.raises(ValueError):
        LinearGaussianSSM(1.0, 0.0, -1.0)


def test_exact_ou_examples():
    ssm = exact_ou_ssm(1.0, 0.0, 0.5, 0.2, 0.5, 0.0)
    assert ssm.F == pytest.approx(math.exp(-0.5))
    assert ssm.Q == pytest.approx(0.25 * (1 - math.exp(-1)) / 2)
    assert ssm.Q / (1 - ssm.F**2) == pytest.approx(0.125)
    assert (ssm.H, ssm.r, ssm.R, ssm.m0, ssm.P0) == (1.0, 0.0, 0.2, 0.0, 0.0)
    small = exact_ou_ssm(1e-8, 0.0, 0.5, 0.2, 0.5, 0.0)
    assert small.F == pytest.approx(1.0, rel=1e-4)
    assert small.Q == pytest.approx(0.25 * 0.5, rel=1e-4)
    assert abs(small.u) < 1e-12
    with pytest.raises(ValueError):
        exact_ou_ssm(0.0, 0.0, 0.5, 0.2, 0.5, 0.0)


def test_euler_ou_examples():
    ssm = euler_ou_ssm(1.0, 0.0, 0.5, 0.2, Level(0, 0.5), 0.0)
    assert ssm.F == 0.5
    assert ssm.Q == pytest.approx(0.125)
    assert ssm.u == 0.0
    fine = euler_ou_ssm(1.0, 0.0, 0.5, 0.2, Level(14, 0.5), 0.0)
    exact = exact_ou_ssm(1.0, 0.0, 0.5, 0.2, 0.5, 0.0)
    assert fine.F == pytest.approx(exact.F, rel=1e-3)
    assert fine.Q == pytest.approx(exact.Q, rel=1e-3)
    for l in range(6):
        assert euler_ou_ssm(1.0, 0.0, 0.5, 0.2, Level(l, 0.5), 0.0).u == 0.0
    with pytest.raises(ValueError):
        euler_ou_ssm(2.0, 0.0, 0.5, 0.2, Level(0, 0.5), 0.0)


def test_euler_ou_matches_step_composition():
    theta, mu, sigma = 1.3, 0.4, 0.7
    lev = Level(3, 0.5)
    ssm = euler_ou_ssm(theta, mu, sigma, 0.2, lev, 0.0)
    m, v = 0.2, 0.0
    rho = 1 - lev.h * theta
    for _ in range(lev.steps):
        m, v = rho * m + lev.h * theta * mu, rho * rho * v + sigma**2 * lev.h
    assert ssm.F * 0.2 + ssm.u == pytest.approx(m, rel=1e-13)
    assert ssm.Q == pytest.approx(v, rel=1e-13)


def test_gbm_examples():
    ssm = gbm_log_ssm(0.02, 0.2, 0.01, 0.001, 1.0)
    # 0.2 * 0.2 rounds to 0.04000000000000001
    assert ssm.u == pytest.approx(0.0, abs=1e-18)
    assert ssm.Q == pytest.approx(4e-5)
    assert gbm_log_ssm(0.125, 0.5, 0.01, 1.0, 1.0).u == 0.0
    res = kalman_filter(ssm, [0.0])
    expected = -0.5 * (math.log(2 * math.pi * (4e-5 + 0.01)))
    assert res.log_evidence[0] == pytest.approx(expected, abs=1e-14)
    np.testing.assert_allclose(gbm_filter_mean(res), np.exp(res.means + res.variances / 2))
    with pytest.raises(ValueError):
        gbm_log_ssm(0.02, 0.2, 0.01, 0.001, 0.0)


def _grid_evidence(ssm, ys, lo=-4.0, hi=4.0, n=2000):
    x = np.linspace(lo, hi, n)
    dx = x[1] - x[0]
    def norm(z, m, v):
        return np.exp(-0.5 * (z - m) ** 2 / v) / np.sqrt(2 * np.pi * v)
    f = norm(x, ssm.F * ssm.m0 + ssm.u, ssm.Q) * norm(ys[0], x, ssm.R)
    kernel = norm(x[:, None], ssm.F * x[None, :] + ssm.u, ssm.Q)  # [new, old]
    for y in ys[1:]:
        f = (kernel @ f) * dx * norm(y, x, ssm.R)
    return math.log(f.sum() * dx)


def test_kalman_evidence_matches_grid_integration():
    ssm = exact_ou_ssm(1.0, 0.0, 0.5, 0.2, 0.5, 0.0)
    ys = [0.3, -0.1, 0.45]
    kal = kalman_filter(ssm, ys).log_evidence[-1]
    grid = _grid_evidence(ssm, ys)
    assert math.exp(grid - kal) == pytest.approx(1.0, rel=1e-4)


def test_posterior_variance_bounds():
    ssm = exact_ou_ssm(1.0, 0.0, 0.5, 0.2, 0.5, 0.0)
    ys = np.random.default_rng(0).normal(0, 0.6, 50)
    res = kalman_filter(ssm, ys)
    assert np.all(res.variances >= 0)
    prior_bound = ssm.P0 + ssm.Q * np.arange(1, 51)
    assert np.all(res.variances <= prior_bound + 1e-15)
    assert np.all(np.isfinite(res.log_evidence))


def test_model_ssm():
    ou = get_model("ou")
    assert model_ssm(ou) == exact_ou_ssm(1.0, 0.0, 0.5, 0.2, 0.5, 0.0)
    assert model_ssm(ou, Level(2, 0.5)) == euler_ou_ssm(1.0, 0.0, 0.5, 0.2, Level(2, 0.5), 0.0)
    assert model_ssm(get_model("gbm")).Q == pytest.approx(4e-5)
    with pytest.raises(ValueError):
        model_ssm(get_model("nlm"))


def test_reference_pf_deterministic_and_cached(tmp_path):
    m = get_model("nlm")
    ys = np.random.default_rng(1).normal(0, 0.5, 8)
    a = reference_pf(m, ys, level_ref=2, n_ref=200, seed=3)
    b = reference_pf(m, ys, level_ref=2, n_ref=200, seed=3)
    np.testing.assert_array_equal(a.log_evidence, b.log_evidence)
    np.testing.assert_array_equal(a.filter_means, b.filter_means)
    c = reference_pf(m, ys, level_ref=2, n_ref=200, seed=3, cache_dir=tmp_path)
    files = list(tmp_path.glob("reference-*.json"))
    assert len(files) == 1
    doc = json.loads(files[0].read_text())
    assert doc["version"] == 1
    assert doc["settings"]["data_sha256"] == data_hash(ys)
    assert doc["settings"]["n_particles"] == 200
    np.testing.assert_array_equal(load_reference(files[0]).log_evidence, a.log_evidence)
    cached = reference_pf(m, ys, level_ref=2, n_ref=200, seed=3, cache_dir=tmp_path)
    np.testing.assert_array_equal(cached.filter_means, c.filter_means)
    reference_pf(m, ys, level_ref=2, n_ref=200, seed=4, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("reference-*.json"))) == 2


def test_truth_sources(tmp_path):
    ys = [0.1, 0.2]
    assert truth_for(get_model("ou"), ys).source.startswith("kalman")
    assert truth_for(get_model("gbm"), ys).source.startswith("kalman")
    t = truth_for(get_model("langevin"), ys, level_ref=1, n_ref=50, cache_dir=tmp_path)
    assert t.source.startswith("reference_pf")


@pytest.mark.slow
def test_reference_pf_matches_kalman_for_ou():
    m = get_model("ou")
    ys = np.random.default_rng(5).normal(0, 0.55, 100)
    n_ref = 100_000
    ref = reference_pf(m, ys, level_ref=9, n_ref=n_ref, seed=0)
    kal = kalman_filter(model_ssm(m), ys)
    for k in (10, 100):
        # ESS stays above N/4 between resampling steps, so N/4 bounds the effective size
        se = math.sqrt(kal.variances[k - 1] / (n_ref / 4))
        assert abs(ref.filter_means[k - 1] - kal.means[k - 1]) < 3 * se
