import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vecsojourn.berman import (
    BermanEstimate,
    LimitFieldSpec,
    _integral_1d,
    _integral_2d,
    _integral_2d_path,
    batch_means,
    berman_from_J,
    estimate_B_doublesum,
    estimate_B_expmix,
    estimate_B_expmix_refined,
    estimate_F_w,
    min_count,
    richardson_extrapolate,
    simulate_J,
)
from vecsojourn.errors import MismatchedConfig, SavageViolated, ValidationError
from vecsojourn.structure import VariogramModel

BM = VariogramModel.common((1.0,), [[1.0]])
RHO = VariogramModel.common((1.0,), [[1.0, 0.5], [0.5, 1.0]])


def spec1(alpha=1.0):
    return LimitFieldSpec(VariogramModel.common((alpha,), [[1.0]]), [1.0])


# ----------------------------------------------------------- exact z-integral


def _rect_oracle(g, m):
    """Integrate 1{#{t : g(t) < z} >= m} e^{-sum z} over the cells cut out by the breakpoints."""
    d = g.shape[1]
    cuts = [np.concatenate([[-np.inf], np.sort(g[:, i]), [np.inf]]) for i in range(d)]
    total = 0.0
    for idx in itertools.product(*[range(len(c) - 1) for c in cuts]):
        lo = np.array([cuts[i][j] for i, j in enumerate(idx)])
        hi = np.array([cuts[i][j + 1] for i, j in enumerate(idx)])
        if np.any(np.isinf(lo)):
            continue       # below every breakpoint on some axis: no point counted
        z = lo            # indicator is constant on (lo, hi]; g < z  <=>  g <= lo
        cnt = np.sum(np.all(g <= z, axis=1))
        if cnt >= m:
            total += np.prod(np.exp(-lo) - np.exp(-hi))
    return total


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_integral_1d_oracle(seed, m):
    g = np.random.default_rng(seed).normal(size=(1, 7))
    assert _integral_1d(g, m)[0] == pytest.approx(_rect_oracle(g.T, m), rel=1e-12)


@given(st.integers(0, 10**6), st.integers(1, 5))
def test_integral_2d_oracle(seed, m):
    g = np.random.default_rng(seed).normal(size=(8, 2))
    ref = _rect_oracle(g, m)
    assert _integral_2d_path(g[:, 0], g[:, 1], m) == pytest.approx(ref, rel=1e-12, abs=1e-300)
    if m == 1:
        assert _integral_2d(g[None], 1)[0] == pytest.approx(ref, rel=1e-12)


def test_integral_beyond_count_is_zero():
    g = np.zeros((1, 3))
    assert _integral_1d(g, 4)[0] == 0.0
    assert _integral_2d_path(np.zeros(3), np.zeros(3), 4) == 0.0


def test_min_count():
    assert min_count(0.0, 0.05) == 1
    assert min_count(0.05, 0.05) == 2
    assert min_count(0.5, 0.05) == 11
    assert min_count(-1.0, 0.05) == 1


def test_batch_means():
    v = np.arange(200.0)
    m, se = batch_means(v)
    assert m == pytest.approx(99.5)
    means = v.reshape(20, 10).mean(axis=1)
    assert se == pytest.approx(means.std(ddof=1) / math.sqrt(20))


# ------------------------------------------------------------- limit field


def test_savage_enforced():
    with pytest.raises(SavageViolated):
        LimitFieldSpec(RHO, [1.0, -0.1])
    with pytest.raises(SavageViolated):
        LimitFieldSpec.from_model(RHO, [[1, 0.9], [0.9, 1]], [1, 0.5])
    with pytest.raises(ValidationError):
        LimitFieldSpec(RHO, [1.0])
    s = LimitFieldSpec.from_model(RHO, [[1, 0.5], [0.5, 1]], [1, 1])
    np.testing.assert_allclose(s.w, [2 / 3, 2 / 3])
    assert s.default_lambda() == pytest.approx(8 * 0.75)


def test_df_of_J_basic():
    s = spec1()
    df, vals = estimate_F_w(s, [0.0, 0.02, 1.0, 40.0], lam=4.0, h=0.05, n=2000, seed=1)
    assert vals[0] == 0.0 and vals[1] == 0.0            # J >= h always
    assert np.all(np.diff(vals) >= 0)
    assert vals[-1] == 1.0
    assert df.values.min() >= 0.05 - 1e-15


def test_expmix_pathwise_properties():
    s = LimitFieldSpec(RHO, [2 / 3, 2 / 3])
    sample = simulate_J(s, 4.0, 0.05, 3000, seed=2, sub_lambdas=(1.0, 2.0))
    xs = [0.0, 0.25, 0.5, 1.0, 2.0]
    est = berman_from_J(sample.J, xs, 4.0, 0.05, 1)
    vals = [e.estimate for e in est]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    for e in est[1:]:
        assert e.estimate <= np.mean(sample.J > e.x) / e.x + 1e-15
    assert berman_from_J(sample.J, [8.0], 4.0, 0.05, 1)[0].estimate == 0.0
    # larger windows see every exceedance of smaller ones
    assert np.all(sample.by_lambda[1.0] <= sample.by_lambda[2.0])
    assert np.all(sample.by_lambda[2.0] <= sample.J)


def test_lambda_monotone_in_mean():
    s = spec1()
    sample = simulate_J(s, 6.0, 0.05, 4000, seed=3, sub_lambdas=(1.0, 3.0))
    b = [np.mean(1 / J) for J in (sample.by_lambda[1.0], sample.by_lambda[3.0], sample.J)]
    assert b[0] >= b[1] >= b[2]


def test_pickands_alpha_two_raw():
    e = estimate_B_expmix(spec1(2.0), 0.0, lam=10.0, h=0.05, n=20000, seed=4, threads=2)
    assert abs(e.estimate - 1 / math.sqrt(math.pi)) <= 0.1


def test_step_bias_shrinks():
    # coupled h / h/2 pair: the finer grid moves toward H_1 = 1
    c, f, ext = estimate_B_expmix_refined(spec1(), 0.0, lam=10.0, h=0.1, n=10000, seed=5, threads=2)
    assert c.estimate < f.estimate < 1.0
    assert abs(ext.estimate - 1.0) < abs(f.estimate - 1.0) + 2 * ext.stderr


def test_thread_independence():
    s = LimitFieldSpec(RHO, [2 / 3, 2 / 3])
    a = estimate_B_expmix(s, [0.0, 0.5], 3.0, 0.1, 1500, seed=6, threads=1)
    b = estimate_B_expmix(s, [0.0, 0.5], 3.0, 0.1, 1500, seed=6, threads=3)
    assert [e.to_dict() for e in a] == [e.to_dict() for e in b]
    c = estimate_B_doublesum(s, [0.0], 2.0, 0.1, 1000, seed=6, threads=1)
    d = estimate_B_doublesum(s, [0.0], 2.0, 0.1, 1000, seed=6, threads=4)
    assert c[0].to_dict() == d[0].to_dict()


# ---------------------------------------------------------------- doublesum


def test_doublesum_beyond_window():
    assert estimate_B_doublesum(spec1(), 2.0, 2.0, 0.1, 500, seed=1).estimate == 0.0
    with pytest.raises(ValidationError):
        estimate_B_doublesum(spec1(), 0.0, 0.5, 0.1, 500)


def test_doublesum_decreases_in_window():
    vals = [estimate_B_doublesum(spec1(), 0.0, S, 0.05, 4000, seed=7, threads=2) for S in (2.0, 8.0, 32.0)]
    est = [v.estimate for v in vals]
    assert est[0] > est[1] > est[2]
    assert est[0] > 1.0


def test_doublesum_tilt_unbiased():
    # the path tilt is a change of measure: same mean with and without it
    s = spec1()
    a = estimate_B_doublesum(s, 0.0, 2.0, 0.1, 40000, seed=8, threads=2, tilt=False)
    b = estimate_B_doublesum(s, 0.0, 2.0, 0.1, 20000, seed=9, threads=2, tilt=True)
    assert abs(a.estimate - b.estimate) <= 4 * math.hypot(a.stderr, b.stderr)


def test_doublesum_three_components_diagnostic():
    vg = VariogramModel.common((1.0,), np.eye(3))
    e = estimate_B_doublesum(LimitFieldSpec(vg, [1.0, 1.0, 1.0]), 0.0, 2.0, 0.25, 2000, M=6.0, seed=3)
    assert 0 <= e.diagnostics["boundary_mass"] <= 0.01
    assert e.estimate > 0


# ---------------------------------------------------------------- richardson


def _est(v, h, lam=10.0):
    return BermanEstimate(0.0, v, 0.01, 100, "expmix", {"lambda": lam, "step": h, "k": 1})


def test_richardson():
    a = _est(0.8, 0.1)
    assert richardson_extrapolate(a, a).estimate == 0.8
    assert richardson_extrapolate(_est(0.9, 0.1), _est(0.9, 0.05)).estimate == pytest.approx(0.9)
    r = richardson_extrapolate(_est(0.8, 0.1), _est(0.9, 0.05), order=1.0)
    assert r.estimate == pytest.approx(1.0)
    assert r.diagnostics["raw"] == [0.8, 0.9]
    with pytest.raises(MismatchedConfig):
        richardson_extrapolate(_est(0.8, 0.1), _est(0.9, 0.05, lam=8.0))
    with pytest.raises(MismatchedConfig):
        richardson_extrapolate(_est(0.8, 0.1), _est(0.9, 0.1))
