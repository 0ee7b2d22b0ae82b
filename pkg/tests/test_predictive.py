"""Predictive mixture construction and marginal/conditional calculus."""

import numpy as np
import pytest
from scipy import stats

from msrisk import (
    Component,
    DofConvention,
    MixtureDistribution,
    ModelFamily,
    ParamError,
    PredictiveSpec,
    condition,
    marginalize,
    mixture_logpdf,
    predictive_mixture,
    predictive_weights,
)

from helpers import gaussian_conditional, random_mixture, toy_fitted_model

toy_model = toy_fitted_model


# ---------------------------------------------------------------------------
# spec and weights


def test_predictive_spec_validation():
    spec = PredictiveSpec(origin_t=3, horizon_h=2)
    assert spec.origin_t == 3 and spec.horizon_h == 2
    assert PredictiveSpec(1).horizon_h == 1
    with pytest.raises(ParamError):
        PredictiveSpec(0)
    with pytest.raises(ParamError):
        PredictiveSpec(1, 0)


def test_predictive_weights_matrix_power():
    rng = np.random.default_rng(7)
    L = 4
    Q = rng.dirichlet(np.ones(L), size=L)
    row = rng.dirichlet(np.ones(L))
    for h in (1, 2, 5):
        expected = row.copy()
        for _ in range(h):
            expected = expected @ Q
        got = predictive_weights(row, Q, h)
        assert np.allclose(got, expected, atol=1e-12)
        assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_predictive_weights_long_horizon_reaches_stationary():
    rng = np.random.default_rng(8)
    L = 3
    Q = rng.dirichlet(np.ones(L) * 5, size=L)
    vals, vecs = np.linalg.eig(Q.T)
    pi = np.real(vecs[:, np.argmax(np.real(vals))])
    pi = pi / pi.sum()
    row = np.array([1.0, 0.0, 0.0])
    got = predictive_weights(row, Q, 400)
    assert np.allclose(got, pi, atol=1e-10)


def test_predictive_mixture_contents():
    rng = np.random.default_rng(9)
    model = toy_model(rng, L=3, p=2, T=10)
    spec = PredictiveSpec(origin_t=4, horizon_h=2)
    mix = predictive_mixture(model, spec)
    expected_w = model.filtered[3] @ np.linalg.matrix_power(model.params.Q, 2)
    assert np.allclose(mix.weights, expected_w / expected_w.sum(), atol=1e-12)
    assert mix.family is model.family
    assert mix.K == model.params.L
    for l, c in enumerate(mix.components):
        assert np.allclose(c.mu, model.params.mu[l])
        assert np.allclose(c.Sigma, model.params.Sigma[l])
        assert c.nu == pytest.approx(model.params.nu[l])


def test_predictive_mixture_gaussian_has_no_dof():
    rng = np.random.default_rng(10)
    model = toy_model(rng, family=ModelFamily.GAUSSIAN)
    mix = predictive_mixture(model, PredictiveSpec(1))
    assert all(c.nu is None for c in mix.components)


def test_predictive_mixture_origin_past_sample():
    rng = np.random.default_rng(11)
    model = toy_model(rng, T=10)
    with pytest.raises(ParamError):
        predictive_mixture(model, PredictiveSpec(origin_t=11))
    mix = predictive_mixture(model, PredictiveSpec(origin_t=10))
    assert mix.K == model.params.L


# ---------------------------------------------------------------------------
# marginalize


def test_marginalize_blocks_and_weights():
    rng = np.random.default_rng(12)
    mix = random_mixture(rng, K=3, p=4, family=ModelFamily.STUDENT_T)
    keep = [3, 1]
    sub = marginalize(mix, keep)
    assert np.allclose(sub.weights, mix.weights)
    assert sub.dim == 2
    for c_full, c_sub in zip(mix.components, sub.components):
        assert np.allclose(c_sub.mu, c_full.mu[keep])
        assert np.allclose(c_sub.Sigma, c_full.Sigma[np.ix_(keep, keep)])
        assert c_sub.nu == pytest.approx(c_full.nu)


def test_marginalize_density_matches_scipy():
    rng = np.random.default_rng(13)
    mix = random_mixture(rng, K=2, p=3, family=ModelFamily.GAUSSIAN)
    keep = [0, 2]
    sub = marginalize(mix, keep)
    x = rng.normal(size=2)
    direct = sum(
        w * stats.multivariate_normal.pdf(x, mean=c.mu[keep],
                                          cov=c.Sigma[np.ix_(keep, keep)])
        for w, c in zip(mix.weights, mix.components))
    assert float(mixture_logpdf(sub, x)) == pytest.approx(np.log(direct),
                                                          abs=1e-10)


def test_marginalize_index_validation():
    rng = np.random.default_rng(14)
    mix = random_mixture(rng, K=2, p=3, family=ModelFamily.GAUSSIAN)
    with pytest.raises(ParamError):
        marginalize(mix, [])
    with pytest.raises(ParamError):
        marginalize(mix, [0, 0])
    with pytest.raises(ParamError):
        marginalize(mix, [0, 3])
    with pytest.raises(ParamError):
        marginalize(mix, [-1])


# ---------------------------------------------------------------------------
# condition: gaussian


def test_condition_gaussian_matches_schur_reference():
    rng = np.random.default_rng(15)
    mix = random_mixture(rng, K=3, p=4, family=ModelFamily.GAUSSIAN)
    given = [1, 3]
    free = [0, 2]
    values = rng.normal(size=2)
    cond = condition(mix, given, values)
    assert cond.dim == 2

    logw = np.empty(mix.K)
    for k, c in enumerate(mix.components):
        mu_c, S_c = gaussian_conditional(c.mu, c.Sigma, given, values)
        assert np.allclose(cond.components[k].mu, mu_c, atol=1e-12)
        assert np.allclose(cond.components[k].Sigma, S_c, atol=1e-12)
        logw[k] = np.log(mix.weights[k]) + stats.multivariate_normal.logpdf(
            values, mean=c.mu[given], cov=c.Sigma[np.ix_(given, given)])
    w = np.exp(logw - logw.max())
    assert np.allclose(cond.weights, w / w.sum(), atol=1e-12)


def test_condition_gaussian_bayes_identity():
    # joint density = marginal density of the given block times the
    # conditional mixture density of the free block
    rng = np.random.default_rng(16)
    mix = random_mixture(rng, K=3, p=3, family=ModelFamily.GAUSSIAN)
    given = [2]
    free = [0, 1]
    for _ in range(5):
        y = rng.normal(size=3)
        joint = float(mixture_logpdf(mix, y))
        marg = float(mixture_logpdf(marginalize(mix, given), y[given]))
        cond = condition(mix, given, y[given])
        c = float(mixture_logpdf(cond, y[free]))
        assert joint == pytest.approx(marg + c, abs=1e-10)


def test_condition_deep_tail_weights_stay_finite():
    rng = np.random.default_rng(17)
    mix = random_mixture(rng, K=2, p=2, family=ModelFamily.GAUSSIAN)
    cond = condition(mix, [1], [-38.0])
    assert np.all(np.isfinite(cond.weights))
    assert cond.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_condition_zero_weight_component_stays_zero():
    comps = (
        Component(np.zeros(2), np.eye(2), None),
        Component(np.ones(2), np.eye(2), None),
    )
    mix = MixtureDistribution(ModelFamily.GAUSSIAN, np.array([1.0, 0.0]),
                              comps)
    cond = condition(mix, [0], [0.2])
    assert cond.weights[1] == 0.0
    assert cond.weights[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# condition: student-t dof conventions


def expected_t_conditional(c, given, free, values, k_scale):
    mu_c, S_c = gaussian_conditional(c.mu, c.Sigma, given, values)
    S22 = c.Sigma[np.ix_(given, given)]
    dev = values - c.mu[given]
    d2 = float(dev @ np.linalg.solve(S22, dev))
    return mu_c, S_c * (c.nu + d2) / (c.nu + k_scale)


def test_condition_student_paper_convention():
    rng = np.random.default_rng(18)
    mix = random_mixture(rng, K=2, p=4, family=ModelFamily.STUDENT_T)
    given = [0]
    free = [1, 2, 3]
    values = np.array([0.4])
    cond = condition(mix, given, values, DofConvention.PAPER)
    p1 = len(free)
    for k, c in enumerate(mix.components):
        mu_c, S_c = expected_t_conditional(c, given, free, values, p1)
        assert cond.components[k].nu == pytest.approx(c.nu + p1)
        assert np.allclose(cond.components[k].mu, mu_c, atol=1e-12)
        assert np.allclose(cond.components[k].Sigma, S_c, atol=1e-12)


def test_condition_student_standard_convention():
    rng = np.random.default_rng(19)
    mix = random_mixture(rng, K=2, p=4, family=ModelFamily.STUDENT_T)
    given = [0, 2, 3]
    free = [1]
    values = np.array([0.4, -0.1, 0.8])
    cond = condition(mix, given, values, DofConvention.STANDARD)
    p2 = len(given)
    for k, c in enumerate(mix.components):
        mu_c, S_c = expected_t_conditional(c, given, free, values, p2)
        assert cond.components[k].nu == pytest.approx(c.nu + p2)
        assert np.allclose(cond.components[k].mu, mu_c, atol=1e-12)
        assert np.allclose(cond.components[k].Sigma, S_c, atol=1e-12)


def test_condition_conventions_agree_iff_blocks_match():
    rng = np.random.default_rng(20)
    # p = 4, condition on 2 of 4: p1 == p2 == 2, conventions coincide
    mix = random_mixture(rng, K=2, p=4, family=ModelFamily.STUDENT_T)
    values = np.array([0.3, -0.5])
    a = condition(mix, [0, 1], values, DofConvention.PAPER)
    b = condition(mix, [0, 1], values, DofConvention.STANDARD)
    for ca, cb in zip(a.components, b.components):
        assert ca.nu == pytest.approx(cb.nu)
        assert np.allclose(ca.Sigma, cb.Sigma, atol=1e-14)
    # p = 3, condition on 1 of 3: p1 = 2 != p2 = 1, they differ
    mix3 = random_mixture(rng, K=2, p=3, family=ModelFamily.STUDENT_T)
    a3 = condition(mix3, [0], [0.3], DofConvention.PAPER)
    b3 = condition(mix3, [0], [0.3], DofConvention.STANDARD)
    assert a3.components[0].nu != pytest.approx(b3.components[0].nu)
    assert not np.allclose(a3.components[0].Sigma, b3.components[0].Sigma)


def test_condition_student_bayes_identity_standard_only():
    # the classical conditional law factorizes the joint t density exactly;
    # the inflated-dof variant does not unless the block sizes agree
    rng = np.random.default_rng(21)
    mix = random_mixture(rng, K=2, p=3, family=ModelFamily.STUDENT_T)
    given = [2]
    free = [0, 1]
    gaps_std = []
    gaps_pap = []
    for _ in range(5):
        y = rng.normal(size=3)
        joint = float(mixture_logpdf(mix, y))
        marg = float(mixture_logpdf(marginalize(mix, given), y[given]))
        cs = condition(mix, given, y[given], DofConvention.STANDARD)
        cp = condition(mix, given, y[given], DofConvention.PAPER)
        gaps_std.append(abs(joint - marg
                            - float(mixture_logpdf(cs, y[free]))))
        gaps_pap.append(abs(joint - marg
                            - float(mixture_logpdf(cp, y[free]))))
    assert max(gaps_std) < 1e-10
    assert min(gaps_pap) > 1e-4


def test_condition_default_convention_is_paper():
    rng = np.random.default_rng(22)
    mix = random_mixture(rng, K=2, p=3, family=ModelFamily.STUDENT_T)
    default = condition(mix, [0], [0.1])
    paper = condition(mix, [0], [0.1], DofConvention.PAPER)
    for cd, cp in zip(default.components, paper.components):
        assert cd.nu == pytest.approx(cp.nu)
        assert np.allclose(cd.Sigma, cp.Sigma)


# ---------------------------------------------------------------------------
# condition: error paths


def test_condition_validation_errors():
    rng = np.random.default_rng(23)
    mix = random_mixture(rng, K=2, p=3, family=ModelFamily.GAUSSIAN)
    with pytest.raises(ParamError):
        condition(mix, [0, 1, 2], [0.0, 0.0, 0.0])
    with pytest.raises(ParamError):
        condition(mix, [0], [0.0, 1.0])
    with pytest.raises(ParamError):
        condition(mix, [0], [np.nan])
    with pytest.raises(ParamError):
        condition(mix, [], [])
    with pytest.raises(ParamError):
        condition(mix, [0, 0], [0.0, 0.0])
    with pytest.raises(ParamError):
        condition(mix, [5], [0.0])


def test_condition_singular_block_raises():
    # conditioning block [1, 2] is exactly rank deficient
    S = np.array([[1.0, 0.0, 0.0],
                  [0.0, 1.0, 1.0],
                  [0.0, 1.0, 1.0]])
    comps = (Component(np.zeros(3), S, None),)
    mix = MixtureDistribution(ModelFamily.GAUSSIAN, np.array([1.0]), comps)
    with pytest.raises(ParamError):
        condition(mix, [1, 2], [0.0, 0.0])
