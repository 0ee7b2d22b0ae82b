import numpy as np
import pytest

from msrisk import (
    Component,
    ConditioningSpec,
    FittedModel,
    MixtureDistribution,
    ModelFamily,
    MsmParams,
    MsriskError,
    NumericalError,
    PanelError,
    ParamError,
    ReturnPanel,
    model_from_json,
    model_to_json,
    params_from_json,
    params_to_json,
    validate,
)

from helpers import random_params


def make_panel(T=5, p=2):
    dates = [f"2020-01-{d:02d}" for d in range(1, T + 1)]
    values = np.arange(T * p, dtype=float).reshape(T, p) / 10.0
    return ReturnPanel(dates, [f"A{j}" for j in range(p)], values)


def test_panel_shape_and_accessors():
    panel = make_panel(5, 3)
    assert panel.T == 5
    assert panel.p == 3
    assert panel.assets == ("A0", "A1", "A2")
    assert panel.values.flags.writeable is False


def test_panel_rejects_bad_inputs():
    with pytest.raises(PanelError):
        ReturnPanel(["2020-01-01"], ["A"], np.zeros((1, 1)))
    with pytest.raises(PanelError):
        ReturnPanel(["2020-01-01", "2020-01-01"], ["A"], np.zeros((2, 1)))
    with pytest.raises(PanelError):
        ReturnPanel(["2020-01-02", "2020-01-01"], ["A"], np.zeros((2, 1)))
    with pytest.raises(PanelError):
        ReturnPanel(["2020-01-01", "2020-01-02"], ["A", "A"],
                    np.zeros((2, 2)))
    bad = np.zeros((2, 1))
    bad[1, 0] = np.nan
    with pytest.raises(PanelError):
        ReturnPanel(["2020-01-01", "2020-01-02"], ["A"], bad)


def test_params_validate_clean_and_dirty():
    rng = np.random.default_rng(0)
    params = random_params(rng, 2, 2, ModelFamily.STUDENT_T)
    assert validate(params) == []

    bad_q = np.array(params.Q)
    bad_q[0] = [0.7, 0.7]
    problems = validate(MsmParams(delta=params.delta, Q=bad_q, mu=params.mu,
                                  Sigma=params.Sigma, nu=params.nu))
    assert any("row" in msg or "sum" in msg for msg in problems)

    bad_sigma = np.array(params.Sigma)
    bad_sigma[1] = -np.eye(2)
    problems = validate(MsmParams(delta=params.delta, Q=params.Q,
                                  mu=params.mu, Sigma=bad_sigma,
                                  nu=params.nu))
    assert problems

    bad_nu = np.array(params.nu)
    bad_nu[0] = 1.5
    problems = validate(MsmParams(delta=params.delta, Q=params.Q,
                                  mu=params.mu, Sigma=params.Sigma,
                                  nu=bad_nu))
    assert any("nu" in msg for msg in problems)


def test_params_family_follows_nu():
    rng = np.random.default_rng(1)
    g = random_params(rng, 2, 2, ModelFamily.GAUSSIAN)
    t = random_params(rng, 2, 2, ModelFamily.STUDENT_T)
    assert g.family is ModelFamily.GAUSSIAN
    assert g.nu is None
    assert t.family is ModelFamily.STUDENT_T
    assert t.nu.shape == (2,)


def test_component_and_mixture_invariants():
    c = Component([0.0, 1.0], np.eye(2), 5.0)
    assert c.mu.shape == (2,)
    assert c.Sigma.shape == (2, 2)
    assert c.nu == 5.0
    assert c.mu.flags.writeable is False

    comps = [Component([0.0], [[1.0]], 5.0), Component([1.0], [[2.0]], 8.0)]
    mix = MixtureDistribution(ModelFamily.STUDENT_T, [0.5, 0.5], comps)
    assert mix.dim == 1
    assert mix.K == 2
    with pytest.raises(ParamError):
        MixtureDistribution(ModelFamily.STUDENT_T, [0.6, 0.5], comps)
    with pytest.raises(ParamError):
        MixtureDistribution(ModelFamily.GAUSSIAN, [0.5, 0.5], comps)
    gauss = [Component([0.0], [[1.0]], None), Component([1.0], [[2.0]], None)]
    with pytest.raises(ParamError):
        MixtureDistribution(ModelFamily.STUDENT_T, [0.5, 0.5], gauss)
    with pytest.raises(ParamError):
        MixtureDistribution(ModelFamily.GAUSSIAN, [0.5, 0.5],
                            [Component([0.0], [[1.0]], None),
                             Component([0.0, 0.0], np.eye(2), None)])


def test_conditioning_spec_invariants():
    spec = ConditioningSpec(target=0, distressed=[2, 1], tau1=0.05,
                            tau2=0.05)
    assert spec.distressed == (1, 2)
    assert spec.normal_level == 0.5
    with pytest.raises(ParamError):
        ConditioningSpec(target=1, distressed=[1], tau1=0.05, tau2=0.05)
    with pytest.raises(ParamError):
        ConditioningSpec(target=0, distressed=[], tau1=0.05, tau2=0.05)
    with pytest.raises(ParamError):
        ConditioningSpec(target=0, distressed=[1], tau1=0.0, tau2=0.05)
    with pytest.raises(ParamError):
        ConditioningSpec(target=0, distressed=[1], tau1=0.05, tau2=1.0)


def test_params_json_roundtrip():
    rng = np.random.default_rng(2)
    params = random_params(rng, 3, 2, ModelFamily.STUDENT_T)
    back = params_from_json(params_to_json(params))
    np.testing.assert_array_equal(back.delta, params.delta)
    np.testing.assert_array_equal(back.Q, params.Q)
    np.testing.assert_array_equal(back.mu, params.mu)
    np.testing.assert_array_equal(back.Sigma, params.Sigma)
    np.testing.assert_array_equal(back.nu, params.nu)

    g = random_params(rng, 2, 1, ModelFamily.GAUSSIAN)
    back = params_from_json(params_to_json(g))
    assert back.nu is None


def test_model_json_roundtrip():
    rng = np.random.default_rng(3)
    params = random_params(rng, 2, 2, ModelFamily.GAUSSIAN)
    T = 4
    filtered = rng.dirichlet([1.0, 1.0], size=T)
    smoothed = rng.dirichlet([1.0, 1.0], size=T)
    pairs = rng.dirichlet(np.ones(4), size=T - 1).reshape(T - 1, 2, 2)
    model = FittedModel(
        params=params, family=ModelFamily.GAUSSIAN, loglik=-12.5,
        n_params=11, aic=47.0, bic=52.0, filtered=filtered,
        smoothed=smoothed, smoothed_pairs=pairs, w_hat=None,
        converged=True, iterations=17, restart_logliks=(-13.0, -12.5))
    back = model_from_json(model_to_json(model))
    assert back.loglik == model.loglik
    assert back.n_params == model.n_params
    assert back.converged is True
    assert back.iterations == 17
    assert back.restart_logliks == model.restart_logliks
    np.testing.assert_array_equal(back.filtered, model.filtered)
    np.testing.assert_array_equal(back.smoothed, model.smoothed)
    np.testing.assert_array_equal(back.smoothed_pairs, model.smoothed_pairs)
    assert back.w_hat is None
    np.testing.assert_array_equal(back.params.mu, params.mu)
    # serialization is canonical: same object, same bytes
    assert model_to_json(back) == model_to_json(model)


def test_error_taxonomy():
    assert issubclass(PanelError, MsriskError)
    assert issubclass(PanelError, ValueError)
    assert issubclass(ParamError, ValueError)
    assert issubclass(NumericalError, ArithmeticError)
