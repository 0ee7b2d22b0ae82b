"""Marginal and conditional tail-risk measures on predictive mixtures.

Tail convention: VaR at level tau is the lower-tail quantile,
P(Y <= VaR_tau) = tau, with tau < 0.5 (losses are negative returns).  ES
at level tau is the expected return below the VaR, so ES <= VaR always.

The conditional measures pin the distressed assets at their marginal
tau2 levels and every other non-target asset at its marginal median (for
MCoVaR) or median-ES (for MCoES) level, condition the joint mixture on
those values, and read the tau1-level measure off the univariate
conditional law.  The delta variants subtract the same construction with
every conditioning asset at its non-distressed level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ConditioningSpec,
    DofConvention,
    FittedModel,
    MixtureDistribution,
    MsriskError,
    ParamError,
    RiskMeasure,
)
from .dist import mixture_cdf, mixture_quantile, tce_mixture_uni
from .predictive import (
    PredictiveSpec,
    condition,
    marginalize,
    predictive_weights,
)

__all__ = [
    "RiskPoint",
    "var_mixture",
    "es_mixture",
    "mcovar",
    "mcoes",
    "delta_mcovar",
    "delta_mcoes",
    "risk_path",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiskPoint:
    """One evaluated measure: origin time (1-based), asset index, value."""

    t: int
    asset: int
    measure: RiskMeasure
    value: float
    spec: Optional[ConditioningSpec] = None


def _require_univariate(mix: MixtureDistribution):
    if mix.dim != 1:
        raise ParamError(f"measure needs a univariate mixture, "
                         f"got dimension {mix.dim}")


def var_mixture(mix: MixtureDistribution, tau: float) -> float:
    """Lower-tail quantile: the unique q with F_mix(q) = tau, |F-tau|<1e-12."""
    _require_univariate(mix)
    if not 0.0 < tau < 0.5:
        raise ParamError(f"tau must lie in (0, 0.5), got {tau}")
    return mixture_quantile(mix, tau)


def es_mixture(mix: MixtureDistribution, tau: float) -> float:
    """Expected shortfall: mean return below the tau-level quantile."""
    q = var_mixture(mix, tau)
    return tce_mixture_uni(mix, q)


# ---------------------------------------------------------------------------
# conditional measures


def _check_joint(mix: MixtureDistribution, spec: ConditioningSpec):
    if spec.target >= mix.dim or any(j >= mix.dim for j in spec.distressed):
        raise ParamError("spec indices exceed mixture dimension")
    if mix.dim < 2:
        raise ParamError("conditional measures need at least two assets")
    if not 0.0 < spec.tau1 < 0.5 or not 0.0 < spec.tau2 < 0.5:
        raise ParamError("conditional measures need tau1, tau2 in (0, 0.5)")


def _conditioning_sets(mix: MixtureDistribution, spec: ConditioningSpec):
    others = [j for j in range(mix.dim) if j != spec.target]
    normal = [j for j in others if j not in set(spec.distressed)]
    return others, normal


def _marginal_quantile(mix: MixtureDistribution, j: int,
                       level: float) -> float:
    return mixture_quantile(marginalize(mix, [j]), level)


def _marginal_es_level(mix: MixtureDistribution, j: int,
                       level: float) -> float:
    marg = marginalize(mix, [j])
    return tce_mixture_uni(marg, mixture_quantile(marg, level))


def _conditional_tail(mix: MixtureDistribution, target: int, given: list,
                      values: np.ndarray, tau1: float, want_es: bool,
                      convention: DofConvention) -> float:
    cond = condition(mix, given, values, convention)
    # given = every non-target asset, so the conditional is univariate
    q = mixture_quantile(cond, tau1)
    if want_es:
        return tce_mixture_uni(cond, q)
    return q


def _covar_levels(mix: MixtureDistribution, spec: ConditioningSpec,
                  es_levels: bool, stressed: bool):
    """Conditioning values for all non-target assets, in index order."""
    others, _ = _conditioning_sets(mix, spec)
    dset = set(spec.distressed) if stressed else set()
    values = np.empty(len(others))
    for i, j in enumerate(others):
        level = spec.tau2 if j in dset else spec.normal_level
        if es_levels:
            values[i] = _marginal_es_level(mix, j, level)
        else:
            values[i] = _marginal_quantile(mix, j, level)
    return others, values


def mcovar(mix: MixtureDistribution, spec: ConditioningSpec,
           convention: DofConvention = DofConvention.PAPER) -> float:
    """tau1-quantile of the target's law given the distressed assets at
    their marginal tau2 quantiles and the rest at their marginal medians."""
    _check_joint(mix, spec)
    given, values = _covar_levels(mix, spec, es_levels=False, stressed=True)
    return _conditional_tail(mix, spec.target, given, values, spec.tau1,
                             want_es=False, convention=convention)


def mcoes(mix: MixtureDistribution, spec: ConditioningSpec,
          convention: DofConvention = DofConvention.PAPER) -> float:
    """Conditional expected shortfall with ES-level conditioning: the
    distressed assets sit at their marginal tau2-ES values, the rest at
    their median-ES values, and the result is the ES of the conditional
    mixture at tau1 (threshold = the conditional tau1-quantile)."""
    _check_joint(mix, spec)
    given, values = _covar_levels(mix, spec, es_levels=True, stressed=True)
    return _conditional_tail(mix, spec.target, given, values, spec.tau1,
                             want_es=True, convention=convention)


def delta_mcovar(mix: MixtureDistribution, spec: ConditioningSpec,
                 convention: DofConvention = DofConvention.PAPER) -> float:
    """Stressed-minus-baseline MCoVaR; the baseline pins every
    conditioning asset at its marginal median."""
    _check_joint(mix, spec)
    stressed = mcovar(mix, spec, convention)
    given, values = _covar_levels(mix, spec, es_levels=False, stressed=False)
    base = _conditional_tail(mix, spec.target, given, values, spec.tau1,
                             want_es=False, convention=convention)
    return stressed - base


def delta_mcoes(mix: MixtureDistribution, spec: ConditioningSpec,
                convention: DofConvention = DofConvention.PAPER) -> float:
    """Stressed-minus-baseline MCoES; the baseline pins every conditioning
    asset at its marginal median-ES value."""
    _check_joint(mix, spec)
    stressed = mcoes(mix, spec, convention)
    given, values = _covar_levels(mix, spec, es_levels=True, stressed=False)
    base = _conditional_tail(mix, spec.target, given, values, spec.tau1,
                             want_es=True, convention=convention)
    return stressed - base


# ---------------------------------------------------------------------------
# time paths


def _measure_value(mix: MixtureDistribution, measure: RiskMeasure,
                   spec: ConditioningSpec,
                   convention: DofConvention) -> float:
    if measure is RiskMeasure.VAR:
        return var_mixture(marginalize(mix, [spec.target]), spec.tau1)
    if measure is RiskMeasure.ES:
        return es_mixture(marginalize(mix, [spec.target]), spec.tau1)
    if measure is RiskMeasure.MCOVAR:
        return mcovar(mix, spec, convention)
    if measure is RiskMeasure.MCOES:
        return mcoes(mix, spec, convention)
    if measure is RiskMeasure.DELTA_MCOVAR:
        return delta_mcovar(mix, spec, convention)
    if measure is RiskMeasure.DELTA_MCOES:
        return delta_mcoes(mix, spec, convention)
    raise ParamError(f"unknown measure {measure!r}")


def _mixture_at(model: FittedModel, t: int, h: int,
                probabilities: str) -> MixtureDistribution:
    from .core import Component

    params = model.params
    if probabilities == "filtered":
        row = model.filtered[t - 1]
    elif probabilities == "smoothed":
        row = model.smoothed[t - 1]
    else:
        raise ParamError(
            f"probabilities must be 'filtered' or 'smoothed', "
            f"got {probabilities!r}")
    w = predictive_weights(row, params.Q, h)
    comps = tuple(
        Component(params.mu[l], params.Sigma[l],
                  None if params.nu is None else params.nu[l])
        for l in range(params.L))
    return MixtureDistribution(model.family, w, comps)


def risk_path(model: FittedModel, spec: ConditioningSpec,
              measure: RiskMeasure, h: int = 1,
              probabilities: str = "filtered",
              convention: DofConvention = DofConvention.PAPER) -> list:
    """The measure evaluated on the h-step predictive mixture at every
    origin t = 1..T.  Per-t failures are logged and left as gaps."""
    measure = RiskMeasure(measure)
    PredictiveSpec(1, h)
    points = []
    for t in range(1, model.T + 1):
        mix = _mixture_at(model, t, h, probabilities)
        try:
            value = _measure_value(mix, measure, spec, convention)
        except MsriskError as exc:
            logger.warning("t=%d: %s skipped: %s", t, measure.value, exc)
            continue
        points.append(RiskPoint(t=t, asset=spec.target, measure=measure,
                                value=value, spec=spec))
    return points
