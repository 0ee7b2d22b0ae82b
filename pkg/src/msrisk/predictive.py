"""h-step-ahead predictive mixtures and their marginal/conditional calculus.

A fitted switching model induces, at each origin time t, a finite mixture
over the emission laws with weights equal to the filtered state
probabilities propagated h steps through the transition matrix.  Closing
the family under marginalization and conditioning is what makes every
risk measure downstream analytic.

Asset indices are 0-based.  The origin time index is 1-based: origin_t
ranges over 1..T so that origin_t = T conditions on the full sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Component,
    DofConvention,
    FittedModel,
    MixtureDistribution,
    ModelFamily,
    ParamError,
)
from .dist import mahalanobis_sq, mvn_logpdf, mvt_logpdf

__all__ = [
    "PredictiveSpec",
    "predictive_mixture",
    "marginalize",
    "condition",
]


@dataclass(frozen=True)
class PredictiveSpec:
    """Forecast origin (1-based, 1..T) and horizon (>= 1)."""

    origin_t: int
    horizon_h: int = 1

    def __post_init__(self):
        if self.origin_t < 1:
            raise ParamError(
                f"origin_t must be >= 1, got {self.origin_t}")
        if self.horizon_h < 1:
            raise ParamError(
                f"horizon_h must be >= 1, got {self.horizon_h}")


def predictive_weights(filtered_row: np.ndarray, Q: np.ndarray,
                       h: int) -> np.ndarray:
    w = filtered_row @ np.linalg.matrix_power(Q, h)
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def predictive_mixture(model: FittedModel,
                       spec: PredictiveSpec) -> MixtureDistribution:
    """Mixture law of Y_{t+h} given data through origin_t.

    Weights are filtered[origin_t] propagated h steps through Q; the
    components are the state emission laws.
    """
    if spec.origin_t > model.T:
        raise ParamError(
            f"origin_t {spec.origin_t} exceeds sample length {model.T}")
    params = model.params
    w = predictive_weights(model.filtered[spec.origin_t - 1], params.Q,
                           spec.horizon_h)
    comps = tuple(
        Component(params.mu[l], params.Sigma[l],
                  None if params.nu is None else params.nu[l])
        for l in range(params.L))
    return MixtureDistribution(model.family, w, comps)


def _check_indices(idx, dim: int, name: str) -> list:
    idx = [int(j) for j in idx]
    if not idx:
        raise ParamError(f"{name} must be nonempty")
    if len(set(idx)) != len(idx):
        raise ParamError(f"{name} indices must be distinct")
    if any(j < 0 or j >= dim for j in idx):
        raise ParamError(f"{name} index out of range 0..{dim - 1}")
    return idx


def marginalize(mix: MixtureDistribution, keep) -> MixtureDistribution:
    """Mixture of the kept coordinates: weights unchanged, each component
    restricted to the matching mean/scale block (dof carried over)."""
    keep = _check_indices(keep, mix.dim, "keep")
    comps = tuple(
        Component(c.mu[keep], c.Sigma[np.ix_(keep, keep)], c.nu)
        for c in mix.components)
    return MixtureDistribution(mix.family, mix.weights, comps)


def condition(mix: MixtureDistribution, given, values,
              convention: DofConvention = DofConvention.PAPER
              ) -> MixtureDistribution:
    """Mixture law of the free coordinates given exact values elsewhere.

    Component weights are reweighted by the marginal component density of
    the conditioning values (computed in log-space with max subtraction,
    so conditioning deep in a tail cannot underflow).  Gaussian components
    condition by the Schur complement.  Student-t components keep the
    Schur-complement location and inflate the scale by
    (nu + mahalanobis)/(nu + k); the dof conventions differ in k:

      PAPER    : dof = nu + p1 (p1 = number of free coordinates), k = p1
      STANDARD : dof = nu + p2 (p2 = number of conditioned coordinates),
                 k = p2 (the classical conditional-t law)

    The two agree exactly when p1 == p2.
    """
    convention = DofConvention(convention)
    given = _check_indices(given, mix.dim, "given")
    if len(given) >= mix.dim:
        raise ParamError("given must be a proper subset of coordinates")
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.shape != (len(given),):
        raise ParamError("values length does not match given")
    if not np.all(np.isfinite(values)):
        raise ParamError("conditioning values must be finite")
    free = [j for j in range(mix.dim) if j not in set(given)]
    p1 = len(free)
    p2 = len(given)

    logw = np.empty(mix.K)
    comps = []
    for k, c in enumerate(mix.components):
        mu2 = c.mu[given]
        S22 = c.Sigma[np.ix_(given, given)]
        S12 = c.Sigma[np.ix_(free, given)]
        S11 = c.Sigma[np.ix_(free, free)]
        try:
            sol = np.linalg.solve(S22, values - mu2)
            gain = np.linalg.solve(S22, S12.T).T
        except np.linalg.LinAlgError:
            raise ParamError(
                f"conditioning block of component {k} is singular")
        mu_c = c.mu[free] + S12 @ sol
        S_c = S11 - gain @ S12.T
        S_c = 0.5 * (S_c + S_c.T)
        if mix.family is ModelFamily.STUDENT_T:
            logw[k] = mvt_logpdf(values, mu2, S22, c.nu)
            d2 = float(mahalanobis_sq(values, mu2, S22))
            if convention is DofConvention.PAPER:
                dof = c.nu + p1
                S_c = S_c * (c.nu + d2) / (c.nu + p1)
            else:
                dof = c.nu + p2
                S_c = S_c * (c.nu + d2) / (c.nu + p2)
            comps.append(Component(mu_c, S_c, dof))
        else:
            logw[k] = mvn_logpdf(values, mu2, S22)
            comps.append(Component(mu_c, S_c, None))
    logw = logw + np.log(mix.weights, where=mix.weights > 0,
                         out=np.full(mix.K, -np.inf))
    m = logw.max()
    if not np.isfinite(m):
        raise ParamError("all component weights vanish at the "
                         "conditioning values")
    w = np.exp(logw - m)
    return MixtureDistribution(mix.family, w / w.sum(), tuple(comps))
