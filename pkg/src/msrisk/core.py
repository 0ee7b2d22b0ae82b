"""Shared domain types, structural validation, and canonical JSON serialization.

Conventions used across the package:

* time and asset indices are 0-based in the Python API,
* covariance/scale matrices are stored in full, row-major,
* every container is immutable after construction and safe to share
  across concurrent workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

NU_MIN = 2.1
NU_MAX = 200.0


# ---------------------------------------------------------------------------
# errors


class MsriskError(Exception):
    """Base class for every error raised by this package."""


class PanelError(MsriskError, ValueError):
    """Invalid return panel (shape, missing data, ordering)."""


class ParamError(MsriskError, ValueError):
    """Invalid model or mixture parameters."""


class NumericalError(MsriskError, ArithmeticError):
    """A computation produced a non-finite or impossible value."""

    def __init__(self, message: str, t: Optional[int] = None,
                 state: Optional[int] = None):
        super().__init__(message)
        self.t = t
        self.state = state


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization failed on a matrix required to be PD."""


class DegenerateStateError(MsriskError):
    """A hidden state lost all responsibility during EM."""

    def __init__(self, state: int, weight: float):
        super().__init__(
            f"state {state} has total responsibility {weight:.3e} < 1e-8")
        self.state = state
        self.weight = weight


class FitFailureError(MsriskError):
    """Every EM restart failed; diagnostics attached per restart."""

    def __init__(self, diagnostics: Sequence[str]):
        super().__init__("all restarts failed: " + "; ".join(diagnostics))
        self.diagnostics = tuple(diagnostics)


class DivergentTailError(MsriskError, ValueError):
    """Tail expectation requested for a law with no finite tail mean."""


class TailUnderflowError(MsriskError, ArithmeticError):
    """Total probability mass below the threshold underflows to zero."""


class UnsupportedDimensionError(MsriskError, ValueError):
    """Dimension exceeds what the multivariate CDF/TCE routines support."""


class InfeasibleSlabError(MsriskError):
    """Slab acceptance rate too low; the caller must widen the slab."""


# ---------------------------------------------------------------------------
# enums


class ModelFamily(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "t"


class DofConvention(str, Enum):
    """Degrees-of-freedom convention for conditional Student-t laws.

    PAPER keeps dof = p1 + nu (p1 = number of free coordinates) with the
    matching scale factor; STANDARD uses the classical conditional-t result,
    dof = nu + p2 (p2 = number of conditioning coordinates) with scale
    inflation (nu + mahalanobis) / (nu + p2).  The two coincide when p1 = p2.
    """

    PAPER = "paper"
    STANDARD = "standard"


class RiskMeasure(str, Enum):
    VAR = "var"
    ES = "es"
    MCOVAR = "mcovar"
    MCOES = "mcoes"
    DELTA_MCOVAR = "delta_mcovar"
    DELTA_MCOES = "delta_mcoes"


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# panel


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """T x p panel of per-period returns with ISO-8601 timestamps."""

    timestamps: tuple
    assets: tuple
    values: np.ndarray

    def __init__(self, timestamps: Iterable[str], assets: Iterable[str],
                 values: np.ndarray):
        object.__setattr__(self, "timestamps", tuple(str(s) for s in timestamps))
        object.__setattr__(self, "assets", tuple(str(a) for a in assets))
        object.__setattr__(self, "values", _frozen(np.atleast_2d(values)))
        self._check()

    def _check(self) -> None:
        T, p = self.values.shape
        if T < 2:
            raise PanelError(f"panel needs T >= 2 observations, got {T}")
        if p < 1:
            raise PanelError("panel needs at least one asset")
        if len(self.timestamps) != T:
            raise PanelError("timestamps length does not match row count")
        if len(self.assets) != p:
            raise PanelError("asset labels do not match column count")
        if len(set(self.assets)) != p:
            raise PanelError("asset labels are not unique")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise PanelError(
                f"non-finite value at row {bad[0]}, column {bad[1]}")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise PanelError(f"timestamps not strictly increasing: "
                                 f"{a!r} !< {b!r}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# model parameters


@dataclass(frozen=True, eq=False)
class MsmParams:
    """Markov-switching model parameters.

    delta : (L,) initial state probabilities
    Q     : (L, L) transition matrix, rows sum to one
    mu    : (L, p) state means (locations for Student-t emissions)
    Sigma : (L, p, p) state covariance (Gaussian) or scale (Student-t)
    nu    : (L,) degrees of freedom, present only for Student-t
    """

    delta: np.ndarray
    Q: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    nu: Optional[np.ndarray] = None

    def __init__(self, delta, Q, mu, Sigma, nu=None):
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "mu", _frozen(np.atleast_2d(mu)))
        object.__setattr__(self, "Sigma", _frozen(Sigma))
        object.__setattr__(self, "nu",
                           None if nu is None else _frozen(np.atleast_1d(nu)))
        if self.Sigma.ndim != 3:
            raise ParamError("Sigma must be an (L, p, p) array")

    @property
    def L(self) -> int:
        return self.delta.shape[0]

    @property
    def p(self) -> int:
        return self.mu.shape[1]

    @property
    def family(self) -> ModelFamily:
        return ModelFamily.GAUSSIAN if self.nu is None else ModelFamily.STUDENT_T

    def scale_decomposition(self, l: int):
        """Return (lam, corr) with Sigma_l = diag(lam) @ corr @ diag(lam)."""
        S = self.Sigma[l]
        lam = np.sqrt(np.diag(S))
        corr = S / np.outer(lam, lam)
        return lam, corr


def validate(params: MsmParams) -> list:
    """Check every structural invariant; return a list of violation strings.

    An empty list means the parameters are accepted by every downstream
    operation.  Eigenvalues are examined only here; hot paths rely on
    Cholesky success instead.
    """
    v = []
    L = params.L
    p = params.p
    if params.delta.shape != (L,):
        v.append(f"delta has shape {params.delta.shape}, expected ({L},)")
    if np.any(params.delta < 0):
        v.append("delta has negative entries")
    s = float(params.delta.sum())
    if abs(s - 1.0) > 1e-12:
        v.append(f"delta sums to {s!r}, expected 1 within 1e-12")
    if params.Q.shape != (L, L):
        v.append(f"Q has shape {params.Q.shape}, expected ({L}, {L})")
    else:
        if np.any(params.Q < 0):
            v.append("Q has negative entries")
        rows = params.Q.sum(axis=1)
        for l, r in enumerate(rows):
            if abs(r - 1.0) > 1e-12:
                v.append(f"Q row {l} sums to {r!r}, expected 1 within 1e-12")
    if params.mu.shape != (L, p):
        v.append(f"mu has shape {params.mu.shape}, expected ({L}, {p})")
    if params.Sigma.shape != (L, p, p):
        v.append(f"Sigma has shape {params.Sigma.shape}, expected "
                 f"({L}, {p}, {p})")
    else:
        for l in range(L):
            S = params.Sigma[l]
            asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
            if asym > 1e-10:
                v.append(f"Sigma_{l} asymmetric by {asym:.3e} (> 1e-10)")
                continue
            w = np.linalg.eigvalsh(0.5 * (S + S.T))
            if w.min() <= 0:
                v.append(f"Sigma_{l} not PD (min eigenvalue {w.min():.3e})")
    if params.nu is not None:
        if params.nu.shape != (L,):
            v.append(f"nu has shape {params.nu.shape}, expected ({L},)")
        else:
            for l, n in enumerate(params.nu):
                if not (NU_MIN <= n <= NU_MAX):
                    v.append(f"nu_{l} = {n!r} outside [{NU_MIN}, {NU_MAX}]")
    return v


# ---------------------------------------------------------------------------
# mixtures


@dataclass(frozen=True, eq=False)
class Component:
    """One mixture component: location, covariance/scale, optional dof."""

    mu: np.ndarray
    Sigma: np.ndarray
    nu: Optional[float] = None

    def __init__(self, mu, Sigma, nu=None):
        object.__setattr__(self, "mu", _frozen(np.atleast_1d(mu)))
        object.__setattr__(self, "Sigma", _frozen(np.atleast_2d(Sigma)))
        object.__setattr__(self, "nu", None if nu is None else float(nu))


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    """Finite mixture of same-family, same-dimension components."""

    dim: int
    family: ModelFamily
    weights: np.ndarray
    components: tuple

    def __init__(self, family: ModelFamily, weights, components):
        comps = tuple(components)
        w = _frozen(np.atleast_1d(weights))
        if len(comps) == 0:
            raise ParamError("mixture needs at least one component")
        if w.shape != (len(comps),):
            raise ParamError("weights length does not match component count")
        if np.any(w < 0):
            raise ParamError("mixture weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ParamError(f"mixture weights sum to {float(w.sum())!r}, "
                             "expected 1 within 1e-12")
        d = comps[0].mu.shape[0]
        family = ModelFamily(family)
        for k, c in enumerate(comps):
            if c.mu.shape != (d,) or c.Sigma.shape != (d, d):
                raise ParamError(f"component {k} dimension mismatch")
            if family is ModelFamily.STUDENT_T and c.nu is None:
                raise ParamError(f"component {k} missing nu for Student-t")
            if family is ModelFamily.GAUSSIAN and c.nu is not None:
                raise ParamError(f"component {k} carries nu in a Gaussian "
                                 "mixture")
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def K(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# fitted model


@dataclass(frozen=True, eq=False)
class FittedModel:
    """EM output: parameters plus filtered/smoothed state quantities."""

    params: MsmParams
    family: ModelFamily
    loglik: float
    n_params: int
    aic: float
    bic: float
    filtered: np.ndarray
    smoothed: np.ndarray
    smoothed_pairs: np.ndarray
    w_hat: Optional[np.ndarray]
    converged: bool
    iterations: int
    restart_logliks: tuple
    # per-iteration log-likelihood traces, one list per restart; diagnostic
    # only, excluded from canonical JSON
    loglik_traces: tuple = field(default=(), compare=False)

    def __init__(self, params, family, loglik, n_params, aic, bic, filtered,
                 smoothed, smoothed_pairs, w_hat, converged, iterations,
                 restart_logliks, loglik_traces=()):
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "family", ModelFamily(family))
        object.__setattr__(self, "loglik", float(loglik))
        object.__setattr__(self, "n_params", int(n_params))
        object.__setattr__(self, "aic", float(aic))
        object.__setattr__(self, "bic", float(bic))
        object.__setattr__(self, "filtered", _frozen(filtered))
        object.__setattr__(self, "smoothed", _frozen(smoothed))
        object.__setattr__(self, "smoothed_pairs", _frozen(smoothed_pairs))
        object.__setattr__(self, "w_hat",
                           None if w_hat is None else _frozen(w_hat))
        object.__setattr__(self, "converged", bool(converged))
        object.__setattr__(self, "iterations", int(iterations))
        object.__setattr__(self, "restart_logliks",
                           tuple(float(x) for x in restart_logliks))
        object.__setattr__(self, "loglik_traces",
                           tuple(tuple(tr) for tr in loglik_traces))

    @property
    def T(self) -> int:
        return self.filtered.shape[0]

    @property
    def L(self) -> int:
        return self.filtered.shape[1]


# ---------------------------------------------------------------------------
# conditioning / shapley carriers


@dataclass(frozen=True)
class ConditioningSpec:
    """Which asset is measured, which are distressed, and at what levels.

    target      : index of the measured asset
    distressed  : indices pinned at their tau2 distress level
    tau1        : tail level of the conditional measure
    tau2        : distress level of the conditioning assets
    normal_level: level at which the remaining assets are pinned (0.5)
    """

    target: int
    distressed: tuple
    tau1: float
    tau2: float
    normal_level: float = 0.5

    def __init__(self, target: int, distressed: Iterable[int], tau1: float,
                 tau2: float, normal_level: float = 0.5):
        distressed = tuple(sorted(int(j) for j in distressed))
        target = int(target)
        if len(set(distressed)) != len(distressed):
            raise ParamError("distressed indices must be unique")
        if target in distressed:
            raise ParamError("target cannot be in the distressed set")
        if not distressed:
            raise ParamError("distressed set must be nonempty")
        if not (0.0 < tau1 < 1.0 and 0.0 < tau2 < 1.0):
            raise ParamError("tau1 and tau2 must lie in (0, 1)")
        if not (0.0 < normal_level < 1.0):
            raise ParamError("normal_level must lie in (0, 1)")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "distressed", distressed)
        object.__setattr__(self, "tau1", float(tau1))
        object.__setattr__(self, "tau2", float(tau2))
        object.__setattr__(self, "normal_level", float(normal_level))


@dataclass(frozen=True, eq=False)
class ShapleyReport:
    """Exact Shapley allocation of a subset value table."""

    target: int
    measure: RiskMeasure
    players: tuple
    subset_values: Mapping
    shares: np.ndarray
    total: float

    def __init__(self, target, measure, players, subset_values, shares,
                 total):
        object.__setattr__(self, "target", int(target))
        object.__setattr__(self, "measure", RiskMeasure(measure))
        object.__setattr__(self, "players", tuple(int(j) for j in players))
        object.__setattr__(self, "subset_values", dict(subset_values))
        object.__setattr__(self, "shares", _frozen(shares))
        object.__setattr__(self, "total", float(total))


# ---------------------------------------------------------------------------
# canonical JSON

# Field order is fixed so that serialize -> parse -> serialize is
# byte-identical.  Floats use Python repr (shortest round-trip, at most 17
# significant digits).


def _params_dict(params: MsmParams) -> dict:
    return {
        "L": params.L,
        "p": params.p,
        "family": params.family.value,
        "delta": params.delta.tolist(),
        "Q": params.Q.tolist(),
        "mu": params.mu.tolist(),
        "Sigma": params.Sigma.tolist(),
        "nu": None if params.nu is None else params.nu.tolist(),
    }


def params_to_json(params: MsmParams) -> str:
    """Serialize MsmParams to canonical JSON text."""
    return json.dumps(_params_dict(params), indent=2)


def params_from_json(text: str) -> MsmParams:
    d = json.loads(text)
    return MsmParams(delta=d["delta"], Q=d["Q"], mu=d["mu"], Sigma=d["Sigma"],
                     nu=d.get("nu"))


def model_to_json(model: FittedModel) -> str:
    """Serialize FittedModel to canonical JSON text."""
    d = {
        "family": model.family.value,
        "params": _params_dict(model.params),
        "loglik": model.loglik,
        "n_params": model.n_params,
        "aic": model.aic,
        "bic": model.bic,
        "converged": model.converged,
        "iterations": model.iterations,
        "restart_logliks": list(model.restart_logliks),
        "filtered": model.filtered.tolist(),
        "smoothed": model.smoothed.tolist(),
        "smoothed_pairs": model.smoothed_pairs.tolist(),
        "w_hat": None if model.w_hat is None else model.w_hat.tolist(),
    }
    return json.dumps(d, indent=2)


def model_from_json(text: str) -> FittedModel:
    d = json.loads(text)
    pd_ = d["params"]
    params = MsmParams(delta=pd_["delta"], Q=pd_["Q"], mu=pd_["mu"],
                       Sigma=pd_["Sigma"], nu=pd_.get("nu"))
    return FittedModel(
        params=params, family=d["family"], loglik=d["loglik"],
        n_params=d["n_params"], aic=d["aic"], bic=d["bic"],
        filtered=np.array(d["filtered"]), smoothed=np.array(d["smoothed"]),
        smoothed_pairs=np.array(d["smoothed_pairs"]),
        w_hat=None if d["w_hat"] is None else np.array(d["w_hat"]),
        converged=d["converged"], iterations=d["iterations"],
        restart_logliks=d["restart_logliks"])
