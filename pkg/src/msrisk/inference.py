"""Maximum-likelihood fitting of Gaussian and Student-t Markov-switching
models.

The likelihood is evaluated by a scaled forward recursion (log-domain
normalizers, so T in the thousands cannot underflow), posteriors by
forward-filtering backward-smoothing, and estimation by EM with analytic
M-step updates for everything except the Student-t degrees of freedom,
which solve a digamma equation either by the Shoham closed-form
approximation or by bracketed root-finding.

Time indices are 0-based throughout; state labels are 0-based and are
relabeled so that state 0 has the smallest scale trace (lowest
volatility) in every fitted model.
"""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .core import (
    NU_MAX,
    NU_MIN,
    DegenerateStateError,
    FitFailureError,
    FittedModel,
    ModelFamily,
    MsmParams,
    NotPositiveDefiniteError,
    NumericalError,
    ParamError,
    ReturnPanel,
    _frozen,
    validate,
)
from .dist import mahalanobis_sq, mvn_logpdf, mvt_logpdf

__all__ = [
    "FitOptions",
    "NuUpdate",
    "SufficientStats",
    "SelectionRow",
    "SelectionTable",
    "forward_loglik",
    "e_step",
    "m_step",
    "update_nu_shoham",
    "update_nu_bisection",
    "fit",
    "viterbi",
    "select",
    "n_params_count",
]

# Shoham approximation constants for the degrees-of-freedom update
_A0 = 0.0416
_A1 = 0.6594
_A2 = 2.1971


class NuUpdate(str, Enum):
    SHOHAM = "shoham"
    BISECTION = "bisection"


@dataclass(frozen=True)
class FitOptions:
    """Knobs for the EM fit.

    restarts   : number of independent random starts
    max_iter   : EM iteration cap per restart
    loglik_tol : stop when the log-likelihood increase falls below this
    seed       : base seed; restart r draws from stream (seed, r)
    nu_update  : degrees-of-freedom update rule for Student-t fits
    jitter     : relative ridge added once to a non-PD scale estimate
    """

    restarts: int = 20
    max_iter: int = 1000
    loglik_tol: float = 1e-5
    seed: int = 0
    nu_update: NuUpdate = NuUpdate.SHOHAM
    jitter: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1:
            raise ParamError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iter < 1:
            raise ParamError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.loglik_tol <= 0:
            raise ParamError("loglik_tol must be positive")
        object.__setattr__(self, "nu_update", NuUpdate(self.nu_update))


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """E-step output: smoothed state, pair, and scale-weight expectations.

    zhat  : T x L smoothed P(S_t = l | y_1..T)
    zzhat : (T-1) x L x L smoothed P(S_t = l, S_{t+1} = k | y_1..T)
    what  : T x L conditional scale weights (all ones for Gaussian)
    """

    zhat: np.ndarray
    zzhat: np.ndarray
    what: np.ndarray

    def __init__(self, zhat, zzhat, what):
        object.__setattr__(self, "zhat", _frozen(zhat))
        object.__setattr__(self, "zzhat", _frozen(zzhat))
        object.__setattr__(self, "what", _frozen(what))
        T, L = self.zhat.shape
        if self.zzhat.shape != (T - 1, L, L):
            raise ParamError("zzhat shape does not match zhat")
        if self.what.shape != (T, L):
            raise ParamError("what shape does not match zhat")
        if np.any(self.what <= 0):
            raise ParamError("what must be positive elementwise")
        if np.any(np.abs(self.zhat.sum(axis=1) - 1.0) > 1e-9):
            raise ParamError("zhat rows must sum to 1")
        if T > 1 and np.any(np.abs(self.zzhat.sum(axis=(1, 2)) - 1.0)
                            > 1e-9):
            raise ParamError("zzhat slices must sum to 1")


# ---------------------------------------------------------------------------
# forward / backward


def _log_emissions(panel: ReturnPanel, params: MsmParams,
                   family: ModelFamily) -> np.ndarray:
    y = panel.values
    logf = np.empty((panel.T, params.L))
    for l in range(params.L):
        if family is ModelFamily.STUDENT_T:
            logf[:, l] = mvt_logpdf(y, params.mu[l], params.Sigma[l],
                                    params.nu[l])
        else:
            logf[:, l] = mvn_logpdf(y, params.mu[l], params.Sigma[l])
    if not np.all(np.isfinite(logf)):
        t, l = map(int, np.argwhere(~np.isfinite(logf))[0])
        raise NumericalError(
            f"non-finite log-density at t={t}, state={l}", t=t, state=l)
    return logf


def _check_inputs(panel: ReturnPanel, params: MsmParams,
                  family: ModelFamily) -> ModelFamily:
    family = ModelFamily(family)
    problems = validate(params)
    if problems:
        raise ParamError("; ".join(problems))
    if family is ModelFamily.STUDENT_T and params.nu is None:
        raise ParamError("Student-t family requires nu in params")
    if params.p != panel.p:
        raise ParamError(
            f"params dimension {params.p} does not match panel {panel.p}")
    return family


def _forward(logf: np.ndarray, params: MsmParams):
    """Scaled forward pass.

    Returns (loglik, filtered, lognorm) where lognorm[t] is the log of the
    per-step normalizer log P(y_t | y_1..t-1); their sum is the loglik.
    """
    T, L = logf.shape
    filtered = np.empty((T, L))
    lognorm = np.empty(T)
    with np.errstate(divide="ignore"):
        la = np.log(params.delta) + logf[0]
    for t in range(T):
        if t > 0:
            pred = filtered[t - 1] @ params.Q
            with np.errstate(divide="ignore"):
                la = np.log(pred) + logf[t]
        m = la.max()
        if not np.isfinite(m):
            raise NumericalError(
                f"forward recursion lost all mass at t={t}", t=t)
        s = m + math.log(np.sum(np.exp(la - m)))
        lognorm[t] = s
        filtered[t] = np.exp(la - s)
    return float(lognorm.sum()), filtered, lognorm


def forward_loglik(panel: ReturnPanel, params: MsmParams,
                   family) -> Tuple[float, np.ndarray]:
    """Exact log-likelihood and filtered state probabilities P(S_t|y_1..t)."""
    family = _check_inputs(panel, params, family)
    logf = _log_emissions(panel, params, family)
    loglik, filtered, _ = _forward(logf, params)
    return loglik, filtered


def _what_matrix(panel: ReturnPanel, params: MsmParams,
                 family: ModelFamily) -> np.ndarray:
    if family is ModelFamily.GAUSSIAN:
        return np.ones((panel.T, params.L))
    p = panel.p
    what = np.empty((panel.T, params.L))
    for l in range(params.L):
        m = mahalanobis_sq(panel.values, params.mu[l], params.Sigma[l])
        what[:, l] = (params.nu[l] + p) / (params.nu[l] + m)
    return what


def _e_step_full(panel: ReturnPanel, params: MsmParams,
                 family: ModelFamily):
    logf = _log_emissions(panel, params, family)
    loglik, filtered, lognorm = _forward(logf, params)
    T, L = logf.shape
    zhat = np.empty((T, L))
    zzhat = np.empty((T - 1, L, L))
    beta = np.ones(L)
    zhat[T - 1] = filtered[T - 1]
    for t in range(T - 2, -1, -1):
        r = np.exp(logf[t + 1] - lognorm[t + 1]) * beta
        pair = filtered[t][:, None] * params.Q * r[None, :]
        zzhat[t] = pair / pair.sum()
        beta = params.Q @ r
        z = filtered[t] * beta
        zhat[t] = z / z.sum()
    what = _what_matrix(panel, params, family)
    stats = SufficientStats(zhat=zhat, zzhat=zzhat, what=what)
    return stats, loglik, filtered


def e_step(panel: ReturnPanel, params: MsmParams, family) -> SufficientStats:
    """Smoothed one-state and two-state posteriors plus scale weights."""
    family = _check_inputs(panel, params, family)
    stats, _, _ = _e_step_full(panel, params, family)
    return stats


# ---------------------------------------------------------------------------
# degrees-of-freedom update


def _nu_equation(nu: float, h: float) -> float:
    # log(nu/2) - psi(nu/2) + 1 - h, strictly decreasing in nu
    return math.log(nu / 2.0) - special.digamma(nu / 2.0) + 1.0 - h


def update_nu_bisection(h: float) -> float:
    """Root of the degrees-of-freedom equation on [NU_MIN, NU_MAX].

    The left side is strictly decreasing in nu, so a root outside the
    bracket clamps to the matching endpoint.
    """
    if _nu_equation(NU_MIN, h) < 0.0:
        return NU_MIN
    if _nu_equation(NU_MAX, h) > 0.0:
        return NU_MAX
    return float(optimize.brentq(_nu_equation, NU_MIN, NU_MAX,
                                 args=(h,), xtol=1e-10))


def update_nu_shoham(h: float) -> float:
    """Closed-form approximate solution of the degrees-of-freedom equation.

    nu = 2/(h + ln h - 1) + a0 [1 + erf(a1 ln(a2/(h + ln h - 1)))] with
    a0=0.0416, a1=0.6594, a2=2.1971.  Outside the approximation's domain
    (h + ln h <= 1) the bracketed root-finder is used instead.
    """
    if h <= 0.0 or h + math.log(h) - 1.0 <= 0.0:
        return update_nu_bisection(h)
    d = h + math.log(h) - 1.0
    nu = 2.0 / d + _A0 * (1.0 + special.erf(_A1 * math.log(_A2 / d)))
    if not math.isfinite(nu) or nu <= 0.0:
        return update_nu_bisection(h)
    return float(nu)


def _nu_objective(nu: float, h: float) -> float:
    # the nu-dependent part of the expected complete-data log-likelihood,
    # per unit responsibility; concave in nu
    x = nu / 2.0
    return x * math.log(x) - special.gammaln(x) - x * h


def _update_nu(h: float, nu_prev: float, rule: NuUpdate) -> float:
    if rule is NuUpdate.BISECTION:
        return min(max(update_nu_bisection(h), NU_MIN), NU_MAX)
    cand = min(max(update_nu_shoham(h), NU_MIN), NU_MAX)
    # the approximation must not step downhill on the objective; if it
    # does, fall back to the exact root
    prev = min(max(nu_prev, NU_MIN), NU_MAX)
    q_cand = _nu_objective(cand, h)
    q_prev = _nu_objective(prev, h)
    if q_cand < q_prev - 1e-12 * abs(q_prev):
        return min(max(update_nu_bisection(h), NU_MIN), NU_MAX)
    return cand


# ---------------------------------------------------------------------------
# M-step


def _repair_pd(S: np.ndarray, jitter: float) -> np.ndarray:
    try:
        np.linalg.cholesky(S)
        return S
    except np.linalg.LinAlgError:
        pass
    ridge = jitter * np.trace(S) / S.shape[0]
    S2 = S + ridge * np.eye(S.shape[0])
    try:
        np.linalg.cholesky(S2)
        return S2
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "scale estimate not positive definite after jitter repair")


def m_step(panel: ReturnPanel, stats: SufficientStats, prev: MsmParams,
           family, opts: Optional[FitOptions] = None) -> MsmParams:
    """One EM parameter update from smoothed expectations.

    delta = first-step smoothed state; Q rows from pair sums; mu and Sigma
    are responsibility-times-scale-weight weighted moments; Student-t nu
    solves the degrees-of-freedom equation and clamps to [2.1, 200].
    """
    family = ModelFamily(family)
    if opts is None:
        opts = FitOptions()
    y = panel.values
    T, p = y.shape
    L = prev.L
    if stats.zhat.shape != (T, L):
        raise ParamError("stats shape does not match panel/params")

    resp = stats.zhat.sum(axis=0)
    for l in range(L):
        if resp[l] < 1e-8:
            raise DegenerateStateError(l, float(resp[l]))

    delta = np.clip(stats.zhat[0], 0.0, None)
    delta = delta / delta.sum()

    qsum = stats.zzhat.sum(axis=0)
    rows = qsum.sum(axis=1, keepdims=True)
    Q = np.where(rows > 0, qsum / np.where(rows > 0, rows, 1.0),
                 1.0 / L)

    zw = stats.zhat * stats.what
    sw = zw.sum(axis=0)
    mu = np.empty((L, p))
    Sigma = np.empty((L, p, p))
    for l in range(L):
        if sw[l] <= 0:
            raise DegenerateStateError(l, float(sw[l]))
        mu[l] = zw[:, l] @ y / sw[l]
        xc = y - mu[l]
        S = (zw[:, l] * xc.T) @ xc / sw[l]
        Sigma[l] = _repair_pd(0.5 * (S + S.T), opts.jitter)

    nu = None
    if family is ModelFamily.STUDENT_T:
        nu = np.empty(L)
        for l in range(L):
            nu_prev = float(prev.nu[l])
            w = stats.what[:, l]
            m = (nu_prev + p) / w - nu_prev
            elog = (special.digamma((nu_prev + p) / 2.0) + math.log(2.0)
                    - np.log(nu_prev + m))
            h = float(stats.zhat[:, l] @ (w - elog) / resp[l])
            nu[l] = _update_nu(h, nu_prev, opts.nu_update)

    return MsmParams(delta=delta, Q=Q, mu=mu, Sigma=Sigma, nu=nu)


# ---------------------------------------------------------------------------
# fitting


def n_params_count(L: int, p: int, family) -> int:
    """Free-parameter count: means, scale matrices, transition rows, the
    initial law, and one dof per state for Student-t."""
    family = ModelFamily(family)
    k = L * p + L * p * (p + 1) // 2 + L * (L - 1) + (L - 1)
    if family is ModelFamily.STUDENT_T:
        k += L
    return k


def _restart_stream(seed: int, r: int) -> np.random.Generator:
    key = zlib.crc32(b"restart")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, r))
    return np.random.Generator(np.random.Philox(ss))


def _init_params(panel: ReturnPanel, L: int, family: ModelFamily,
                 rng: np.random.Generator) -> MsmParams:
    """Moment-based start from a random hard state assignment."""
    y = panel.values
    T, p = y.shape
    labels = None
    for _ in range(100):
        cand = rng.integers(0, L, size=T)
        if all(np.count_nonzero(cand == l) >= min(p + 1, T // L)
               for l in range(L)):
            labels = cand
            break
    if labels is None:
        # deterministic fallback: contiguous blocks of the sorted first
        # coordinate, guaranteed balanced
        order = np.argsort(y[:, 0], kind="stable")
        labels = np.empty(T, dtype=int)
        for l, block in enumerate(np.array_split(order, L)):
            labels[block] = l
    mu = np.empty((L, p))
    Sigma = np.empty((L, p, p))
    base = np.cov(y.T, ddof=0).reshape(p, p)
    for l in range(L):
        sub = y[labels == l]
        mu[l] = sub.mean(axis=0)
        S = np.cov(sub.T, ddof=0).reshape(p, p) if sub.shape[0] > p \
            else base.copy()
        S += (1e-6 * np.trace(S) / p + 1e-12) * np.eye(p)
        Sigma[l] = 0.5 * (S + S.T)
    Q = np.full((L, L), 0.1 / (L - 1)) if L > 1 else np.ones((1, 1))
    if L > 1:
        np.fill_diagonal(Q, 0.9)
    delta = np.full(L, 1.0 / L)
    nu = np.full(L, 10.0) if family is ModelFamily.STUDENT_T else None
    return MsmParams(delta=delta, Q=Q, mu=mu, Sigma=Sigma, nu=nu)


def _run_em(panel: ReturnPanel, params: MsmParams, family: ModelFamily,
            opts: FitOptions):
    trace = []
    ll_prev = -np.inf
    converged = False
    iterations = 0
    while True:
        # stats/filtered always correspond to the params reported below
        stats, ll, filtered = _e_step_full(panel, params, family)
        trace.append(ll)
        if np.isfinite(ll_prev):
            delta_ll = ll - ll_prev
            if abs(delta_ll) < opts.loglik_tol or \
                    abs(delta_ll) <= 1e-10 * abs(ll_prev):
                converged = True
                break
        if iterations >= opts.max_iter:
            break
        ll_prev = ll
        params = m_step(panel, stats, params, family, opts)
        iterations += 1
    return {
        "params": params,
        "loglik": trace[-1],
        "stats": stats,
        "filtered": filtered,
        "iterations": iterations,
        "converged": converged,
        "trace": tuple(trace),
    }


def _worker_count(restarts: int) -> int:
    env = os.environ.get("MSRISK_THREADS", "")
    if env.strip():
        try:
            return max(1, min(int(env), restarts))
        except ValueError:
            raise ParamError(f"MSRISK_THREADS is not an integer: {env!r}")
    return 1


def _relabel(result: dict, panel: ReturnPanel, family: ModelFamily) -> dict:
    params = result["params"]
    order = np.argsort([np.trace(S) for S in params.Sigma], kind="stable")
    if np.array_equal(order, np.arange(params.L)):
        return result
    perm = np.asarray(order)
    params2 = MsmParams(
        delta=params.delta[perm],
        Q=params.Q[np.ix_(perm, perm)],
        mu=params.mu[perm],
        Sigma=params.Sigma[perm],
        nu=None if params.nu is None else params.nu[perm],
    )
    # recompute instead of permuting the stored arrays: permuting changes
    # float summation order, and the stored state quantities must be
    # bit-identical to a fresh e-step at the stored params
    stats2, ll2, filtered2 = _e_step_full(panel, params2, family)
    out = dict(result)
    out["params"] = params2
    out["stats"] = stats2
    out["filtered"] = filtered2
    out["loglik"] = ll2
    return out


def fit(panel: ReturnPanel, L: int, family,
        opts: Optional[FitOptions] = None) -> FittedModel:
    """Best-of-restarts EM fit.

    Each restart draws its own moment-based initialization from an
    independent stream keyed by (seed, restart index); the winner is the
    highest final log-likelihood, ties resolved toward the lower restart
    index.  States are relabeled by ascending trace of the scale matrix.
    """
    family = ModelFamily(family)
    if opts is None:
        opts = FitOptions()
    if L < 1:
        raise ParamError(f"L must be >= 1, got {L}")
    if panel.T <= L * panel.p:
        raise ParamError(
            f"T={panel.T} too short to identify L={L} states of "
            f"dimension p={panel.p}")

    def one_restart(r: int):
        rng = _restart_stream(opts.seed, r)
        params0 = _init_params(panel, L, family, rng)
        return _run_em(panel, params0, family, opts)

    results = [None] * opts.restarts
    failures = [None] * opts.restarts
    workers = _worker_count(opts.restarts)

    def guarded(r: int):
        try:
            results[r] = one_restart(r)
        except (DegenerateStateError, NotPositiveDefiniteError,
                NumericalError) as exc:
            failures[r] = f"restart {r}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(guarded, range(opts.restarts)))
    else:
        for r in range(opts.restarts):
            guarded(r)

    best = None
    for r in range(opts.restarts):
        res = results[r]
        if res is not None and (best is None
                                or res["loglik"] > results[best]["loglik"]):
            best = r
    if best is None:
        raise FitFailureError([f for f in failures if f])

    chosen = _relabel(results[best], panel, family)
    k = n_params_count(L, panel.p, family)
    ll = chosen["loglik"]
    restart_lls = tuple(
        results[r]["loglik"] if results[r] is not None else float("nan")
        for r in range(opts.restarts))
    traces = tuple(
        results[r]["trace"] if results[r] is not None else ()
        for r in range(opts.restarts))
    stats = chosen["stats"]
    return FittedModel(
        params=chosen["params"],
        family=family,
        loglik=ll,
        n_params=k,
        aic=-2.0 * ll + 2.0 * k,
        bic=-2.0 * ll + k * math.log(panel.T),
        filtered=chosen["filtered"],
        smoothed=stats.zhat,
        smoothed_pairs=stats.zzhat,
        w_hat=stats.what if family is ModelFamily.STUDENT_T else None,
        converged=chosen["converged"],
        iterations=chosen["iterations"],
        restart_logliks=restart_lls,
        loglik_traces=traces,
    )


# ---------------------------------------------------------------------------
# decoding and model selection


def viterbi(panel: ReturnPanel, params: MsmParams, family) -> np.ndarray:
    """Most probable state path (max-sum; ties toward the lower index)."""
    family = _check_inputs(panel, params, family)
    logf = _log_emissions(panel, params, family)
    T, L = logf.shape
    with np.errstate(divide="ignore"):
        logQ = np.log(params.Q)
        score = np.log(params.delta) + logf[0]
    back = np.empty((T, L), dtype=int)
    for t in range(1, T):
        cand = score[:, None] + logQ
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(L)] + logf[t]
    path = np.empty(T, dtype=int)
    path[T - 1] = int(np.argmax(score))
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1][path[t + 1]]
    return path


@dataclass(frozen=True)
class SelectionRow:
    family: ModelFamily
    L: int
    loglik: float
    n_params: int
    aic: float
    bic: float
    converged: bool
    error: Optional[str] = None


@dataclass(frozen=True)
class SelectionTable:
    """Per-(family, L) information criteria with best-row flags."""

    rows: tuple
    min_aic_index: int
    min_bic_index: int

    def best_aic(self) -> SelectionRow:
        return self.rows[self.min_aic_index]

    def best_bic(self) -> SelectionRow:
        return self.rows[self.min_bic_index]


def select(panel: ReturnPanel, L_range: Sequence[int], families,
           opts: Optional[FitOptions] = None) -> SelectionTable:
    """Fit every (family, L) combination and tabulate AIC/BIC.

    Individual fit failures become rows with an error message; they are
    skipped when flagging the criterion minima.
    """
    if opts is None:
        opts = FitOptions()
    L_list = [int(L) for L in L_range]
    fam_list = [ModelFamily(f) for f in families]
    if not L_list or not fam_list:
        raise ParamError("L_range and families must be nonempty")
    rows = []
    for family in fam_list:
        for L in L_list:
            try:
                model = fit(panel, L, family, opts)
                rows.append(SelectionRow(
                    family=family, L=L, loglik=model.loglik,
                    n_params=model.n_params, aic=model.aic, bic=model.bic,
                    converged=model.converged))
            except (FitFailureError, ParamError, NumericalError) as exc:
                rows.append(SelectionRow(
                    family=family, L=L, loglik=float("nan"),
                    n_params=n_params_count(L, panel.p, family),
                    aic=float("nan"), bic=float("nan"), converged=False,
                    error=str(exc)))
    ok = [i for i, r in enumerate(rows) if r.error is None]
    if not ok:
        raise FitFailureError([r.error for r in rows])
    min_aic = min(ok, key=lambda i: rows[i].aic)
    min_bic = min(ok, key=lambda i: rows[i].bic)
    return SelectionTable(rows=tuple(rows), min_aic_index=min_aic,
                          min_bic_index=min_bic)
