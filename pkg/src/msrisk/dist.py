"""Probability kernel: Gaussian/Student-t densities, CDFs, quantiles, and
tail conditional expectations, for single laws and finite mixtures.

Multivariate CDFs use a separation-of-variables quasi Monte Carlo scheme
with a fixed internal seed, so results are reproducible bit for bit.  The
Student-t versions integrate the Gaussian quantities over the Gamma(nu/2,
nu/2) mixing law with a fixed-node quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special, stats
from scipy.optimize import brentq

from .core import (
    Component,
    DivergentTailError,
    MixtureDistribution,
    ModelFamily,
    NotPositiveDefiniteError,
    NumericalError,
    ParamError,
    TailUnderflowError,
    UnsupportedDimensionError,
    _frozen,
)

MAX_CDF_DIM = 12
_QMC_SEED = 20240813  # fixed: multivariate CDFs are reproducible per build
_GAMMA_NODES = 256
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TruncationBox:
    """Componentwise upper thresholds defining the lower-tail event Y <= y."""

    upper: np.ndarray

    def __init__(self, upper):
        u = _frozen(np.atleast_1d(upper))
        if not np.all(np.isfinite(u)):
            raise ParamError("truncation thresholds must be finite")
        object.__setattr__(self, "upper", u)

    @property
    def dim(self) -> int:
        return self.upper.shape[0]


# ---------------------------------------------------------------------------
# Cholesky plumbing


def _chol(Sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {e}")


def _solve_lower(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    return solve_triangular(L, B, lower=True, check_finite=False)


# ---------------------------------------------------------------------------
# log densities


def mvn_logpdf(x, mu, Sigma) -> np.ndarray:
    """Log density of N(mu, Sigma) at x; x may be (d,) or (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = mu.shape[0]
    L = _chol(Sigma)
    z = _solve_lower(L, (x - mu).T)
    m = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    out = -0.5 * (d * _LOG_2PI + logdet + m)
    return out[0] if out.shape == (1,) else out


def mvt_logpdf(x, mu, Sigma, nu: float) -> np.ndarray:
    """Log density of the d-variate Student-t with location mu, scale Sigma,
    and nu degrees of freedom; x may be (d,) or (n, d)."""
    if nu <= 0:
        raise ParamError(f"nu must be positive, got {nu}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = mu.shape[0]
    L = _chol(Sigma)
    z = _solve_lower(L, (x - mu).T)
    m = np.einsum("ij,ij->j", z, z)
    logdet2 = np.log(np.diag(L)).sum()
    out = (special.gammaln((nu + d) / 2.0) - special.gammaln(nu / 2.0)
           - 0.5 * d * math.log(nu * math.pi) - logdet2
           - 0.5 * (nu + d) * np.log1p(m / nu))
    return out[0] if out.shape == (1,) else out


def mahalanobis_sq(x, mu, Sigma) -> np.ndarray:
    """Squared Mahalanobis distance of rows of x from mu under Sigma."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    L = _chol(np.atleast_2d(Sigma))
    z = _solve_lower(L, (x - np.atleast_1d(mu)).T)
    m = np.einsum("ij,ij->j", z, z)
    return m[0] if m.shape == (1,) else m


# ---------------------------------------------------------------------------
# univariate t CDF / quantile (regularized incomplete beta under the hood)


def t_cdf(x: float, mu: float, sigma2: float, nu: float):
    """CDF of the location-scale Student-t at x."""
    if sigma2 <= 0:
        raise ParamError(f"sigma2 must be positive, got {sigma2}")
    if nu <= 0:
        raise ParamError(f"nu must be positive, got {nu}")
    z = (np.asarray(x, dtype=float) - mu) / math.sqrt(sigma2)
    return special.stdtr(nu, z)


def t_quantile(tau: float, mu: float, sigma2: float, nu: float) -> float:
    """Exact inverse of t_cdf: t_cdf(t_quantile(tau)) = tau within 1e-12."""
    if not 0.0 < tau < 1.0:
        raise ParamError(f"tau must lie in (0, 1), got {tau}")
    if sigma2 <= 0:
        raise ParamError(f"sigma2 must be positive, got {sigma2}")
    if nu <= 0:
        raise ParamError(f"nu must be positive, got {nu}")
    return mu + math.sqrt(sigma2) * float(special.stdtrit(nu, tau))


def _norm_cdf(x):
    return special.ndtr(x)


def _norm_quantile(tau: float, mu: float, sigma2: float) -> float:
    return mu + math.sqrt(sigma2) * float(special.ndtri(tau))


# ---------------------------------------------------------------------------
# multivariate Gaussian CDF (separation-of-variables QMC, fixed seed)


def _genz_points(B: np.ndarray, L: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Genz separation-of-variables integrand: per-point estimates of
    P(Z <= b) for every row b of B given Cholesky L and uniforms u."""
    n = u.shape[0]
    m, d = B.shape
    e = np.broadcast_to(_norm_cdf(B[:, 0] / L[0, 0]), (n, m)).copy()
    f = e.copy()
    y = np.empty((n, m, d - 1))
    for i in range(1, d):
        arg = np.clip(u[:, i - 1, None] * e, 1e-320, 1.0 - 1e-16)
        y[:, :, i - 1] = special.ndtri(arg)
        t = (B[:, i][None, :] - y[:, :, :i] @ L[i, :i]) / L[i, i]
        e = _norm_cdf(t)
        f *= e
    return f                                        # (n, m)


def _genz_batch(B: np.ndarray, Sigma: np.ndarray, tol: float, seed: int,
                agg: Optional[np.ndarray] = None
                ) -> Tuple[np.ndarray, float]:
    """Estimate P(Z <= b) for Z ~ N(0, Sigma) jointly for every row b of B.

    All rows share one covariance and one set of scrambled Sobol points;
    rows must order consistently (they do whenever rows are positive
    multiples of one vector, the only batched use).  When agg is given the
    escalation targets the error of the aggregate agg @ estimates instead
    of the worst row, which is what quadrature wrappers need.  Returns
    (row estimates, error estimate of the controlled quantity).
    """
    m, d = B.shape
    sd = np.sqrt(np.diag(Sigma))
    order = np.argsort(B[0] / sd)
    B = B[:, order]
    L = _chol(Sigma[np.ix_(order, order)])
    n = 256
    n_max = 1 << 17 if tol >= 5e-7 else 1 << 18
    n_batches = 10
    # chunk the point set so memory stays bounded for wide batches; a
    # power-of-two chunk keeps every Sobol draw a power of two as well
    budget = max(256, (1 << 21) // max(1, m * d))
    chunk = 1 << (budget.bit_length() - 1)
    root = np.random.SeedSequence(seed)
    while True:
        seeds = root.spawn(n_batches)
        ests = np.empty((n_batches, m))
        for k in range(n_batches):
            sob = stats.qmc.Sobol(d - 1, scramble=True,
                                  seed=np.random.default_rng(seeds[k]))
            done = 0
            acc = np.zeros(m)
            while done < n:
                take = min(chunk, n - done)
                u = sob.random(take)
                acc += _genz_points(B, L, u).sum(axis=0)
                done += take
            ests[k] = acc / n
        est = ests.mean(axis=0)
        if agg is None:
            err = 3.0 * ests.std(axis=0, ddof=1).max() / math.sqrt(n_batches)
        else:
            agg_ests = ests @ agg
            err = 3.0 * agg_ests.std(ddof=1) / math.sqrt(n_batches)
        if err < tol or n >= n_max:
            return est, float(err)
        n *= 4
        root = np.random.SeedSequence(seed + n)


def mvn_cdf(box: TruncationBox, mu, Sigma, tol: float = 1e-7) -> float:
    """P(Y <= upper componentwise) for Y ~ N(mu, Sigma), |error| <= tol.

    Deterministic: the internal randomized QMC stream is seeded by a fixed
    package constant.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = mu.shape[0]
    if d > MAX_CDF_DIM:
        raise UnsupportedDimensionError(
            f"mvn_cdf supports d <= {MAX_CDF_DIM}, got {d}")
    if tol < 1e-8:
        raise ParamError(f"tol must be >= 1e-8, got {tol}")
    if box.dim != d:
        raise ParamError("box dimension does not match mu")
    b = box.upper - mu
    if d == 1:
        return float(_norm_cdf(b[0] / math.sqrt(Sigma[0, 0])))
    est, _ = _genz_batch(b[None, :], Sigma, tol, _QMC_SEED)
    return float(min(max(est[0], 0.0), 1.0))


# ---------------------------------------------------------------------------
# Gamma mixing quadrature for Student-t integrals


_gamma_cache: dict = {}


def _gamma_node_count(tol: float) -> int:
    # quadrature floor: ~2e-7 at 256 nodes, ~4e-8 at 512, ~9e-9 at 1024
    if tol >= 1e-6:
        return 256
    if tol >= 1e-7:
        return 512
    return 1024


def _gamma_nodes(nu: float, n: int = _GAMMA_NODES):
    """Nodes and probabilities approximating W ~ Gamma(nu/2, rate nu/2).

    Gauss-Legendre on the quantile scale; uniformly accurate in nu, unlike
    generalized Gauss-Laguerre whose weights overflow for nu beyond ~1e3.
    """
    key = (float(nu), n)
    hit = _gamma_cache.get(key)
    if hit is not None:
        return hit
    x, w = np.polynomial.legendre.leggauss(n)
    q = 0.5 * (x + 1.0)
    p = 0.5 * w
    nodes = stats.gamma.ppf(q, a=nu / 2.0, scale=2.0 / nu)
    p = p / p.sum()
    nodes.setflags(write=False)
    p.setflags(write=False)
    if len(_gamma_cache) < 512:
        _gamma_cache[key] = (nodes, p)
    return nodes, p


def mvt_cdf(box: TruncationBox, mu, Sigma, nu: float,
            tol: float = 1e-5) -> float:
    """P(Y <= upper) for the multivariate Student-t via its scale-mixture
    representation: the Gaussian CDF integrated over the Gamma mixing law."""
    if nu <= 0:
        raise ParamError(f"nu must be positive, got {nu}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = mu.shape[0]
    if d > MAX_CDF_DIM:
        raise UnsupportedDimensionError(
            f"mvt_cdf supports d <= {MAX_CDF_DIM}, got {d}")
    if tol < 1e-8:
        raise ParamError(f"tol must be >= 1e-8, got {tol}")
    if box.dim != d:
        raise ParamError("box dimension does not match mu")
    b = box.upper - mu
    if d == 1:
        return float(t_cdf(box.upper[0], mu[0], Sigma[0, 0], nu))
    w_nodes, p_nodes = _gamma_nodes(nu, _gamma_node_count(tol))
    B = np.sqrt(w_nodes)[:, None] * b[None, :]
    ests, _ = _genz_batch(B, Sigma, max(tol / 2.0, 1e-8), _QMC_SEED,
                          agg=p_nodes)
    return float(min(max(float(p_nodes @ ests), 0.0), 1.0))


# ---------------------------------------------------------------------------
# univariate tail conditional expectations


def tce_gaussian_uni(yhat: float, mu: float, sigma2: float) -> float:
    """E[Y | Y <= yhat] for Y ~ N(mu, sigma2).

    For z = (yhat - mu)/sigma below -38 the CDF underflows; the Mills-ratio
    asymptote mu + sigma*(-|z| - 1/|z|) is returned with a warning.
    """
    if sigma2 <= 0:
        raise ParamError(f"sigma2 must be positive, got {sigma2}")
    sigma = math.sqrt(sigma2)
    z = (yhat - mu) / sigma
    if z < -38.0:
        warnings.warn("Gaussian tail CDF underflow; returning asymptotic "
                      "tail mean", RuntimeWarning)
        return mu + sigma * (-abs(z) - 1.0 / abs(z))
    # phi(z)/Phi(z) through logs; stable everywhere above the cutoff
    log_ratio = (-0.5 * z * z - 0.5 * _LOG_2PI) - special.log_ndtr(z)
    return mu - sigma * math.exp(log_ratio)


def _log_t_partial_moment(z: float, nu: float) -> float:
    """log of -integral of x f_nu(x) dx over (-inf, z] for the standard t.

    Equal to the bracketed closed form (nu^(nu/2) / (2 sqrt(pi)))
    * Gamma((nu-1)/2)/Gamma(nu/2) * (nu + z^2)^(-(nu-1)/2), rearranged with
    log1p so it survives nu in the hundreds of thousands.
    """
    return (-0.5 * nu * math.log1p(z * z / nu)
            + 0.5 * math.log(nu + z * z)
            - math.log(2.0) - 0.5 * math.log(math.pi)
            + special.gammaln((nu - 1.0) / 2.0) - special.gammaln(nu / 2.0))


def tce_student_uni(yhat: float, mu: float, sigma2: float,
                    nu: float) -> float:
    """E[Y | Y <= yhat] for a location-scale Student-t component.

    The closed-form partial moment is normalized by the component CDF so a
    conditional (not partial) expectation is returned.  Requires nu > 1.
    """
    if sigma2 <= 0:
        raise ParamError(f"sigma2 must be positive, got {sigma2}")
    if nu <= 1.0:
        raise DivergentTailError(
            f"tail mean diverges for nu <= 1, got nu = {nu}")
    sigma = math.sqrt(sigma2)
    z = (yhat - mu) / sigma
    logF = math.log(special.stdtr(nu, z)) if special.stdtr(nu, z) > 0 else None
    if logF is None:
        raise TailUnderflowError("t CDF underflows at the threshold")
    return mu - sigma * math.exp(_log_t_partial_moment(z, nu) - logF)


def _component_cdf(c: Component, family: ModelFamily, yhat: float) -> float:
    if family is ModelFamily.GAUSSIAN:
        return float(_norm_cdf((yhat - c.mu[0]) / math.sqrt(c.Sigma[0, 0])))
    return float(t_cdf(yhat, c.mu[0], c.Sigma[0, 0], c.nu))


def _component_tce(c: Component, family: ModelFamily, yhat: float) -> float:
    if family is ModelFamily.GAUSSIAN:
        return tce_gaussian_uni(yhat, float(c.mu[0]), float(c.Sigma[0, 0]))
    return tce_student_uni(yhat, float(c.mu[0]), float(c.Sigma[0, 0]), c.nu)


def tce_mixture_uni(mix: MixtureDistribution, yhat: float) -> float:
    """E[Y | Y <= yhat] for a univariate mixture.

    CDF-weighted convex combination of component conditional expectations,
    with weights eta_l F_l(yhat) normalized by the mixture tail mass.
    """
    if mix.dim != 1:
        raise ParamError("tce_mixture_uni expects a univariate mixture")
    F = np.array([_component_cdf(c, mix.family, yhat)
                  for c in mix.components])
    mass = mix.weights * F
    total = float(mass.sum())
    if total < 1e-300:
        raise TailUnderflowError(
            f"mixture mass below yhat = {yhat} underflows")
    out = 0.0
    for pi_l, F_l, c in zip(mix.weights, F, mix.components):
        if pi_l * F_l == 0.0:
            continue
        out += (pi_l * F_l / total) * _component_tce(c, mix.family, yhat)
    return out


# ---------------------------------------------------------------------------
# univariate mixture CDF / density / quantile helpers


def mixture_cdf(mix: MixtureDistribution, x: float) -> float:
    """CDF of a univariate mixture at x."""
    if mix.dim != 1:
        raise ParamError("mixture_cdf expects a univariate mixture")
    return float(sum(w * _component_cdf(c, mix.family, x)
                     for w, c in zip(mix.weights, mix.components)))


def mixture_logpdf(mix: MixtureDistribution, x) -> np.ndarray:
    """Log density of a mixture at x (any dimension)."""
    x = np.asarray(x, dtype=float)
    rows = []
    for w, c in zip(mix.weights, mix.components):
        if mix.family is ModelFamily.GAUSSIAN:
            lp = mvn_logpdf(x, c.mu, c.Sigma)
        else:
            lp = mvt_logpdf(x, c.mu, c.Sigma, c.nu)
        rows.append(np.log(w) + np.atleast_1d(lp) if w > 0
                    else np.full_like(np.atleast_1d(lp), -np.inf))
    stacked = np.vstack(rows)
    out = special.logsumexp(stacked, axis=0)
    return out[0] if out.shape == (1,) else out


def mixture_quantile(mix: MixtureDistribution, q: float) -> float:
    """Quantile of a univariate mixture: the root of F_mix(x) = q.

    Bracketed by the extreme component quantiles extended by six scale
    units, then solved to |F(x) - q| < 1e-12.
    """
    if mix.dim != 1:
        raise ParamError("mixture_quantile expects a univariate mixture")
    if not 0.0 < q < 1.0:
        raise ParamError(f"q must lie in (0, 1), got {q}")
    comp_q = []
    max_scale = 0.0
    for c in mix.components:
        s2 = float(c.Sigma[0, 0])
        max_scale = max(max_scale, math.sqrt(s2))
        if mix.family is ModelFamily.GAUSSIAN:
            comp_q.append(_norm_quantile(q, float(c.mu[0]), s2))
        else:
            comp_q.append(t_quantile(q, float(c.mu[0]), s2, c.nu))
    lo = min(comp_q) - 6.0 * max_scale
    hi = max(comp_q) + 6.0 * max_scale
    f = lambda x: mixture_cdf(mix, x) - q
    flo, fhi = f(lo), f(hi)
    # min/max component quantiles already bracket; the pad is protective
    if flo > 0 or fhi < 0:
        raise NumericalError(
            f"quantile bracket failed at q={q}: F({lo})-q={flo}, "
            f"F({hi})-q={fhi}")
    x = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    # secant polish toward |F(x) - q| < 1e-12
    for _ in range(8):
        r = f(x)
        if abs(r) < 1e-12:
            break
        pdf = math.exp(float(mixture_logpdf(mix, [x])))
        if pdf <= 0:
            break
        x = x - r / pdf
    return float(x)


# ---------------------------------------------------------------------------
# multivariate tail conditional expectations


def _split_corr(Sigma: np.ndarray):
    lam = np.sqrt(np.diag(Sigma))
    C = Sigma / np.outer(lam, lam)
    return lam, C


def _check_corr(C: np.ndarray) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if np.max(np.abs(np.diag(C) - 1.0)) > 1e-10:
        raise ParamError("C must have a unit diagonal")
    return C


def _gaussian_partial_terms(zt: np.ndarray, C: np.ndarray,
                            tol: float) -> np.ndarray:
    """F_k = phi(zt_k) * P(Z_{-k} <= zt_{-k} | Z_k = zt_k), k = 1..d.

    These are the mixed density-CDF products whose correlation-weighted sum
    gives the lower-truncated first moment E[Z; Z <= zt] = -C F.
    """
    d = zt.shape[0]
    F = np.empty(d)
    for k in range(d):
        rest = [j for j in range(d) if j != k]
        phi = math.exp(-0.5 * zt[k] ** 2) / math.sqrt(2.0 * math.pi)
        if d == 1:
            F[k] = phi
            continue
        mu_c = C[rest, k] * zt[k]
        S_c = C[np.ix_(rest, rest)] - np.outer(C[rest, k], C[k, rest])
        b = zt[rest] - mu_c
        if d - 1 == 1:
            cdf = float(_norm_cdf(b[0] / math.sqrt(S_c[0, 0])))
        else:
            cdf, _ = _genz_batch(b[None, :], S_c, tol, _QMC_SEED)
            cdf = float(cdf[0])
        F[k] = phi * cdf
    return F


def tce_mvn(box: TruncationBox, mu, lam, C, tol: float = 1e-7) -> np.ndarray:
    """E[Y | Y <= upper] for Y ~ N(mu, diag(lam) C diag(lam)).

    The truncated first moment solves the linear relation zhat = -C F with
    F_k = phi(z_k) Phi_{d-1}(conditional arguments); for d = 2 this is the
    explicit two-equation solution, and for general d the same construction
    row by row.  lam is the vector of scale standard deviations.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    C = _check_corr(C)
    d = mu.shape[0]
    if d > MAX_CDF_DIM:
        raise UnsupportedDimensionError(
            f"tce_mvn supports d <= {MAX_CDF_DIM}, got {d}")
    if np.any(lam <= 0):
        raise ParamError("lam entries must be positive")
    zt = (box.upper - mu) / lam
    if d == 1:
        return np.array([tce_gaussian_uni(box.upper[0], mu[0],
                                          lam[0] ** 2)])
    F = _gaussian_partial_terms(zt, C, tol)
    zhat = -C @ F                       # E[Z; Z <= zt], unnormalized
    alpha, _ = _genz_batch(zt[None, :], C, tol, _QMC_SEED)
    alpha = float(alpha[0])
    if alpha < 1e-300:
        raise TailUnderflowError("truncation probability underflows")
    return mu + lam * zhat / alpha


def tce_mvt(box: TruncationBox, mu, lam, C, nu: float,
            tol: float = 1e-5) -> np.ndarray:
    """E[Y | Y <= upper] for the multivariate Student-t, via the Gamma
    scale mixture of the Gaussian truncated-moment construction."""
    if nu <= 1.0:
        raise DivergentTailError(
            f"tail mean diverges for nu <= 1, got nu = {nu}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    C = _check_corr(C)
    d = mu.shape[0]
    if d > MAX_CDF_DIM:
        raise UnsupportedDimensionError(
            f"tce_mvt supports d <= {MAX_CDF_DIM}, got {d}")
    if np.any(lam <= 0):
        raise ParamError("lam entries must be positive")
    zt = (box.upper - mu) / lam
    if d == 1:
        return np.array([tce_student_uni(box.upper[0], mu[0],
                                         lam[0] ** 2, nu)])
    w_nodes, p_nodes = _gamma_nodes(nu, _gamma_node_count(tol))
    sq = np.sqrt(w_nodes)
    alphas, _ = _genz_batch(sq[:, None] * zt[None, :], C,
                            max(tol / 4.0, 1e-8), _QMC_SEED, agg=p_nodes)
    alpha = float(p_nodes @ alphas)
    if alpha < 1e-300:
        raise TailUnderflowError("truncation probability underflows")
    # G_k = E_W[ phi(sqrt(W) z_k) Phi_{d-1}(sqrt(W)(z_{-k} - C z_k); S_k)
    #            / sqrt(W) ]
    G = np.zeros(d)
    for k in range(d):
        rest = [j for j in range(d) if j != k]
        mu_c = C[rest, k] * zt[k]
        S_c = C[np.ix_(rest, rest)] - np.outer(C[rest, k], C[k, rest])
        b = zt[rest] - mu_c
        phi = np.exp(-0.5 * (sq * zt[k]) ** 2) / math.sqrt(2.0 * math.pi)
        agg = p_nodes * phi / sq
        if d - 1 == 1:
            cdf = _norm_cdf(sq * b[0] / math.sqrt(S_c[0, 0]))
        else:
            cdf, _ = _genz_batch(sq[:, None] * b[None, :], S_c,
                                 max(tol / 4.0, 2e-9), _QMC_SEED, agg=agg)
        G[k] = float(agg @ cdf)
    return mu + lam * (-(C @ G)) / alpha


def _component_box_mass(c: Component, family: ModelFamily,
                        box: TruncationBox, tol: float) -> float:
    if family is ModelFamily.GAUSSIAN:
        return mvn_cdf(box, c.mu, c.Sigma, tol=max(tol, 1e-8))
    return mvt_cdf(box, c.mu, c.Sigma, c.nu, tol=max(tol, 1e-8))


def tce_mixture_mv(mix: MixtureDistribution, box: TruncationBox,
                   tol: float = 1e-5) -> np.ndarray:
    """E[Y | Y <= upper] for a multivariate mixture: the convex combination
    of component tail means with weights eta_l times component tail mass."""
    if box.dim != mix.dim:
        raise ParamError("box dimension does not match mixture")
    masses = np.array([_component_box_mass(c, mix.family, box, tol)
                       for c in mix.components])
    w = mix.weights * masses
    total = float(w.sum())
    if total < 1e-300:
        raise TailUnderflowError("mixture mass in the truncation box "
                                 "underflows")
    out = np.zeros(mix.dim)
    for wt, c in zip(w, mix.components):
        if wt == 0.0:
            continue
        lam, C = _split_corr(c.Sigma)
        if mix.family is ModelFamily.GAUSSIAN:
            t = tce_mvn(box, c.mu, lam, C, tol=tol)
        else:
            t = tce_mvt(box, c.mu, lam, C, c.nu, tol=tol)
        out += (wt / total) * t
    return out
