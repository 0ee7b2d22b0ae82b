"""Shared builders and independent reference implementations for tests.

The reference implementations below deliberately follow the defining
formulas as directly as possible (dense enumeration, textbook conditional
moments, permutation averages) so they share no code path with the
package internals they check.
"""

import itertools
import math

import numpy as np
from scipy import stats

from msrisk import (
    Component,
    FittedModel,
    MixtureDistribution,
    ModelFamily,
    MsmParams,
)


# ---------------------------------------------------------------------------
# random model builders


def random_spd(rng, p, scale=1.0):
    A = rng.standard_normal((p, p))
    S = A @ A.T + p * np.eye(p)
    return scale * S / p


def random_corr(rng, p):
    S = random_spd(rng, p)
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def random_params(rng, L, p, family):
    delta = rng.dirichlet(np.full(L, 5.0))
    Q = rng.dirichlet(np.full(L, 2.0), size=L) + 2.0 * np.eye(L)
    Q = Q / Q.sum(axis=1, keepdims=True)
    mu = rng.standard_normal((L, p))
    Sigma = np.array([random_spd(rng, p) for _ in range(L)])
    nu = None
    if ModelFamily(family) is ModelFamily.STUDENT_T:
        nu = rng.uniform(3.0, 20.0, size=L)
    return MsmParams(delta=delta, Q=Q, mu=mu, Sigma=Sigma, nu=nu)


def toy_fitted_model(rng, L=3, p=2, T=12, family=ModelFamily.STUDENT_T,
                     params=None):
    """FittedModel with valid shapes but arbitrary state probabilities;
    enough structure for predictive/risk plumbing that never refits."""
    if params is None:
        params = random_params(rng, L, p, family)
    filtered = rng.dirichlet(np.ones(L), size=T)
    smoothed = rng.dirichlet(np.ones(L), size=T)
    pairs = rng.dirichlet(np.ones(L * L), size=T - 1).reshape(T - 1, L, L)
    return FittedModel(
        params=params, family=family, loglik=-12.3, n_params=17,
        aic=1.0, bic=2.0, filtered=filtered, smoothed=smoothed,
        smoothed_pairs=pairs, w_hat=None, converged=True, iterations=5,
        restart_logliks=(-12.3,))


def random_mixture(rng, K, p, family, nu_lo=3.0, nu_hi=20.0):
    family = ModelFamily(family)
    w = rng.dirichlet(np.full(K, 3.0))
    comps = []
    for _ in range(K):
        mu = rng.standard_normal(p)
        Sigma = random_spd(rng, p)
        nu = rng.uniform(nu_lo, nu_hi) if family is ModelFamily.STUDENT_T \
            else None
        comps.append(Component(mu, Sigma, nu))
    return MixtureDistribution(family, w, comps)


# ---------------------------------------------------------------------------
# dense-enumeration reference for hidden-path inference


def _emission_matrix(y, params, family):
    T = y.shape[0]
    L = params.L
    dens = np.zeros((T, L))
    for l in range(L):
        if ModelFamily(family) is ModelFamily.GAUSSIAN:
            dens[:, l] = stats.multivariate_normal.pdf(
                y, mean=params.mu[l], cov=params.Sigma[l])
        else:
            dens[:, l] = stats.multivariate_t.pdf(
                y, loc=params.mu[l], shape=params.Sigma[l],
                df=params.nu[l])
    return dens.reshape(T, L)


def path_logprob(y, params, family, path):
    """log of delta_{s_1} f(y_1|s_1) prod Q_{s_{t-1} s_t} f(y_t|s_t)."""
    y = np.atleast_2d(y)
    dens = _emission_matrix(y, params, family)
    logp = math.log(params.delta[path[0]]) + math.log(dens[0, path[0]])
    for t in range(1, y.shape[0]):
        logp += math.log(params.Q[path[t - 1], path[t]])
        logp += math.log(dens[t, path[t]])
    return logp


def brute_force_paths(y, params, family):
    """Every quantity by summing all L^T state paths directly.

    Returns (loglik, smoothed T x L, pair marginals (T-1) x L x L,
    best path log-score)."""
    y = np.atleast_2d(y)
    T = y.shape[0]
    L = params.L
    dens = _emission_matrix(y, params, family)
    total = 0.0
    marg = np.zeros((T, L))
    pair = np.zeros((T - 1, L, L))
    best_logp = -np.inf
    for path in itertools.product(range(L), repeat=T):
        prob = params.delta[path[0]] * dens[0, path[0]]
        for t in range(1, T):
            prob *= params.Q[path[t - 1], path[t]] * dens[t, path[t]]
        total += prob
        for t in range(T):
            marg[t, path[t]] += prob
        for t in range(T - 1):
            pair[t, path[t], path[t + 1]] += prob
        if prob > 0:
            best_logp = max(best_logp, math.log(prob))
    return math.log(total), marg / total, pair / total, best_logp


# ---------------------------------------------------------------------------
# textbook Gaussian conditional moments


def gaussian_conditional(mu, Sigma, given, values):
    """(mu_cond, Sigma_cond) of the kept block given the listed coords."""
    p = len(mu)
    keep = [j for j in range(p) if j not in given]
    g = list(given)
    S_kk = Sigma[np.ix_(keep, keep)]
    S_kg = Sigma[np.ix_(keep, g)]
    S_gg = Sigma[np.ix_(g, g)]
    diff = np.asarray(values) - mu[g]
    mu_c = mu[keep] + S_kg @ np.linalg.solve(S_gg, diff)
    S_c = S_kk - S_kg @ np.linalg.solve(S_gg, S_kg.T)
    return mu_c, S_c


# ---------------------------------------------------------------------------
# permutation-average Shapley reference


def shapley_by_permutations(players, value):
    """Average marginal contribution over every ordering; value takes a
    frozenset of players."""
    n = len(players)
    shares = {q: 0.0 for q in players}
    for order in itertools.permutations(players):
        seen = set()
        for q in order:
            before = value(frozenset(seen))
            seen.add(q)
            shares[q] += value(frozenset(seen)) - before
    total = math.factorial(n)
    return np.array([shares[q] / total for q in players])


# ---------------------------------------------------------------------------
# quadrature references for univariate mixtures


def mixture_pdf_scipy(mix, x):
    out = 0.0
    for w, c in zip(mix.weights, mix.components):
        s = math.sqrt(c.Sigma[0, 0])
        if mix.family is ModelFamily.GAUSSIAN:
            out += w * stats.norm.pdf(x, loc=c.mu[0], scale=s)
        else:
            out += w * stats.t.pdf(x, df=c.nu, loc=c.mu[0], scale=s)
    return out


def mixture_cdf_scipy(mix, x):
    out = 0.0
    for w, c in zip(mix.weights, mix.components):
        s = math.sqrt(c.Sigma[0, 0])
        if mix.family is ModelFamily.GAUSSIAN:
            out += w * stats.norm.cdf(x, loc=c.mu[0], scale=s)
        else:
            out += w * stats.t.cdf(x, df=c.nu, loc=c.mu[0], scale=s)
    return out


def tce_by_quadrature(mix, yhat):
    """E[Y | Y <= yhat] by adaptive integration of y f(y)."""
    from scipy.integrate import quad

    num = 0.0
    for w, c in zip(mix.weights, mix.components):
        s = math.sqrt(c.Sigma[0, 0])
        if mix.family is ModelFamily.GAUSSIAN:
            f = lambda y: y * stats.norm.pdf(y, loc=c.mu[0], scale=s)
        else:
            f = lambda y: y * stats.t.pdf(y, df=c.nu, loc=c.mu[0], scale=s)
        val, _ = quad(f, -np.inf, yhat, limit=400)
        num += w * val
    return num / mixture_cdf_scipy(mix, yhat)
