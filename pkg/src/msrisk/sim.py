"""Exact simulation from Markov-switching parameters.

Provides the synthetic-data generator used throughout the test suite and
the slab-conditioning sampler that serves as the Monte-Carlo oracle for
conditional laws and conditional risk measures.

Random streams are counter-based (Philox) and keyed by (seed, purpose
tag), so draws consumed by one purpose can never silently shift another.
"""

from __future__ import annotations

import datetime
import zlib
from dataclasses import dataclass

import numpy as np

from .core import (
    InfeasibleSlabError,
    MixtureDistribution,
    ModelFamily,
    MsmParams,
    ParamError,
    ReturnPanel,
    _frozen,
    validate,
)

__all__ = ["SimOutput", "simulate", "slab_conditional_sample"]


def _stream(seed: int, tag: str) -> np.random.Generator:
    """Philox generator on an independent stream keyed by (seed, tag)."""
    key = zlib.crc32(tag.encode("ascii"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class SimOutput:
    """A simulated panel together with the true state path that made it."""

    panel: ReturnPanel
    states: np.ndarray
    seed: int

    def __init__(self, panel: ReturnPanel, states, seed: int):
        object.__setattr__(self, "panel", panel)
        object.__setattr__(self, "states", _frozen(states, dtype=int))
        object.__setattr__(self, "seed", int(seed))
        if self.states.shape != (panel.T,):
            raise ParamError("states length does not match panel rows")


def _weekly_dates(T: int, start: str) -> list:
    d0 = datetime.date.fromisoformat(start)
    return [(d0 + datetime.timedelta(weeks=t)).isoformat() for t in range(T)]


def simulate(params: MsmParams, family, T: int, seed: int,
             start_date: str = "2000-01-07") -> SimOutput:
    """Draw a length-T panel from the switching model.

    S_1 follows delta and S_t | S_{t-1} the matching row of Q.  Gaussian
    observations are mu + chol(Sigma) z; Student-t observations divide the
    Gaussian part by sqrt(w) with w ~ Gamma(nu/2, rate nu/2), exactly the
    scale-mixture construction the model is defined through.

    Identical (params, family, T, seed) inputs give bit-identical output.
    """
    family = ModelFamily(family)
    problems = validate(params)
    if problems:
        raise ParamError("; ".join(problems))
    if family is ModelFamily.STUDENT_T and params.nu is None:
        raise ParamError("Student-t simulation requires nu")
    if T < 1:
        raise ParamError(f"T must be >= 1, got {T}")
    L, p = params.L, params.p

    chain_rng = _stream(seed, "chain")
    u = chain_rng.random(T)
    states = np.empty(T, dtype=int)
    cum0 = np.cumsum(params.delta)
    states[0] = min(int(np.searchsorted(cum0, u[0], side="right")), L - 1)
    cumQ = np.cumsum(params.Q, axis=1)
    for t in range(1, T):
        k = int(np.searchsorted(cumQ[states[t - 1]], u[t], side="right"))
        states[t] = min(k, L - 1)

    z = _stream(seed, "normal").standard_normal((T, p))
    if family is ModelFamily.STUDENT_T:
        nus = params.nu[states]
        w = _stream(seed, "gamma").gamma(nus / 2.0, 2.0 / nus)
    else:
        w = np.ones(T)

    chols = [np.linalg.cholesky(params.Sigma[l]) for l in range(L)]
    y = np.empty((T, p))
    for l in range(L):
        idx = states == l
        if not np.any(idx):
            continue
        y[idx] = params.mu[l] + (z[idx] @ chols[l].T) / np.sqrt(w[idx, None])

    panel = ReturnPanel(_weekly_dates(T, start_date),
                        [f"A{j + 1}" for j in range(p)], y)
    return SimOutput(panel=panel, states=states, seed=seed)


def _mixture_draws(mix: MixtureDistribution, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    ks = rng.choice(mix.K, size=n, p=mix.weights)
    z = rng.standard_normal((n, mix.dim))
    if mix.family is ModelFamily.STUDENT_T:
        nus = np.array([c.nu for c in mix.components])[ks]
        w = rng.gamma(nus / 2.0, 2.0 / nus)
    else:
        w = np.ones(n)
    y = np.empty((n, mix.dim))
    for k, c in enumerate(mix.components):
        idx = ks == k
        if not np.any(idx):
            continue
        chol = np.linalg.cholesky(c.Sigma)
        y[idx] = c.mu + (z[idx] @ chol.T) / np.sqrt(w[idx, None])
    return y


def slab_conditional_sample(mix: MixtureDistribution, given, values,
                            halfwidth: float = 0.02,
                            n_target: int = 100_000,
                            seed: int = 0):
    """Joint draws retained when every conditioned coordinate falls within
    +-halfwidth of its target value.

    Returns (samples, acceptance_rate) where samples has exactly n_target
    rows.  The conditional-law bias of the slab is O(halfwidth^2).  An
    acceptance rate below 1e-6 raises InfeasibleSlabError: widen the slab.
    """
    given = [int(j) for j in given]
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if not given or len(set(given)) != len(given):
        raise ParamError("given must be a nonempty set of distinct indices")
    if any(j < 0 or j >= mix.dim for j in given):
        raise ParamError("given index out of range")
    if values.shape != (len(given),):
        raise ParamError("values length does not match given")
    if halfwidth <= 0:
        raise ParamError(f"halfwidth must be positive, got {halfwidth}")
    if n_target < 10_000:
        raise ParamError(f"n_target must be >= 10^4, got {n_target}")

    rng = _stream(seed, "slab")
    kept = []
    have = 0
    drawn = 0
    chunk = 1 << 17
    while have < n_target:
        y = _mixture_draws(mix, chunk, rng)
        drawn += chunk
        ok = np.all(np.abs(y[:, given] - values) <= halfwidth, axis=1)
        acc = y[ok]
        if acc.shape[0]:
            kept.append(acc)
            have += acc.shape[0]
        if drawn >= 2_000_000 and have / drawn < 1e-6:
            raise InfeasibleSlabError(
                f"slab acceptance rate {have / drawn:.2e} below 1e-6; "
                f"widen halfwidth")
        rate = max(have / drawn, 1e-7)
        need = (n_target - have) / rate
        chunk = int(min(max(need * 1.2, 1 << 17), 8_000_000))
    samples = np.concatenate(kept, axis=0)[:n_target]
    return samples, have / drawn
