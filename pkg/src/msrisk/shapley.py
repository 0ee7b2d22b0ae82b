"""Exact Shapley allocation of conditional tail risk across institutions.

The loss function assigns to each group H of non-target institutions the
magnitude of the stressed-minus-baseline conditional measure (delta
MCoVaR or delta MCoES) with H distressed and everyone else at median
levels.  Shares are the exact Shapley values of that set function,
enumerated over all 2^(p-1) subsets; no sampling.

Subsets are encoded as bitmasks over the player tuple: bit i set means
players[i] is in the set.
"""

from __future__ import annotations

import logging
import math
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
    ReturnPanel,
    RiskMeasure,
    ShapleyReport,
    _frozen,
)
from .dist import mixture_quantile, tce_mixture_uni
from .predictive import condition, marginalize
from .risk import _mixture_at
from .inference import viterbi

__all__ = [
    "SubsetValueTable",
    "build_value_table",
    "shapley_values",
    "make_report",
    "attribution_path",
    "AttributionPath",
]

logger = logging.getLogger(__name__)

_MAX_PLAYERS = 20


@dataclass(frozen=True, eq=False)
class SubsetValueTable:
    """Loss-function values for every subset of the non-target players.

    values[mask] is the loss of the subset with players[i] included when
    bit i of mask is set; values[0] (the empty set) is always 0.
    """

    target: int
    players: tuple
    values: np.ndarray

    def __init__(self, target: int, players, values):
        players = tuple(int(j) for j in players)
        values = _frozen(values)
        if len(set(players)) != len(players):
            raise ParamError("players must be distinct")
        if int(target) in players:
            raise ParamError("target cannot be a player")
        if values.shape != (1 << len(players),):
            raise ParamError(
                f"values must have 2^{len(players)} entries, "
                f"got {values.shape}")
        if values[0] != 0.0:
            raise ParamError("the empty set must map to 0")
        if not np.all(np.isfinite(values)):
            raise ParamError("subset values must be finite")
        object.__setattr__(self, "target", int(target))
        object.__setattr__(self, "players", players)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.players)

    def value(self, subset) -> float:
        mask = 0
        for j in subset:
            mask |= 1 << self.players.index(int(j))
        return float(self.values[mask])


def _table_from_mixture(mix: MixtureDistribution, target: int,
                        measure: RiskMeasure, tau1: float, tau2: float,
                        convention: DofConvention,
                        signed: bool) -> SubsetValueTable:
    measure = RiskMeasure(measure)
    if measure not in (RiskMeasure.DELTA_MCOVAR, RiskMeasure.DELTA_MCOES):
        raise ParamError(
            "the loss function is defined for the delta measures only, "
            f"got {measure.value}")
    want_es = measure is RiskMeasure.DELTA_MCOES
    players = [j for j in range(mix.dim) if j != target]
    n = len(players)
    if n > _MAX_PLAYERS:
        raise ParamError(f"exact enumeration supports at most "
                         f"{_MAX_PLAYERS} players, got {n}")

    # marginal conditioning levels never depend on the subset
    distress = np.empty(n)
    normal = np.empty(n)
    for i, j in enumerate(players):
        marg = marginalize(mix, [j])
        q_tau2 = mixture_quantile(marg, tau2)
        q_med = mixture_quantile(marg, 0.5)
        if want_es:
            distress[i] = tce_mixture_uni(marg, q_tau2)
            normal[i] = tce_mixture_uni(marg, q_med)
        else:
            distress[i] = q_tau2
            normal[i] = q_med

    def tail(values: np.ndarray) -> float:
        cond = condition(mix, players, values, convention)
        q = mixture_quantile(cond, tau1)
        return tce_mixture_uni(cond, q) if want_es else q

    base = tail(normal)
    values = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        bits = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        v = tail(np.where(bits, distress, normal)) - base
        values[mask] = v if signed else abs(v)
    return SubsetValueTable(target=target, players=players, values=values)


def build_value_table(model: FittedModel, target: int,
                      measure: RiskMeasure, taus, t: int, h: int = 1,
                      convention: DofConvention = DofConvention.PAPER,
                      signed: bool = False,
                      probabilities: str = "filtered") -> SubsetValueTable:
    """Loss-function table at origin t on the h-step predictive mixture.

    taus = (tau1, tau2).  By default the loss is |delta measure| so that
    deeper tail spillovers count as larger losses; signed=True keeps the
    raw differences instead.
    """
    tau1, tau2 = float(taus[0]), float(taus[1])
    mix = _mixture_at(model, t, h, probabilities)
    if target < 0 or target >= mix.dim:
        raise ParamError(f"target index {target} out of range")
    return _table_from_mixture(mix, int(target), measure, tau1, tau2,
                               convention, signed)


def shapley_values(table: SubsetValueTable) -> np.ndarray:
    """Exact Shapley shares, aligned with table.players.

    ShV(j) = sum over H not containing j of
    |H|! (n-|H|-1)! / n! * [v(H u {j}) - v(H)], accumulated with pairwise
    summation.
    """
    n = table.n
    v = table.values
    fact = np.array([math.factorial(k) for k in range(n + 1)], dtype=float)
    w_by_size = fact[np.arange(n)] * fact[n - 1 - np.arange(n)] / fact[n]
    sizes = np.array([bin(m).count("1") for m in range(1 << n)])
    shares = np.empty(n)
    for i in range(n):
        bit = 1 << i
        masks = np.arange(1 << n)
        without = masks[(masks & bit) == 0]
        terms = w_by_size[sizes[without]] * (v[without | bit] - v[without])
        shares[i] = np.sum(terms)
    return shares


def make_report(table: SubsetValueTable,
                measure: RiskMeasure) -> ShapleyReport:
    shares = shapley_values(table)
    return ShapleyReport(
        target=table.target,
        measure=measure,
        players=table.players,
        subset_values={int(m): float(v) for m, v in enumerate(table.values)},
        shares=shares,
        total=float(table.values[-1]),
    )


# ---------------------------------------------------------------------------
# time paths


@dataclass(frozen=True, eq=False)
class AttributionPath:
    """Per-origin Shapley shares with state-conditional summaries.

    shares and share_pct are T x n (NaN rows mark per-t gaps); states is
    the Viterbi path used for grouping; state_stats maps 1-based state
    labels to per-player means and sample variances of shares and
    percentage shares.
    """

    players: tuple
    times: tuple
    shares: np.ndarray
    share_pct: np.ndarray
    totals: np.ndarray
    states: np.ndarray
    state_stats: dict
    gaps: tuple

    def __init__(self, players, times, shares, share_pct, totals, states,
                 state_stats, gaps):
        object.__setattr__(self, "players", tuple(players))
        object.__setattr__(self, "times", tuple(times))
        object.__setattr__(self, "shares", _frozen(shares))
        object.__setattr__(self, "share_pct", _frozen(share_pct))
        object.__setattr__(self, "totals", _frozen(totals))
        object.__setattr__(self, "states", _frozen(states, dtype=int))
        object.__setattr__(self, "state_stats", dict(state_stats))
        object.__setattr__(self, "gaps", tuple(gaps))


def _state_stats(shares: np.ndarray, share_pct: np.ndarray,
                 states: np.ndarray, L: int) -> dict:
    out = {}
    ok = ~np.isnan(shares[:, 0])
    for l in range(L):
        idx = ok & (states == l)
        n = int(np.count_nonzero(idx))
        entry = {"count": n}
        for name, arr in (("share", shares), ("share_pct", share_pct)):
            if n == 0:
                entry[f"mean_{name}"] = [float("nan")] * shares.shape[1]
                entry[f"var_{name}"] = [float("nan")] * shares.shape[1]
            else:
                sub = arr[idx]
                entry[f"mean_{name}"] = sub.mean(axis=0).tolist()
                ddof = 1 if n > 1 else 0
                entry[f"var_{name}"] = sub.var(axis=0, ddof=ddof).tolist()
        out[l + 1] = entry
    return out


def attribution_path(model: FittedModel, target: int, measure: RiskMeasure,
                     taus, h: int = 1, *, panel: ReturnPanel,
                     convention: DofConvention = DofConvention.PAPER,
                     signed: bool = False,
                     probabilities: str = "filtered") -> AttributionPath:
    """Shapley shares at every origin t plus state-conditional summaries.

    The grouping state path is the Viterbi decoding of the panel under
    the fitted parameters; state labels in state_stats are 1-based.
    """
    measure = RiskMeasure(measure)
    if panel.T != model.T:
        raise ParamError("panel length does not match fitted model")
    n = model.params.p - 1
    T = model.T
    shares = np.full((T, n), np.nan)
    share_pct = np.full((T, n), np.nan)
    totals = np.full(T, np.nan)
    players = None
    gaps = []
    for t in range(1, T + 1):
        try:
            table = build_value_table(model, target, measure, taus, t, h,
                                      convention, signed, probabilities)
        except MsriskError as exc:
            logger.warning("t=%d: attribution skipped: %s", t, exc)
            gaps.append(t)
            continue
        if players is None:
            players = table.players
        s = shapley_values(table)
        shares[t - 1] = s
        totals[t - 1] = table.values[-1]
        denom = s.sum()
        share_pct[t - 1] = 100.0 * s / denom if denom != 0 else np.nan
    if players is None:
        raise MsriskError("every origin failed; no attribution path")
    states = viterbi(panel, model.params, model.family)
    stats = _state_stats(shares, share_pct, states, model.L)
    return AttributionPath(
        players=players,
        times=range(1, T + 1),
        shares=shares,
        share_pct=share_pct,
        totals=totals,
        states=states,
        state_stats=stats,
        gaps=gaps,
    )
