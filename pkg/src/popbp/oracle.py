"""Exhaustive brute-force filtering and likelihood reference for testing.

Everything here recomputes the filtered and predictive distributions by
direct summation over explicit population grids, using a different numerical
route than the production filter (scipy's negative-binomial / binomial pmf
evaluators, linear-space accumulation with per-step rescaling).  It is
intentionally slow and only viable on small instances; tests treat its
output as ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dynamics import DynamicsSchedule, ObservationSeries, cumulative_rate, p_at

DEFAULT_SUPPORT_CAP = 10_000
_TAIL_REL = 1e-18
_BLOCK = 64


class OracleCapError(RuntimeError):
    """Raised when the enumeration grid would exceed the configured cap."""


def _survival(schedule: DynamicsSchedule, d1: int, d2: int) -> float:
    return math.exp(-cumulative_rate(schedule, d1, d2))


def _transition_column(x_new: int, j_lo: int, j_hi: int, a: float) -> np.ndarray:
    """P(X_next = x_new | X_prev = j) for j in [j_lo, j_hi], survival prob a."""
    js = np.arange(j_lo, j_hi + 1)
    if a >= 1.0:
        return (js == x_new).astype(float)
    return stats.nbinom.pmf(x_new - js, js, a)


def _obs_row(y: int, x_lo: int, x_hi: int, p: float) -> np.ndarray:
    xs = np.arange(x_lo, x_hi + 1)
    return stats.binom.pmf(y, xs, p)


@dataclass(frozen=True)
class OracleResult:
    log_joint: float
    filtered: tuple[dict[int, float], ...]
    supports: tuple[tuple[int, int], ...]


def oracle_joint(
    series: ObservationSeries,
    schedule: DynamicsSchedule,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> OracleResult:
    """Joint probability of the observation vector and all filtered pmfs.

    Forward sweep over explicit grids; each step's upper edge grows in blocks
    until the newest block is below 1e-18 of the column maximum, capped at
    ``support_cap`` states per step.
    """
    days, values = series.days, series.values
    x_bar = series.x0
    lo, hi = series.x0, series.x0
    col = np.array([1.0])
    log_scale = 0.0
    filtered: list[dict[int, float]] = []
    supports: list[tuple[int, int]] = []

    start = 1
    if values[0] != series.x0:
        log_scale += math.log(stats.binom.pmf(values[0], series.x0, p_at(schedule, days[0])))

    for k in range(start, len(days)):
        y, d_prev, d = values[k], days[k - 1], days[k]
        a = _survival(schedule, d_prev, d)
        p = p_at(schedule, d)
        x_bar = max(x_bar, y)

        new_lo = x_bar
        chunks: list[np.ndarray] = []
        edge = max(new_lo, lo) - 1
        best = 0.0
        while True:
            blk_lo, blk_hi = edge + 1, edge + _BLOCK
            if blk_hi - new_lo + 1 > support_cap:
                raise OracleCapError(
                    f"step {k}: support would exceed {support_cap} states"
                )
            vals = np.empty(blk_hi - blk_lo + 1)
            for i, x_new in enumerate(range(blk_lo, blk_hi + 1)):
                j_hi = min(hi, x_new)
                if j_hi < lo:
                    vals[i] = 0.0
                    continue
                trans = _transition_column(x_new, lo, j_hi, a)
                vals[i] = float(trans @ col[: j_hi - lo + 1])
            obs = _obs_row(y, blk_lo, blk_hi, p)
            vals *= obs
            chunks.append(vals)
            best = max(best, float(vals.max(initial=0.0)))
            edge = blk_hi
            if p == 1.0 and edge >= max(y, hi):
                break
            if best > 0.0 and float(vals.max(initial=0.0)) < _TAIL_REL * best and edge > max(hi, y):
                break
            if best == 0.0 and edge > max(hi, y) + 8 * _BLOCK:
                break

        col = np.concatenate(chunks)
        lo, hi = new_lo, edge
        total = float(col.sum())
        if total <= 0.0:
            return OracleResult(
                log_joint=float("-inf"),
                filtered=tuple(filtered),
                supports=tuple(supports),
            )
        scale = float(col.max())
        col /= scale
        log_scale += math.log(scale)
        filtered.append({lo + i: float(v) / (total / scale) for i, v in enumerate(col)})
        supports.append((lo, hi))

    log_joint = log_scale + math.log(float(col.sum()))
    return OracleResult(
        log_joint=log_joint, filtered=tuple(filtered), supports=tuple(supports)
    )


def oracle_predictive(
    series: ObservationSeries,
    schedule: DynamicsSchedule,
    day_next: int,
    y_max: int | None = None,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> dict[int, float]:
    """Predictive pmf of the next observation by direct double summation."""
    res = oracle_joint(series, schedule, support_cap)
    pmf = res.filtered[-1]
    lo, hi = res.supports[-1]
    weights = np.array([pmf[x] for x in range(lo, hi + 1)])

    a = _survival(schedule, series.last_day, day_next)
    p = p_at(schedule, day_next)

    # predictive population distribution
    grow = 1.0 if a >= 1.0 else 1.0 / a
    x_hi = hi
    q: list[float] = []
    best = 0.0
    x = lo
    while True:
        trans = _transition_column(x, lo, min(hi, x), a)
        val = float(trans @ weights[: min(hi, x) - lo + 1])
        q.append(val)
        best = max(best, val)
        if x > max(hi * grow + 50, hi + 50) and (best == 0.0 or val < _TAIL_REL * best):
            break
        x += 1
        if x - lo + 1 > support_cap:
            raise OracleCapError("predictive support exceeds cap")
    qa = np.array(q)
    qa /= qa.sum()
    x_hi = lo + len(q) - 1

    if y_max is None:
        y_max = x_hi
    out: dict[int, float] = {}
    xs = np.arange(lo, x_hi + 1)
    for y in range(0, y_max + 1):
        out[y] = float(stats.binom.pmf(y, xs, p) @ qa)
    return out


def oracle_joint_prob(
    x0: int,
    obs: list[tuple[int, int]],
    schedule: DynamicsSchedule,
    support_cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """P(Y_{d1}=y1, ..., Y_{dn}=yn) for explicit (day, y) pairs, linear scale."""
    import datetime

    counts = [(0, x0)] + list(obs)
    series = ObservationSeries(t0=datetime.date(2020, 1, 1), counts=tuple(counts), x0=x0)
    res = oracle_joint(series, schedule, support_cap)
    return math.exp(res.log_joint)
