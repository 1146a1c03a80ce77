"""Exact log-space filter for the partially-observed pure birth process.

The filter maintains unnormalized log weights ``log_rho[l]`` over a finite
population window ``[x_bar, L]``.  One observation step multiplies the
pure-birth transition kernel into the previous weights (an inner sum over the
ancestor population) and then applies the binomial observation weight.  The
constant factors ``e * y!`` that appear in the textbook recursion cancel in
every normalized quantity and in the likelihood argmax, so they are dropped
here; with them dropped, ``logsumexp(log_rho)`` after n steps *is* the log
joint probability of the first n partial observations.

Truncation: the window upper bound is seeded from the closed-form conditional
mean/variance (mean + 20 standard deviations, a Chebyshev-style >= 99.75%
coverage bound) and then extended adaptively until the newest extension block
carries less than ``tail_tol`` of the running total mass.

The closed-form moments assume a constant-rate history, so with strongly
time-varying growth they can be poor; the filter tracks how often the closed
form disagrees with the rho-based mean by more than 20% (``seed_flags``) and
always trusts the rho-based moments for anything but window seeding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .dynamics import DynamicsSchedule, ObservationSeries, cumulative_rate, p_at, lambda_at

NEG_INF = float("-inf")

# Window policy defaults.
SD_MULTIPLIER = 20.0          # Chebyshev bound: mean + 20 sd covers >= 99.75%
TAIL_TOL = 1e-12              # relative mass below which extension stops
EXTENSION_MIN_BLOCK = 16
HARD_CAP_STATES = 10_000_000  # cumulative states over the whole filter pass
INNER_BAND_SDS = 8.0          # half-width of the inner (ancestor) sum band
INNER_BAND_PAD = 12
_CHUNK_ENTRIES = 4_000_000    # cap on rows x band entries materialized at once


class TruncationCapError(RuntimeError):
    """Raised when the truncation window would exceed the configured state cap."""


def _lse(x: np.ndarray) -> float:
    """logsumexp of a 1-D array without scipy's dispatch overhead."""
    m = float(np.max(x)) if x.size else NEG_INF
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.exp(x - m).sum()))


# log-factorial table, grown geometrically on demand: _LGF[k] == log(k!)
_LGF = gammaln(np.arange(1024, dtype=np.float64) + 1.0)


def _lgf(n: int) -> np.ndarray:
    global _LGF
    if n >= _LGF.shape[0]:
        size = 1 << max(10, int(n).bit_length() + 1)
        _LGF = gammaln(np.arange(size, dtype=np.float64) + 1.0)
    return _LGF


def pbp_log_transition(x1: int, x2: int, lam: float, dt: float) -> float:
    """Log transition probability of a pure birth process over an interval.

    With constant per-capita rate ``lam`` over ``dt``, the population moves
    from ``x1`` to ``x2 >= x1`` with probability
    ``C(x2-1, x1-1) * exp(-lam*dt*x1) * (1 - exp(-lam*dt))**(x2-x1)``.
    """
    if x1 < 1:
        raise ValueError(f"x1 must be >= 1, got {x1}")
    if x2 < x1:
        raise ValueError(f"x2 must be >= x1, got x2={x2} < x1={x1}")
    if lam < 0.0 or dt <= 0.0:
        raise ValueError(f"need lam >= 0 and dt > 0, got lam={lam}, dt={dt}")
    total = lam * dt
    b = -math.expm1(-total)
    if b == 0.0:
        return 0.0 if x2 == x1 else NEG_INF
    log_comb = (
        math.lgamma(x2) - math.lgamma(x1) - math.lgamma(x2 - x1 + 1)
    )
    return log_comb - total * x1 + (x2 - x1) * math.log(b)


def binom_log_obs(x: int, y: int, p: float) -> float:
    """Log probability of observing y of x individuals, each seen with probability p."""
    if y < 0 or y > x:
        raise ValueError(f"need 0 <= y <= x, got y={y}, x={x}")
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if p == 1.0:
        return 0.0 if y == x else NEG_INF
    log_comb = math.lgamma(x + 1) - math.lgamma(y + 1) - math.lgamma(x - y + 1)
    return log_comb + y * math.log(p) + (x - y) * math.log1p(-p)


def cond_mean_var_closed(x_bar: int, lam: float, p: float, t: float) -> tuple[float, float]:
    """Closed-form conditional mean and variance of the true population.

    mean = (x_bar + (1-p)(1-e^{-lam t})) / (p + (1-p) e^{-lam t})
    var  = (x_bar + 1)(1-p)(1-e^{-lam t}) / (p + (1-p) e^{-lam t})^2
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if lam < 0.0 or t < 0.0:
        raise ValueError(f"need lam >= 0 and t >= 0, got lam={lam}, t={t}")
    decay = math.exp(-lam * t)
    grown = -math.expm1(-lam * t)
    denom = p + (1.0 - p) * decay
    mean = (x_bar + (1.0 - p) * grown) / denom
    var = (x_bar + 1.0) * (1.0 - p) * grown / (denom * denom)
    return mean, var


def truncate_bound(mean: float, var: float, sd_multiplier: float = SD_MULTIPLIER) -> int:
    """Chebyshev-style truncation point: ceil(mean + sd_multiplier * sd)."""
    if not (math.isfinite(mean) and math.isfinite(var)) or var < 0.0:
        raise ValueError(f"mean/var must be finite with var >= 0, got {mean}, {var}")
    return int(math.ceil(mean + sd_multiplier * math.sqrt(var)))


@dataclass(frozen=True)
class FilterState:
    """Filter weights after n absorbed observations.

    ``log_rho[i]`` is the log weight of population ``support_lo + i``; the
    window is ``[x_bar, x_bar + len(log_rho) - 1]`` (weights are identically
    zero below the running maximum ``x_bar``).
    """

    n: int
    log_rho: np.ndarray
    x_bar: int
    last_day: int
    cum_states: int = 0
    seed_flags: int = 0

    @property
    def support_lo(self) -> int:
        return self.x_bar

    @property
    def support_hi(self) -> int:
        return self.x_bar + self.log_rho.shape[0] - 1

    def log_total(self) -> float:
        return _lse(self.log_rho)

    def as_dict(self) -> dict[int, float]:
        return {self.support_lo + i: float(v) for i, v in enumerate(self.log_rho)}


def init_filter(x0: int, day: int = 0) -> FilterState:
    """Point mass at the known initial population (rho_0^{x0} = 1)."""
    if x0 < 1:
        raise ValueError(f"x0 must be >= 1, got {x0}")
    return FilterState(
        n=0,
        log_rho=np.zeros(1, dtype=np.float64),
        x_bar=x0,
        last_day=day,
        cum_states=1,
    )


def filtered_pmf(state: FilterState) -> dict[int, float]:
    """Normalized conditional pmf of the true population given all observations."""
    if state.n < 1:
        raise ValueError("filter has absorbed no observations yet")
    total = state.log_total()
    if not math.isfinite(total):
        raise ValueError("filter state carries no probability mass")
    probs = np.exp(state.log_rho - total)
    lo = state.support_lo
    return {lo + i: float(v) for i, v in enumerate(probs)}


def filtered_moments(state: FilterState) -> tuple[float, float]:
    """Mean and variance of the filtered population distribution (rho-based)."""
    total = state.log_total()
    if not math.isfinite(total):
        raise ValueError("filter state carries no probability mass")
    probs = np.exp(state.log_rho - total)
    xs = state.support_lo + np.arange(state.log_rho.shape[0], dtype=np.float64)
    mean = float(probs @ xs)
    var = float(probs @ (xs - mean) ** 2)
    return mean, var


def _transition_band(
    lo_new: int,
    hi_new: int,
    log_rho_prev: np.ndarray,
    lo_prev: int,
    hi_prev: int,
    log_a: float,
    log_b: float,
    a: float,
    b: float,
) -> np.ndarray:
    """Log of the inner transition sums S[l] = sum_j P(l | j) rho_prev[j].

    The ancestor sum is banded around its mode j ~ l*a; contributions outside
    +-INNER_BAND_SDS standard deviations are below 1e-25 relative and are
    dropped.  When the band covers the whole previous window the result is
    exact (up to floating point).
    """
    w_prev = hi_prev - lo_prev + 1
    w_new = hi_new - lo_new + 1
    shift = float(np.max(log_rho_prev))
    if not math.isfinite(shift):
        return np.full(w_new, NEG_INF)
    rho_hat = np.exp(log_rho_prev - shift)

    lgf = _lgf(int(hi_new) + 2)
    ells = np.arange(lo_new, hi_new + 1, dtype=np.int64)
    rowc = lgf[ells - 1] + ells * log_b
    j_all = np.arange(lo_prev, hi_prev + 1, dtype=np.int64)
    u = -lgf[j_all - 1] + j_all * (log_a - log_b)

    with np.errstate(divide="ignore", invalid="ignore"):
        if w_new * w_prev <= 65536:
            # small instance: full rectangle in one shot, exact inner sums
            m = ells[:, None] - j_all[None, :]
            valid = m >= 0
            log_t = rowc[:, None] + u[None, :]
            log_t += np.where(valid, -lgf[np.where(valid, m, 0)], NEG_INF)
            row_max = np.max(log_t, axis=1)
            norm = np.where(np.isfinite(row_max), row_max, 0.0)
            sums = np.exp(log_t - norm[:, None]) @ rho_hat
            return np.log(sums) + norm + shift

        # banded inner sums around the kernel mode j ~ l * a; terms beyond
        # INNER_BAND_SDS standard deviations are below e^-32 relative
        sd = math.sqrt(max(hi_new, 1) * a * b)
        half = int(math.ceil(INNER_BAND_SDS * sd)) + INNER_BAND_PAD
        band = min(2 * half + 1, w_prev)
        j_hi = np.minimum(ells, hi_prev)
        if band == w_prev:
            js = np.full(ells.shape, lo_prev, dtype=np.int64)
        else:
            center = np.rint(ells * a).astype(np.int64)
            js = np.clip(center - half, lo_prev, np.maximum(lo_prev, j_hi - band + 1))

        # log T(l, j) = rowc[l] + u[j] + w[l - j]: 1-D tables, so the
        # (rows x band) matrices are contiguous windowed slices, not gathers
        m_max = int(hi_new) - lo_prev
        u_pad = np.concatenate([u, np.full(band, NEG_INF)])
        u_win = np.lib.stride_tricks.sliding_window_view(u_pad, band)
        # w[m] = -lgf[m] accessed as w[m_row - i]: reversed windows, -inf for m < 0
        wrx = np.ascontiguousarray(
            np.concatenate([np.full(band, NEG_INF), -lgf[: m_max + 1]])[::-1]
        )
        w_win = np.lib.stride_tricks.sliding_window_view(wrx, band)
        rho_pad = np.zeros(w_prev + band, dtype=np.float64)
        rho_pad[:w_prev] = rho_hat
        rho_win = np.lib.stride_tricks.sliding_window_view(rho_pad, band)

        j_off = js - lo_prev
        m_off = m_max - (ells - js)
        out = np.empty(w_new, dtype=np.float64)
        rows_per_chunk = max(1, _CHUNK_ENTRIES // band)
        for s in range(0, w_new, rows_per_chunk):
            e = min(s + rows_per_chunk, w_new)
            log_t = u_win[j_off[s:e]] + w_win[m_off[s:e]]
            log_t += rowc[s:e, None]
            row_max = np.max(log_t, axis=1)
            norm = np.where(np.isfinite(row_max), row_max, 0.0)
            sums = np.einsum(
                "ij,ij->i", np.exp(log_t - norm[:, None]), rho_win[j_off[s:e]]
            )
            np.log(sums, out=out[s:e])
            out[s:e] += norm
    return out + shift


def _shift_rows(
    lo_new: int,
    hi_new: int,
    prev: FilterState,
    log_a: float,
    log_b: float,
    a: float,
    b: float,
    y: int,
    p: float,
) -> np.ndarray:
    """Unnormalized new log weights over [lo_new, hi_new] for observation y."""
    width = hi_new - lo_new + 1
    if b == 0.0:
        # degenerate kernel: the population cannot move
        log_s = np.full(width, NEG_INF)
        lo, hi = max(lo_new, prev.support_lo), min(hi_new, prev.support_hi)
        if lo <= hi:
            log_s[lo - lo_new : hi - lo_new + 1] = prev.log_rho[
                lo - prev.support_lo : hi - prev.support_lo + 1
            ]
    else:
        log_s = _transition_band(
            lo_new, hi_new, prev.log_rho, prev.support_lo, prev.support_hi,
            log_a, log_b, a, b,
        )
    ells = np.arange(lo_new, hi_new + 1, dtype=np.int64)
    if p == 1.0:
        log_obs = np.where(ells == y, 0.0, NEG_INF)
    else:
        lgf = _lgf(int(hi_new) + 2)
        log_obs = (
            lgf[ells] - lgf[y] - lgf[ells - y]
            + y * math.log(p) + (ells - y) * math.log1p(-p)
        )
    return log_s + log_obs


def rho_step(
    state: FilterState,
    y_next: int,
    day_next: int,
    schedule: DynamicsSchedule,
    hard_cap: int = HARD_CAP_STATES,
    tail_tol: float = TAIL_TOL,
) -> FilterState:
    """Absorb one partial observation and return the new filter state.

    Implements one step of the rho recursion: inner pure-birth transition sum
    over the ancestor window, times the binomial observation weight, over a
    freshly truncated window [x_bar_new, L].
    """
    if day_next <= state.last_day:
        raise ValueError(
            f"day_next must exceed the state's last day {state.last_day}, got {day_next}"
        )
    if y_next < 0:
        raise ValueError(f"y_next must be >= 0, got {y_next}")

    total_rate = cumulative_rate(schedule, state.last_day, day_next)
    a = math.exp(-total_rate)
    b = -math.expm1(-total_rate)
    log_a, log_b = -total_rate, (math.log(b) if b > 0.0 else NEG_INF)
    p = p_at(schedule, day_next)
    x_bar_new = max(state.x_bar, y_next)

    mean_cf, var_cf = cond_mean_var_closed(
        x_bar_new, lambda_at(schedule, day_next), p, float(day_next)
    )
    hi = truncate_bound(mean_cf, var_cf)
    if p == 1.0:
        hi = x_bar_new
    else:
        # cover the window implied by the new observation alone
        obs_mean = y_next / p
        obs_sd = math.sqrt((y_next + 1.0) * (1.0 - p)) / p
        hi = max(hi, truncate_bound(obs_mean, obs_sd * obs_sd), x_bar_new)
    hi = max(hi, x_bar_new)

    # first extension block is folded into the base window; the loop then
    # grows the window until the newest block carries < tail_tol of the mass
    block = 0 if p == 1.0 else max(EXTENSION_MIN_BLOCK, (hi - x_bar_new + 1) // 10)
    hi += block
    cum = state.cum_states + (hi - x_bar_new + 1)
    if cum > hard_cap:
        raise TruncationCapError(
            f"truncation window [{x_bar_new}, {hi}] would push cumulative "
            f"state count {cum} past the cap {hard_cap}"
        )
    log_rho = _shift_rows(x_bar_new, hi, state, log_a, log_b, a, b, y_next, p)
    log_total = _lse(log_rho)
    while p < 1.0:
        tail = _lse(log_rho[-block:])
        if tail < math.log(tail_tol) + log_total or tail == NEG_INF:
            break
        block = max(EXTENSION_MIN_BLOCK, (hi - x_bar_new + 1) // 10)
        cum += block
        if cum > hard_cap:
            raise TruncationCapError(
                f"adaptive extension past {hi} would exceed the state cap {hard_cap}"
            )
        ext = _shift_rows(hi + 1, hi + block, state, log_a, log_b, a, b, y_next, p)
        log_rho = np.concatenate([log_rho, ext])
        hi += block
        log_total = float(np.logaddexp(log_total, _lse(ext)))

    flags = state.seed_flags
    if math.isfinite(log_total) and log_total != NEG_INF:
        probs = np.exp(log_rho - log_total)
        mean_rho = float(probs @ (x_bar_new + np.arange(log_rho.shape[0])))
        if abs(mean_rho - mean_cf) > 0.2 * max(mean_rho, 1.0):
            flags += 1

    return FilterState(
        n=state.n + 1,
        log_rho=log_rho,
        x_bar=x_bar_new,
        last_day=day_next,
        cum_states=cum,
        seed_flags=flags,
    )


@dataclass(frozen=True)
class FilterRun:
    """Result of filtering a whole series: final state plus per-step factors.

    ``log_factors[k]`` is the log predictive probability of the k-th absorbed
    observation given its history (the chain-rule likelihood factor), and
    ``loglik`` is their sum — the log joint probability of all absorbed
    observations.
    """

    state: FilterState
    log_factors: tuple[float, ...]
    loglik: float
    dropped_constants: float
    states: tuple[FilterState, ...] = ()
    underflowed: bool = False


def filter_series(
    series: ObservationSeries,
    schedule: DynamicsSchedule,
    hard_cap: int = HARD_CAP_STATES,
    tail_tol: float = TAIL_TOL,
    keep_states: bool = False,
) -> FilterRun:
    """Run the filter along a series and collect the chain-rule factors.

    The first series entry anchors the filter: the initial population x0 is
    known, and when the first reported count equals x0 (the default ingestion
    convention) that count is consumed as the anchor itself.  If x0 was
    overridden to a different value, the first count is treated as a partial
    observation of the known initial state.
    """
    days, values = series.days, series.values
    state = init_filter(series.x0, days[0])
    lgf = _lgf(int(max(values)) + 2)
    factors: list[float] = []
    dropped = 0.0
    kept: list[FilterState] = []
    start = 1
    if values[0] != series.x0:
        # x0 override: day-0 count is itself a binomial observation of x0
        f = binom_log_obs(series.x0, values[0], p_at(schedule, days[0]))
        factors.append(f)
        dropped += 1.0 + float(lgf[values[0]])
    prev_total = 0.0
    underflowed = False
    for k in range(start, len(days)):
        state = rho_step(state, values[k], days[k], schedule, hard_cap, tail_tol)
        total = state.log_total()
        dropped += 1.0 + float(lgf[values[k]])
        if not math.isfinite(total):
            # joint probability underflowed to zero: the schedule is
            # irreconcilable with the data from this observation on
            factors.append(NEG_INF)
            underflowed = True
            if keep_states:
                kept.append(state)
            break
        factors.append(total - prev_total)
        prev_total = total
        if keep_states:
            kept.append(state)
    return FilterRun(
        state=state,
        log_factors=tuple(factors),
        loglik=NEG_INF if underflowed else float(sum(factors)),
        dropped_constants=dropped,
        states=tuple(kept),
        underflowed=underflowed,
    )


def _predictive_state(
    state: FilterState,
    day_next: int,
    schedule: DynamicsSchedule,
    tail_tol: float = TAIL_TOL,
) -> tuple[int, np.ndarray]:
    """Log weights of the *next-day* population before observing anything."""
    total_rate = cumulative_rate(schedule, state.last_day, day_next)
    a = math.exp(-total_rate)
    b = -math.expm1(-total_rate)
    log_a = -total_rate
    if b == 0.0:
        return state.support_lo, state.log_rho.copy()
    log_b = math.log(b)
    growth = math.exp(total_rate)
    m, v = filtered_moments(state)
    mean_next = m * growth
    var_next = v * growth * growth + m * growth * (growth - 1.0)
    lo = state.support_lo
    hi = max(truncate_bound(mean_next, var_next), state.support_hi)
    log_q = _transition_band(
        lo, hi, state.log_rho, state.support_lo, state.support_hi, log_a, log_b, a, b
    )
    log_total = _lse(log_q)
    while True:
        block = max(EXTENSION_MIN_BLOCK, (hi - lo + 1) // 10)
        ext = _transition_band(
            hi + 1, hi + block, state.log_rho, state.support_lo, state.support_hi,
            log_a, log_b, a, b,
        )
        ext_total = _lse(ext)
        log_q = np.concatenate([log_q, ext])
        hi += block
        log_total = float(np.logaddexp(log_total, ext_total))
        if ext_total < math.log(tail_tol) + log_total or ext_total == NEG_INF:
            break
    return lo, log_q


def predictive_pmf(
    state: FilterState,
    day_next: int,
    schedule: DynamicsSchedule,
    tail_tol: float = TAIL_TOL,
) -> dict[int, float]:
    """Conditional pmf of the next partial observation given the history.

    Marginalizes the binomial observation kernel over the predictive
    population distribution: P(Y=y | history) =
    sum_x Binom(y; x, p) * P(X_next = x | history).
    """
    if state.n < 1:
        raise ValueError("predictive pmf needs at least one absorbed observation")
    lo, log_q = _predictive_state(state, day_next, schedule, tail_tol)
    log_norm = _lse(log_q)
    p = p_at(schedule, day_next)
    width = log_q.shape[0]
    xs = lo + np.arange(width, dtype=np.int64)
    if p == 1.0:
        probs = np.exp(log_q - log_norm)
        return {int(x): float(pr) for x, pr in zip(xs, probs)}
    hi = lo + width - 1
    lgf = _lgf(int(hi) + 2)
    ys = np.arange(0, hi + 1, dtype=np.int64)
    out: dict[int, float] = {}
    log_p, log_1mp = math.log(p), math.log1p(-p)
    with np.errstate(divide="ignore", invalid="ignore"):
        rows_per_chunk = max(1, _CHUNK_ENTRIES // width)
        for s in range(0, ys.shape[0], rows_per_chunk):
            e = min(s + rows_per_chunk, ys.shape[0])
            y = ys[s:e, None]
            valid = xs[None, :] >= y
            xc = np.where(valid, xs[None, :], 0)
            yc = np.minimum(y, xc)
            log_term = (
                lgf[xc] - lgf[yc] - lgf[xc - yc]
                + yc * log_p + (xc - yc) * log_1mp
                + (log_q[None, :] - log_norm)
            )
            vals = np.exp(np.where(valid, log_term, NEG_INF)).sum(axis=1)
            for yy, pr in zip(range(s, e), vals):
                out[int(yy)] = float(pr)
    return out
