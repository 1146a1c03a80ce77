"""Core value types and piecewise-geometric parameter dynamics.

The growth rate ``lambda_t`` and the observation probability ``p_t`` both
follow piecewise-geometric laws: within regime k the parameter is multiplied
by a constant factor (``alpha_k`` for the growth rate, ``beta_k`` for the
observation probability) once per day, and factors accumulated in completed
regimes are carried forward as fixed products.

Exponent convention (kept exactly as in the source model): the first regime
contributes ``alpha_1**(t - t0)``, while every later regime k contributes
``alpha_k**(t - start_k + 1)`` on top of ``alpha_j**(len_j)`` for each
completed regime j.  The ``+1`` means the first day of a new regime already
applies one factor of the new coefficient.  ``p_t`` is always clamped to
``min(p_t, 1)``.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field, replace
from typing import Sequence


@dataclass(frozen=True)
class RegimeSpec:
    """One regime of the piecewise dynamics, starting at ``start_day`` (inclusive)."""

    start_day: int
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.start_day < 0:
            raise ValueError(f"regime start_day must be >= 0, got {self.start_day}")
        if not (self.alpha > 0.0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0.0):
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class DynamicsSchedule:
    """Initial values plus the ordered regime list (first regime must start at day 0)."""

    lambda0: float
    p0: float
    regimes: tuple[RegimeSpec, ...] = (RegimeSpec(0),)

    def __post_init__(self):
        # lambda0 == 0 is allowed as the degenerate frozen-population limit;
        # fitted schedules keep it strictly positive through the box bounds.
        if not (self.lambda0 >= 0.0):
            raise ValueError(f"lambda0 must be non-negative, got {self.lambda0}")
        if not (0.0 < self.p0 <= 1.0):
            raise ValueError(f"p0 must lie in (0, 1], got {self.p0}")
        regimes = tuple(self.regimes)
        object.__setattr__(self, "regimes", regimes)
        if not regimes or regimes[0].start_day != 0:
            raise ValueError("regimes must be nonempty and start at day 0")
        starts = [r.start_day for r in regimes]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"regime start days must be strictly increasing: {starts}")

    @property
    def break_days(self) -> tuple[int, ...]:
        return tuple(r.start_day for r in self.regimes[1:])

    def regime_index(self, t: int) -> int:
        k = 0
        for i, r in enumerate(self.regimes):
            if r.start_day <= t:
                k = i
        return k

    def with_params(self, **named: float) -> "DynamicsSchedule":
        """Return a copy with named parameters replaced.

        Recognized names: ``lambda0``, ``p0``, ``alpha_<k>``, ``beta_<k>``
        with k the 0-based regime index.
        """
        lam = named.pop("lambda0", self.lambda0)
        p0 = named.pop("p0", self.p0)
        regimes = list(self.regimes)
        for name, value in named.items():
            kind, _, idx = name.partition("_")
            if kind not in ("alpha", "beta") or not idx.isdigit():
                raise KeyError(f"unknown schedule parameter {name!r}")
            k = int(idx)
            if k >= len(regimes):
                raise KeyError(f"schedule has no regime {k} for parameter {name!r}")
            regimes[k] = replace(regimes[k], **{kind: value})
        return DynamicsSchedule(lambda0=lam, p0=p0, regimes=tuple(regimes))

    def param(self, name: str) -> float:
        if name == "lambda0":
            return self.lambda0
        if name == "p0":
            return self.p0
        kind, _, idx = name.partition("_")
        if kind in ("alpha", "beta") and idx.isdigit() and int(idx) < len(self.regimes):
            return getattr(self.regimes[int(idx)], kind)
        raise KeyError(f"unknown schedule parameter {name!r}")


def _log_factor(schedule: DynamicsSchedule, t: int, log_coeffs: Sequence[float]) -> float:
    """Accumulated log product of per-regime coefficients at integer day t."""
    if t < 0:
        raise ValueError(f"day index must be >= 0, got {t}")
    regimes = schedule.regimes
    total = 0.0
    for k, regime in enumerate(regimes):
        last = regimes[k + 1].start_day if k + 1 < len(regimes) else None
        if last is not None and t >= last:
            total += (last - regime.start_day) * log_coeffs[k]
            continue
        exponent = (t - regime.start_day) if k == 0 else (t - regime.start_day + 1)
        total += exponent * log_coeffs[k]
        break
    return total


def lambda_at(schedule: DynamicsSchedule, t: int) -> float:
    """Growth rate on day ``t`` under the piecewise-geometric law."""
    logs = [math.log(r.alpha) for r in schedule.regimes]
    return schedule.lambda0 * math.exp(_log_factor(schedule, t, logs))


def p_at(schedule: DynamicsSchedule, t: int) -> float:
    """Observation probability on day ``t``, clamped to (0, 1]."""
    logs = [math.log(r.beta) for r in schedule.regimes]
    log_p = math.log(schedule.p0) + _log_factor(schedule, t, logs)
    return math.exp(min(log_p, 0.0))


def cumulative_rate(schedule: DynamicsSchedule, day_from: int, day_to: int) -> float:
    """Integrated growth rate over [day_from, day_to) with per-day constant rates.

    This is the exponent that drives the pure-birth kernel across a gap of
    one or more days: rates are piecewise constant on integer days, so the
    integral is a plain sum of daily values.
    """
    if day_to < day_from:
        raise ValueError(f"day_to must be >= day_from, got [{day_from}, {day_to})")
    return sum(lambda_at(schedule, s) for s in range(day_from, day_to))


@dataclass(frozen=True)
class ObservationSeries:
    """Dated daily cumulative observed counts with known initial population x0.

    ``counts`` holds (day_index, cumulative_count) pairs; day indices are
    measured in days since ``t0``.  Counts need not be monotone (the binomial
    observation model tolerates dips); ingestion warns about dips but keeps
    them.
    """

    t0: _dt.date
    counts: tuple[tuple[int, int], ...]
    x0: int

    def __post_init__(self):
        counts = tuple((int(d), int(y)) for d, y in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise ValueError("series must contain at least one observation")
        days = [d for d, _ in counts]
        if days[0] < 0 or any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"day indices must be strictly increasing and >= 0: {days}")
        if any(y < 0 for _, y in counts):
            raise ValueError("counts must be non-negative")
        if self.x0 < 1:
            raise ValueError(f"x0 must be >= 1, got {self.x0}")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def days(self) -> tuple[int, ...]:
        return tuple(d for d, _ in self.counts)

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(y for _, y in self.counts)

    @property
    def start_day(self) -> int:
        return self.counts[0][0]

    @property
    def last_day(self) -> int:
        return self.counts[-1][0]

    def date_of(self, day_index: int) -> _dt.date:
        return self.t0 + _dt.timedelta(days=day_index)

    def day_of(self, date: _dt.date) -> int:
        return (date - self.t0).days

    def n_dips(self) -> int:
        vals = self.values
        return sum(1 for a, b in zip(vals, vals[1:]) if b < a)


def split(series: ObservationSeries, train_len: int) -> tuple[ObservationSeries, ObservationSeries]:
    """Prefix/suffix partition into training and test series.

    The test part keeps absolute day indices (so forecasts line up with the
    calendar); both parts inherit ``t0`` and ``x0``.
    """
    if not (1 <= train_len < len(series)):
        raise ValueError(
            f"train_len must lie in [1, {len(series) - 1}] for a series of "
            f"length {len(series)}, got {train_len}"
        )
    train = ObservationSeries(series.t0, series.counts[:train_len], series.x0)
    test = ObservationSeries(series.t0, series.counts[train_len:], series.x0)
    return train, test


@dataclass(frozen=True)
class FitResult:
    """Maximum-likelihood fit: schedule at the optimum plus diagnostics.

    ``locus`` maps each free parameter name to the interval within two
    log-likelihood units of the maximum (profile along that coordinate);
    ``hidden_fraction`` tracks (day, 1 - p_t) over the observation days.
    """

    schedule: DynamicsSchedule
    loglik: float
    locus: dict[str, tuple[float, float]] = field(default_factory=dict)
    locus_unbounded: dict[str, tuple[bool, bool]] = field(default_factory=dict)
    hidden_fraction: tuple[tuple[int, float], ...] = ()
    converged: bool = True
    n_evaluations: int = 0
    free_names: tuple[str, ...] = ()


@dataclass(frozen=True)
class ForecastTable:
    """Per-day point forecasts of observed cumulative counts, plus optional MAPE."""

    rows: tuple[tuple[int, float], ...]
    mape: float | None = None

    def __post_init__(self):
        rows = tuple((int(d), float(v)) for d, v in self.rows)
        object.__setattr__(self, "rows", rows)
        days = [d for d, _ in rows]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("forecast rows must have strictly increasing days")
        if any(v < 0 for _, v in rows):
            raise ValueError("forecast values must be non-negative")

    @property
    def days(self) -> tuple[int, ...]:
        return tuple(d for d, _ in self.rows)

    @property
    def predictions(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.rows)
