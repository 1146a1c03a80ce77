"""Exact simulation of pure birth paths and binomially thinned observations.

All randomness flows through a named, counter-based generator (numpy's
Philox) keyed by ``(seed, stream)``.  Fixtures produced with a given seed are
therefore reproducible across platforms and numpy point releases; the
algorithm identity is a module constant, never a platform default.

Streams: 0 = birth event times, 1 = observation thinning.  Helpers that need
extra independent streams pick values >= 2.
"""

from __future__ import annotations

import datetime as _dt
import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsSchedule, ObservationSeries, lambda_at, p_at

RNG_ALGORITHM = "numpy.random.Philox (philox4x64-10), key = (seed, stream)"

STREAM_EVENTS = 0
STREAM_THINNING = 1

POP_CAP = 100_000_000


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for the given (seed, stream) pair."""
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimPath:
    """One realized pure-birth trajectory.

    ``event_times[i]`` is the time of the i-th birth, after which the
    population is ``x0 + i + 1``.  ``observations`` holds any binomially
    thinned samples attached to the path.
    """

    x0: int
    end_day: int
    event_times: tuple[float, ...]
    seed: int
    truncated: bool = False
    observations: tuple[tuple[int, int], ...] = ()

    @property
    def final_population(self) -> int:
        return self.x0 + len(self.event_times)

    def population_at(self, t: float) -> int:
        """Population at time t (births at exactly t are counted)."""
        return self.x0 + bisect_right(self.event_times, t)


def simulate_pbp(
    x0: int,
    schedule: DynamicsSchedule,
    end_day: int,
    seed: int,
    pop_cap: int = POP_CAP,
    stream: int = STREAM_EVENTS,
) -> SimPath:
    """Event-driven simulation over [0, end_day] with per-day constant rates.

    Within each day the process is homogeneous with rate ``lambda_t * x``;
    waiting times are exponential, and the memoryless property lets the clock
    restart at day boundaries where the rate changes.
    """
    if x0 < 1:
        raise ValueError(f"x0 must be >= 1, got {x0}")
    if end_day < 0:
        raise ValueError(f"end_day must be >= 0, got {end_day}")
    rng = make_rng(seed, stream)
    events: list[float] = []
    x = x0
    truncated = False
    for day in range(end_day):
        lam = lambda_at(schedule, day)
        if lam <= 0.0:
            continue
        t = float(day)
        while True:
            wait = rng.standard_exponential() / (lam * x)
            if t + wait >= day + 1.0:
                break
            t += wait
            x += 1
            events.append(t)
            if x >= pop_cap:
                truncated = True
                break
        if truncated:
            break
    return SimPath(
        x0=x0, end_day=end_day, event_times=tuple(events), seed=seed, truncated=truncated
    )


def thin_observations(
    path: SimPath,
    schedule: DynamicsSchedule,
    obs_days: list[int] | tuple[int, ...],
    seed: int,
    stream: int = STREAM_THINNING,
) -> list[tuple[int, int]]:
    """Independent binomial samples of the path population on the given days."""
    if any(d < 0 or d > path.end_day for d in obs_days):
        raise ValueError(f"obs_days must lie within [0, {path.end_day}]")
    rng = make_rng(seed, stream)
    out = []
    for d in obs_days:
        x = path.population_at(float(d))
        y = int(rng.binomial(x, p_at(schedule, d)))
        out.append((d, y))
    return out


def simulate_series(
    x0: int,
    schedule: DynamicsSchedule,
    n_days: int,
    seed: int,
    t0: _dt.date = _dt.date(2020, 3, 1),
) -> tuple[ObservationSeries, SimPath]:
    """Simulate a path and package daily thinned observations as a series.

    Day 0 reports the known initial state x0 itself (the filter's anchoring
    convention); days 1..n_days are binomially thinned.
    """
    path = simulate_pbp(x0, schedule, n_days, seed)
    obs = thin_observations(path, schedule, list(range(1, n_days + 1)), seed)
    counts = [(0, x0)] + obs
    series = ObservationSeries(t0=t0, counts=tuple(counts), x0=x0)
    full = SimPath(
        x0=path.x0,
        end_day=path.end_day,
        event_times=path.event_times,
        seed=seed,
        truncated=path.truncated,
        observations=tuple(obs),
    )
    return series, full


def yule_mean(x0: int, lam: float, t: float) -> float:
    """Closed-form mean of a constant-rate pure birth process: x0 * e^(lam t)."""
    return x0 * math.exp(lam * t)
