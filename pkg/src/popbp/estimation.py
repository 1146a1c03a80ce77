"""Likelihood maximization and identifiability analysis for schedule parameters.

The chain-rule log-likelihood of a schedule against a series comes straight
from the filter pass (sum of per-observation log predictive factors).  The
p cap at 1 makes the surface non-smooth along ridges, so maximization is
derivative-free: Nelder-Mead in transformed coordinates (log for positive
rates and coefficients, logit-with-cap for the observation probability),
multi-started from a Latin hypercube over the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .dynamics import DynamicsSchedule, FitResult, ObservationSeries, p_at
from .filtering import HARD_CAP_STATES, TAIL_TOL, TruncationCapError, filter_series
from .simulate import make_rng

DEFAULT_BOUNDS = {
    "lambda0": (1e-4, 2.0),
    "p0": (0.02, 1.0),
    "alpha": (0.05, 4.0),
    "beta": (0.05, 4.0),
}


def log_likelihood(
    series: ObservationSeries,
    schedule: DynamicsSchedule,
    include_constants: bool = False,
    hard_cap: int = HARD_CAP_STATES,
    tail_tol: float = TAIL_TOL,
) -> float:
    """Chain-rule log-likelihood of the partial observations under a schedule.

    With ``include_constants`` the ``e * y!`` factors dropped inside the
    filter are added back; they shift the value by a data-dependent constant
    and never move the argmax.
    """
    run = filter_series(series, schedule, hard_cap=hard_cap, tail_tol=tail_tol)
    if include_constants:
        return run.loglik + run.dropped_constants
    return run.loglik


def schedule_param_names(schedule: DynamicsSchedule) -> tuple[str, ...]:
    names = ["lambda0", "p0"]
    for k in range(len(schedule.regimes)):
        names.extend((f"alpha_{k}", f"beta_{k}"))
    return tuple(names)


def _default_bound(name: str) -> tuple[float, float]:
    key = name.partition("_")[0] if name not in DEFAULT_BOUNDS else name
    return DEFAULT_BOUNDS[key]


@dataclass(frozen=True)
class ParamSpace:
    """Free parameters, their boxes, and optimizer settings.

    Transforms: ``p0`` is optimized through a logit squashed onto
    ``(lo, 1]``; every other parameter through its logarithm with the box
    enforced by rejection.
    """

    free: tuple[str, ...]
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    n_starts: int = 16
    max_iter: int = 2000
    tol: float = 1e-6
    seed: int = 0
    # filter budget during optimization: far tighter than the filter's own
    # default cap, so hopeless parameter vectors fail fast instead of
    # computing million-state windows
    hard_cap: int = 500_000
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        if not self.free:
            raise ValueError("at least one free parameter is required")
        merged = {}
        for name in self.free:
            lo, hi = self.bounds.get(name, _default_bound(name))
            if not (0.0 < lo < hi):
                raise ValueError(f"bad bounds for {name}: ({lo}, {hi})")
            merged[name] = (float(lo), float(hi))
        object.__setattr__(self, "bounds", merged)

    def to_z(self, name: str, v: float) -> float:
        lo, hi = self.bounds[name]
        if name == "p0":
            u = (v - lo) / (hi - lo)
            return float(logit(min(max(u, 1e-12), 1.0 - 1e-12)))
        return math.log(v)

    def from_z(self, name: str, z: float) -> float:
        lo, hi = self.bounds[name]
        if name == "p0":
            return lo + (hi - lo) * float(expit(z))
        return math.exp(z)

    def in_box(self, name: str, v: float) -> bool:
        lo, hi = self.bounds[name]
        return lo <= v <= hi


def for_schedule(
    template: DynamicsSchedule,
    free: tuple[str, ...] | None = None,
    **settings,
) -> ParamSpace:
    """ParamSpace over all (or the named subset of) template parameters."""
    names = schedule_param_names(template) if free is None else tuple(free)
    return ParamSpace(free=names, **settings)


def _pack(space: ParamSpace, schedule: DynamicsSchedule) -> np.ndarray:
    return np.array([space.to_z(n, schedule.param(n)) for n in space.free])


def _unpack(space: ParamSpace, template: DynamicsSchedule, z: np.ndarray) -> DynamicsSchedule:
    values = {n: space.from_z(n, float(zi)) for n, zi in zip(space.free, z)}
    return template.with_params(**values)


def _latin_hypercube(space: ParamSpace, n: int, rng) -> list[np.ndarray]:
    """n stratified start points in z-space (one stratum per point per axis)."""
    if n <= 0:
        return []
    cols = []
    for name in space.free:
        lo, hi = space.bounds[name]
        strata = (rng.permutation(n) + rng.uniform(size=n)) / n
        if name == "p0":
            vs = lo + (hi - lo) * (0.02 + 0.96 * strata)
        else:
            vs = np.exp(math.log(lo * 1.02) + strata * (math.log(hi * 0.98) - math.log(lo * 1.02)))
        cols.append([space.to_z(name, v) for v in vs])
    return [np.array(zs) for zs in zip(*cols)]


def _heuristic_start(series: ObservationSeries, template: DynamicsSchedule, space: ParamSpace) -> DynamicsSchedule:
    """Crude growth-rate guess from the endpoint counts; coefficients at 1."""
    days, values = series.days, series.values
    y0 = max(values[0], 1)
    y1 = max(values[-1], 1)
    span = max(days[-1] - days[0], 1)
    lam = math.log(max(y1 / y0, 1.001)) / span
    guess = {}
    if "lambda0" in space.free:
        lo, hi = space.bounds["lambda0"]
        guess["lambda0"] = min(max(lam, lo * 1.5), hi * 0.5)
    if "p0" in space.free:
        guess["p0"] = 0.8
    return template.with_params(**guess)


def fit_mle(
    series: ObservationSeries,
    template: DynamicsSchedule,
    space: ParamSpace | None = None,
    compute_loci: bool | tuple[str, ...] = True,
    hard_cap: int | None = None,
    tail_tol: float | None = None,
) -> FitResult:
    """Maximize the chain-rule likelihood over the free parameters.

    Multi-start Nelder-Mead in transformed coordinates; the template point
    and a growth-rate heuristic are always among the starts, the rest come
    from a seeded Latin hypercube.  Returns the best point found with a
    ``converged`` flag (False when every start exhausted its iteration cap).
    """
    if space is None:
        space = for_schedule(template)
    hard_cap = space.hard_cap if hard_cap is None else hard_cap
    tail_tol = space.tail_tol if tail_tol is None else tail_tol
    n_regime_free = sum(1 for n in space.free if n.startswith(("alpha_", "beta_")))
    if n_regime_free and len(series) < 5 * n_regime_free:
        raise ValueError(
            f"need at least {5 * n_regime_free} observations for {n_regime_free} "
            f"free regime parameters, got {len(series)}"
        )

    evals = 0

    def objective(z: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        for n, zi in zip(space.free, z):
            if not space.in_box(n, space.from_z(n, float(zi))):
                return float("inf")
        try:
            sched = _unpack(space, template, z)
            ll = filter_series(series, sched, hard_cap=hard_cap, tail_tol=tail_tol).loglik
        except (TruncationCapError, ValueError):
            return float("inf")
        return float("inf") if not math.isfinite(ll) else -ll

    rng = make_rng(space.seed, stream=7)
    starts = [_pack(space, template), _pack(space, _heuristic_start(series, template, space))]
    starts.extend(_latin_hypercube(space, max(space.n_starts - len(starts), 0), rng))
    starts = starts[: max(space.n_starts, 1)]

    # drop starts whose objective is already infinite; a simplex started
    # inside an infeasible region would burn its whole iteration budget there
    scored = [(objective(z0), z0) for z0 in starts]
    finite_starts = [z0 for f, z0 in scored if math.isfinite(f)]
    if not finite_starts:
        raise ValueError("no start produced a finite likelihood")

    best_z, best_fun, converged = None, float("inf"), False
    for z0 in finite_starts:
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options=dict(
                maxiter=space.max_iter,
                maxfev=space.max_iter,
                xatol=space.tol,
                fatol=1e-9,
            ),
        )
        if res.fun < best_fun:
            best_fun, best_z, converged = res.fun, res.x, bool(res.success)

    if best_z is None or not math.isfinite(best_fun):
        raise ValueError("no start produced a finite likelihood")

    schedule = _unpack(space, template, best_z)
    loglik = -best_fun

    locus: dict[str, tuple[float, float]] = {}
    locus_flags: dict[str, tuple[bool, bool]] = {}
    if compute_loci:
        names = space.free if compute_loci is True else tuple(compute_loci)
        for name in names:
            lo, hi, flo, fhi = two_unit_locus(
                series, schedule, name, space.bounds[name],
                hard_cap=hard_cap, tail_tol=tail_tol, loglik_max=loglik,
            )
            locus[name] = (lo, hi)
            locus_flags[name] = (flo, fhi)

    hidden = tuple((d, 1.0 - p_at(schedule, d)) for d in series.days)
    return FitResult(
        schedule=schedule,
        loglik=loglik,
        locus=locus,
        locus_unbounded=locus_flags,
        hidden_fraction=hidden,
        converged=converged,
        n_evaluations=evals,
        free_names=space.free,
    )


def two_unit_locus(
    series: ObservationSeries,
    schedule: DynamicsSchedule,
    param: str,
    bounds: tuple[float, float] | None = None,
    drop: float = 2.0,
    width_tol: float = 1e-3,
    hard_cap: int = HARD_CAP_STATES,
    tail_tol: float = TAIL_TOL,
    loglik_max: float | None = None,
) -> tuple[float, float, bool, bool]:
    """Interval around the fitted value where the profile stays within `drop` units.

    The profile is one-dimensional: the named parameter varies while every
    other parameter stays at its fitted value.  Endpoints are located by
    doubling expansion plus bisection to ``width_tol``; a True flag marks an
    endpoint pinned at its box bound (locus possibly unbounded).
    """
    if bounds is None:
        bounds = _default_bound(param)
    lo_b, hi_b = bounds
    center = schedule.param(param)

    def profile(v: float) -> float:
        try:
            return log_likelihood(
                series, schedule.with_params(**{param: v}),
                hard_cap=hard_cap, tail_tol=tail_tol,
            )
        except (TruncationCapError, ValueError):
            return float("-inf")

    f0 = profile(center) if loglik_max is None else loglik_max
    target = f0 - drop

    def solve(direction: int) -> tuple[float, bool]:
        bound = hi_b if direction > 0 else lo_b
        step = max(width_tol, 0.05 * max(abs(center), 0.05))
        inside = center
        while True:
            v = center + direction * step
            if (direction > 0 and v >= bound) or (direction < 0 and v <= bound):
                if profile(bound) >= target:
                    return bound, True
                outside = bound
                break
            if profile(v) >= target:
                inside = v
                step *= 2.0
            else:
                outside = v
                break
        while abs(outside - inside) > width_tol:
            mid = 0.5 * (inside + outside)
            if profile(mid) >= target:
                inside = mid
            else:
                outside = mid
        return inside, False

    hi_v, hi_flag = solve(+1)
    lo_v, lo_flag = solve(-1)
    return lo_v, hi_v, lo_flag, hi_flag


def loglik_surface(
    series: ObservationSeries,
    template: DynamicsSchedule,
    lambdas,
    ps,
    hard_cap: int = HARD_CAP_STATES,
    tail_tol: float = TAIL_TOL,
) -> np.ndarray:
    """Log-likelihood over a (lambda, p) grid with other parameters fixed.

    Returns a matrix with shape (len(lambdas), len(ps)).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    ps = np.asarray(ps, dtype=float)
    for axis, label in ((lambdas, "lambda"), (ps, "p")):
        if axis.ndim != 1 or axis.size == 0 or np.any(np.diff(axis) <= 0):
            raise ValueError(f"{label} axis must be 1-D, non-empty, strictly increasing")
    out = np.empty((lambdas.size, ps.size))
    for i, lam in enumerate(lambdas):
        for j, p in enumerate(ps):
            try:
                out[i, j] = log_likelihood(
                    series, template.with_params(lambda0=float(lam), p0=float(p)),
                    hard_cap=hard_cap, tail_tol=tail_tol,
                )
            except (TruncationCapError, ValueError):
                out[i, j] = float("-inf")
    return out
