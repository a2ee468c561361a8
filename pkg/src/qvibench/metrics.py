"""Evaluation measures: optimality/feasibility, EOC, performance profiles, rates.

The functions take problems and traces by duck typing: a problem needs
``operator`` (callable, ``A(x)``) and ``feasible`` (a feasible map), a trace
needs ``records`` whose entries carry ``x``, ``z`` and ``step_norm``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ContractionParams, ParameterError, QviError, gamma_interval
from .projections import UnboundedSetError

__all__ = [
    "Metric",
    "RunRecord",
    "RatioTable",
    "ProfileCurve",
    "RateReport",
    "EocUndefinedError",
    "opt_measure",
    "natural_residual",
    "feas_measure",
    "eoc",
    "performance_ratios",
    "profile_curve",
    "rate_report",
]

log = logging.getLogger(__name__)

SOLVED = "SolvedToTol"
STATUSES = ("SolvedToTol", "MaxIterReached", "Diverged")

# Per-step slack in the contraction check and the relative floor under which
# V_k is treated as converged to round-off.
RATE_SLACK = 1e-9
V_FLOOR = 1e-24


class EocUndefinedError(QviError, ValueError):
    pass


# -- optimality / feasibility -------------------------------------------------


def opt_measure(problem, x) -> float:
    """``-min {A(x)·(z - x) : z in K(x)}``.

    For ``K(x) = c(x) + base`` this is ``A(x)·(x - c(x)) - min_{u in base} A(x)·u``,
    which is closed form for boxes and balls.  Raises
    :class:`~qvibench.projections.UnboundedSetError` when ``K(x)`` is
    unbounded; use :func:`natural_residual` there.
    """
    x = np.asarray(x, dtype=np.float64)
    F = problem.operator(x)
    K = problem.feasible
    c = K.shift(x)
    return float(F @ (x - c)) - K.base.linear_min(F)


def natural_residual(problem, x, gamma: float) -> float:
    """``‖x - P_{K(x)}(x - gamma A(x))‖``; zero exactly at solutions."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    r = x - problem.feasible.project(x, x - gamma * problem.operator(x))
    return math.sqrt(float(r @ r))


def feas_measure(problem, x) -> float:
    """Largest constraint violation of `x` against ``K(x)``."""
    x = np.asarray(x, dtype=np.float64)
    K = problem.feasible
    return K.base.violation(x - K.shift(x))


def optimality(problem, x) -> float:
    """:func:`opt_measure` when ``K(x)`` is bounded, else the natural residual at ``gamma = 1``."""
    try:
        return opt_measure(problem, x)
    except UnboundedSetError:
        return natural_residual(problem, x, 1.0)


# -- experimental order of convergence ----------------------------------------


def _step_norms(trace) -> list[float]:
    if hasattr(trace, "records"):
        return [r.step_norm for r in trace.records]
    return [float(s) for s in trace]


def eoc(trace, all_windows: bool = False):
    """Experimental order of convergence from successive step norms.

    For steps ``s_k = ‖x_k - x_{k-1}‖`` the window at ``k`` is
    ``max(log s_{k+1} / log s_k, log s_{k+2} / log s_{k+1})``.  It is
    evaluated at the last window whose three steps lie strictly inside
    ``(0, 1)``.  `trace` is an iteration trace or a plain sequence of step
    norms.  With ``all_windows=True`` every valid window is returned as a
    list of ``(k, value)`` pairs, ``k`` counting steps from 1.
    """
    steps = _step_norms(trace)
    windows = []
    for i in range(len(steps) - 2):
        s0, s1, s2 = steps[i : i + 3]
        if all(0.0 < s < 1.0 for s in (s0, s1, s2)):
            value = max(math.log(s1) / math.log(s0), math.log(s2) / math.log(s1))
            windows.append((i + 1, value))
    if all_windows:
        return windows
    if not windows:
        raise EocUndefinedError("EOC undefined: no window of three step norms in (0, 1)")
    return windows[-1][1]


# -- performance profiles -----------------------------------------------------


class Metric(str, Enum):
    ITERS = "iters"
    TIME = "time"


@dataclass(frozen=True)
class RunRecord:
    problem: str
    start_id: int
    solver: str
    iters: int
    time_ms: float
    final_opt: float
    final_feas: float
    status: str
    eoc: float = math.nan

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError(f"iters must be non-negative, got {self.iters}")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def instance(self) -> tuple[str, int]:
        return (self.problem, self.start_id)


@dataclass
class RatioTable:
    """Performance ratios ``r[s, i]``; rows follow `solvers`, columns `instances`."""

    solvers: list[str]
    instances: list[tuple[str, int]]
    r: np.ndarray
    excluded: list[tuple[str, int]] = field(default_factory=list)

    def row(self, solver: str) -> np.ndarray:
        return self.r[self.solvers.index(solver)]


def _cost(rec: RunRecord, metric: Metric) -> float:
    if rec.status != SOLVED:
        return math.inf
    # Ratios need positive costs; a start that already solves the problem
    # counts as one iteration (or one microsecond).
    if metric is Metric.ITERS:
        return float(max(rec.iters, 1))
    return max(rec.time_ms, 1e-3)


def performance_ratios(records, metric=Metric.ITERS) -> RatioTable:
    """``r[s, i] = t[s, i] / min_s' t[s', i]`` with failed runs costed at ``+inf``.

    Instances on which every solver failed have no finite best cost; they are
    dropped (with a warning) and listed in ``RatioTable.excluded``.
    """
    metric = Metric(metric)
    records = list(records)
    solvers: list[str] = []
    instances: list[tuple[str, int]] = []
    cost: dict[tuple[str, tuple[str, int]], float] = {}
    for rec in records:
        if rec.solver not in solvers:
            solvers.append(rec.solver)
        if rec.instance not in instances:
            instances.append(rec.instance)
        key = (rec.solver, rec.instance)
        if key in cost:
            raise ValueError(f"duplicate record for solver {rec.solver!r} on {rec.instance}")
        cost[key] = _cost(rec, metric)
    missing = [(s, i) for s in solvers for i in instances if (s, i) not in cost]
    if missing:
        raise ValueError(f"missing runs, e.g. solver {missing[0][0]!r} on {missing[0][1]}")

    t = np.array([[cost[(s, i)] for i in instances] for s in solvers], dtype=np.float64)
    best = t.min(axis=0) if t.size else np.zeros(0)
    keep = np.isfinite(best)
    excluded = [i for i, k in zip(instances, keep) if not k]
    for inst in excluded:
        log.warning("instance %s:%d excluded from profile: every solver failed", *inst)
    with np.errstate(invalid="ignore"):
        r = t[:, keep] / best[keep]
    return RatioTable(solvers, [i for i, k in zip(instances, keep) if k], r, excluded)


@dataclass(frozen=True)
class ProfileCurve:
    solver: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        rhos = [p[1] for p in self.points]
        if any(b < a for a, b in zip(rhos, rhos[1:])) or any(not 0 <= v <= 1 for v in rhos):
            raise ValueError("profile values must be non-decreasing and lie in [0, 1]")

    def __call__(self, T: float) -> float:
        for t, rho in reversed(self.points):
            if t <= T:
                return rho
        return 0.0


def profile_curve(ratios: RatioTable, solver: str, grid) -> ProfileCurve:
    """``rho_s(T) = |{i : r[s, i] <= T}| / |I|`` for each ``T`` in `grid`."""
    grid = [float(T) for T in grid]
    if any(T < 1 for T in grid) or any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted and every T >= 1")
    row = ratios.row(solver)
    if row.size == 0:
        raise ValueError("performance profile over an empty instance set")
    pts = tuple((T, float(np.count_nonzero(row <= T)) / row.size) for T in grid)
    return ProfileCurve(solver, pts)


# -- linear-rate verification -------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    rho_theoretical: float
    rho_valid: float
    rho_empirical: float
    bound_violations: int
    bound_violations_valid: int
    geometric_violations: int
    geometric_violations_paired: int
    beta: float
    gamma_interval: tuple[float, float]
    iterations: int
    max_ratio: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["gamma_interval"] = list(self.gamma_interval)
        return d


def _lyapunov(trace, x_star: np.ndarray) -> np.ndarray:
    """``V_k = ‖x_k - x*‖² + ‖z_k - x*‖²``; traces without ``z`` use ``z_k = x_k``."""
    out = []
    for rec in trace.records:
        ex = rec.x - x_star
        z = rec.z if rec.z is not None else rec.x
        ez = z - x_star
        out.append(float(ex @ ex) + float(ez @ ez))
    return np.array(out)


def rate_report(trace, x_star, params: ContractionParams, rho: float | None = None) -> RateReport:
    """Check an inertial-method trace against the per-step contraction bound.

    ``bound_violations`` counts steps with ``V_{k+1} > rho V_k + 1e-9`` for
    the max-form constant ``rho = max{β², b(1-β²), (1-β²)(1-a)}``;
    ``bound_violations_valid`` does the same for ``β² + (1-β²)max{b, 1-a}``.
    ``geometric_violations`` counts ``‖x_k - x*‖² > rho^k V_0 + 1e-9`` and
    ``geometric_violations_paired`` the variant ``2 rho^k ‖x_0 - x*‖²``.
    ``rho_empirical`` is ``exp`` of the least-squares slope of ``log V_k``
    over the tail half of the steps before ``V_k`` reaches round-off level
    (``1e-24 V_0``); it is 0 when fewer than two such steps exist.

    An explicit `rho` replaces both constants, e.g. ``β²`` for a plain
    projection iteration whose trace carries no ``z``.
    """
    if len(trace.records) < 5:
        raise ValueError(f"trace too short for a rate report ({len(trace.records)} < 5 iterations)")
    x_star = np.asarray(x_star, dtype=np.float64)
    V = _lyapunov(trace, x_star)
    rho_valid = params.rho_valid if rho is None else float(rho)
    rho = params.rho if rho is None else float(rho)
    viol = int(np.count_nonzero(V[1:] > rho * V[:-1] + RATE_SLACK))
    viol_valid = int(np.count_nonzero(V[1:] > rho_valid * V[:-1] + RATE_SLACK))

    ex2 = np.array([float((r.x - x_star) @ (r.x - x_star)) for r in trace.records])
    k = np.arange(len(V))
    geo = int(np.count_nonzero(ex2[1:] > rho ** k[1:] * V[0] + RATE_SLACK))
    geo2 = int(np.count_nonzero(ex2[1:] > 2.0 * rho ** k[1:] * ex2[0] + RATE_SLACK))

    usable = np.flatnonzero(V > V_FLOOR * V[0]) if V[0] > 0 else np.array([], dtype=int)
    # Keep the leading run only: once V drops to round-off it stays there.
    if usable.size:
        stop = np.flatnonzero(np.diff(usable) != 1)
        usable = usable[: stop[0] + 1] if stop.size else usable
    if usable.size >= 2:
        tail = usable[usable.size // 2 :] if usable.size >= 4 else usable
        slope = np.polyfit(tail.astype(float), np.log(V[tail]), 1)[0]
        rho_emp = float(math.exp(slope))
    else:
        rho_emp = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(V[:-1] > RATE_SLACK, V[1:] / V[:-1], 0.0)

    return RateReport(
        rho_theoretical=rho,
        rho_valid=rho_valid,
        rho_empirical=rho_emp,
        bound_violations=viol,
        bound_violations_valid=viol_valid,
        geometric_violations=geo,
        geometric_violations_paired=geo2,
        beta=params.beta,
        gamma_interval=gamma_interval(params.mu, params.lip, params.lam),
        iterations=len(trace.records),
        max_ratio=float(ratios.max()) if ratios.size else 0.0,
    )
