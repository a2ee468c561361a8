"""Projection-type iterations for QVIs with a shared driver.

``P(u, w)`` below stands for ``P_{K(u)}(w)``.  All six methods iterate
evaluations of the natural map ``u -> P(u, u - gamma A(u))``:

* ``proposed`` - inertial method with averaging parameter ``theta_k``:
  ``y = z_k + ((1 - 2 theta_{k-1}) / theta_{k-1}) (z_k - z_{k-1})``,
  ``x_k = P(y, y - gamma A(y))``, ``z_{k+1} = (1 - theta_k) z_k + theta_k x_k``.
* ``gradproj`` - ``x_{k+1} = P(x_k, x_k - gamma A(x_k))``.
* ``extragrad`` - ``y = P(x_k, x_k - gamma A(x_k))``, ``x_{k+1} = P(x_k, x_k - gamma A(y))``.
* ``relaxed1`` - ``x_{k+1} = (1 - alpha_k) x_k + alpha_k P(x_k, x_k - gamma A(x_k))``.
* ``relaxed2`` - ``y = (1 - beta_k) x_k + beta_k P(x_k, x_k - gamma A(x_k))``, then
  ``x_{k+1} = (1 - alpha_k) x_k + alpha_k P(y, y - gamma A(y))``.
* ``inertial-relaxed`` - ``y = x_k + theta_k (x_k - x_{k-1})``, then
  ``x_{k+1} = (1 - alpha_k) y + alpha_k P(y, y - gamma A(y))``.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from .core import ParameterError, QviError, as_vector
from .metrics import feas_measure, optimality

__all__ = [
    "Algorithm",
    "Status",
    "Schedule",
    "SolverConfig",
    "IterationRecord",
    "IterationTrace",
    "check_termination",
    "solve",
    "solve_proposed",
    "solve_gradient_projection",
    "solve_extragradient",
    "solve_relaxed1",
    "solve_relaxed2",
    "solve_inertial_relaxed",
]

DIVERGENCE_NORM = 1e12


class Algorithm(str, Enum):
    PROPOSED = "proposed"
    GRADPROJ = "gradproj"
    EXTRAGRAD = "extragrad"
    RELAXED1 = "relaxed1"
    RELAXED2 = "relaxed2"
    INERTIAL_RELAXED = "inertial-relaxed"


class Status(str, Enum):
    SOLVED = "SolvedToTol"
    MAX_ITER = "MaxIterReached"
    DIVERGED = "Diverged"


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


@dataclass(frozen=True)
class Schedule:
    """Parameter sequence ``f(k) = (p k + q) / (r k + s)`` for ``k = 0, 1, ...``.

    Constants are ``p = r = 0``.  Text forms accepted by :meth:`parse`: a
    number (``0.5``), a fraction (``1/3``) or four comma-separated
    coefficients ``p,q,r,s`` (``1,0,5,5`` is ``k / (5(k+1))``).
    """

    p: float
    q: float
    r: float
    s: float

    def __post_init__(self):
        if self.r < 0 or self.s <= 0:
            raise ParameterError(f"schedule denominator {self.r}k + {self.s} must stay positive")

    @classmethod
    def constant(cls, value: float) -> Schedule:
        return cls(0.0, float(value), 0.0, 1.0)

    @classmethod
    def parse(cls, text: str) -> Schedule:
        t = text.strip()
        if re.fullmatch(_NUM, t):
            return cls.constant(float(t))
        m = re.fullmatch(rf"({_NUM})\s*/\s*({_NUM})", t)
        if m:
            return cls.constant(float(m.group(1)) / float(m.group(2)))
        parts = [s.strip() for s in t.split(",")]
        if len(parts) == 4 and all(re.fullmatch(_NUM, s) for s in parts):
            return cls(*map(float, parts))
        raise ParameterError(f"cannot parse schedule {text!r} (use 0.5, 1/3 or p,q,r,s)")

    @property
    def is_constant(self) -> bool:
        return self.p == 0.0 and self.r == 0.0

    def __call__(self, k: int) -> float:
        return (self.p * k + self.q) / (self.r * k + self.s)

    def values(self, upto: int) -> np.ndarray:
        k = np.arange(upto + 1, dtype=np.float64)
        return (self.p * k + self.q) / (self.r * k + self.s)

    def __str__(self) -> str:
        if self.is_constant:
            v = self.q / self.s
            f = Fraction(v).limit_denominator(1000)
            return f"{f.numerator}/{f.denominator}" if float(f) == v and f.denominator != 1 else repr(v)
        return ",".join(repr(c) for c in (self.p, self.q, self.r, self.s))


# Default parameter choices, per algorithm.
THETA_DEFAULT = Schedule(1.0, 0.0, 5.0, 5.0)   # k / (5(k+1))
ALPHA_DEFAULT = Schedule(0.0, 1.0, 1.0, 1.0)   # 1 / (k+1)
BETA_DEFAULT = Schedule(3.0, 0.0, 7.0, 9.0)    # 3k / (7k+9)
GAMMA_DEFAULT = 0.5

_NEEDS = {
    Algorithm.PROPOSED: ("theta",),
    Algorithm.GRADPROJ: (),
    Algorithm.EXTRAGRAD: (),
    Algorithm.RELAXED1: ("alpha",),
    Algorithm.RELAXED2: ("alpha", "beta"),
    Algorithm.INERTIAL_RELAXED: ("theta", "alpha"),
}
_DEFAULTS = {"theta": THETA_DEFAULT, "alpha": ALPHA_DEFAULT, "beta": BETA_DEFAULT}


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm tag, step size, schedules and stopping rule.

    Schedules an algorithm does not use are ignored.  Ranges are checked over
    ``k = 0..max_iter``: ``theta`` in ``[0, 1)`` (the inertial factor of the
    proposed method is taken in its limit form where ``theta = 0``),
    ``alpha`` in ``(0, 1]`` and ``beta`` in ``[0, 1]``.  ``tol=None`` disables
    the stopping test so exactly ``max_iter`` iterations run.
    """

    algorithm: Algorithm
    gamma: float = GAMMA_DEFAULT
    theta: Schedule | None = None
    alpha: Schedule | None = None
    beta: Schedule | None = None
    tol: float | None = 1e-4
    max_iter: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.tol is not None and not self.tol >= 0:
            raise ParameterError(f"tol must be non-negative, got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        for name in _NEEDS[self.algorithm]:
            sched = getattr(self, name)
            if sched is None:
                raise ParameterError(f"{self.algorithm.value} needs a {name} schedule")
            v = sched.values(self.max_iter)
            ok = {
                "theta": (v >= 0) & (v < 1),
                "alpha": (v > 0) & (v <= 1),
                "beta": (v >= 0) & (v <= 1),
            }[name]
            if not np.all(ok):
                k = int(np.argmin(ok))
                raise ParameterError(f"{name}_{k} = {v[k]:.6g} outside its admissible range")

    @classmethod
    def default(cls, algorithm, **overrides) -> SolverConfig:
        """Configuration with the default parameters, then `overrides`."""
        algorithm = Algorithm(algorithm)
        kw = {name: _DEFAULTS[name] for name in _NEEDS[algorithm]}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(algorithm, **kw)

    def with_(self, **changes) -> SolverConfig:
        return replace(self, **changes)

    @property
    def theta_bounds(self) -> tuple[float, float]:
        """``(min, max)`` of ``theta_k`` over ``k = 0..max_iter``."""
        if self.theta is None:
            raise ParameterError(f"{self.algorithm.value} has no theta schedule")
        v = self.theta.values(self.max_iter)
        return float(v.min()), float(v.max())


@dataclass(frozen=True)
class IterationRecord:
    """State after one iteration.

    ``x`` is the iterate produced; for the proposed method ``z`` is the
    averaged sequence at the same index and ``y`` the evaluation point that
    produced ``x``.  ``k`` follows the usual indexing of each method: the
    proposed method starts at ``k = 0`` (``x_0`` is its first projection),
    the others at ``k = 1``.
    """

    k: int
    x: np.ndarray
    z: np.ndarray | None
    y: np.ndarray | None
    step_norm: float
    opt: float
    feas: float
    elapsed: float


@dataclass
class IterationTrace:
    solver: str
    start: np.ndarray
    start_opt: float = math.nan
    start_feas: float = math.nan
    records: list[IterationRecord] = field(default_factory=list)
    status: Status | None = None
    message: str = ""
    elapsed: float = 0.0

    def finish(self, status: Status, message: str = "") -> None:
        if self.status is not None:
            raise RuntimeError("trace status already set")
        self.status = status
        self.message = message

    @property
    def iters(self) -> int:
        return len(self.records)

    @property
    def x(self) -> np.ndarray:
        return self.records[-1].x if self.records else self.start

    @property
    def opt(self) -> float:
        return self.records[-1].opt if self.records else self.start_opt

    @property
    def feas(self) -> float:
        return self.records[-1].feas if self.records else self.start_feas

    @property
    def step_norms(self) -> list[float]:
        return [r.step_norm for r in self.records]


def check_termination(problem, x, tol: float | None) -> tuple[float, float, bool]:
    """``(opt, feas, opt <= tol and feas <= tol)``.

    ``opt`` is the optimality measure when ``K(x)`` is bounded and the
    natural residual (``gamma = 1``) otherwise.
    """
    opt = optimality(problem, x)
    feas = feas_measure(problem, x)
    return opt, feas, tol is not None and bool(opt <= tol and feas <= tol)


# -- iterations ---------------------------------------------------------------
#
# Each generator yields (k, x, z, y) forever; the driver decides when to stop.


def _proposed(problem, cfg, start):
    A, K, g, theta = problem.operator, problem.feasible, cfg.gamma, cfg.theta
    z_prev = z = start
    x_prev = None
    k = 0
    while True:
        if k == 0:
            y = z  # z_{-1} = z_0: the inertial term vanishes.
        else:
            t = theta(k - 1)
            if t > 0:
                y = z + ((1.0 - 2.0 * t) / t) * (z - z_prev)
            else:
                y = (1.0 - t) * x_prev + t * z_prev
        x = K.project(y, y - g * A(y))
        yield k, x, z, y
        t = theta(k)
        z_prev, z = z, (1.0 - t) * z + t * x
        x_prev = x
        k += 1


def _gradproj(problem, cfg, x):
    A, K, g = problem.operator, problem.feasible, cfg.gamma
    k = 0
    while True:
        k += 1
        x = K.project(x, x - g * A(x))
        yield k, x, None, None


def _extragrad(problem, cfg, x):
    A, K, g = problem.operator, problem.feasible, cfg.gamma
    k = 0
    while True:
        k += 1
        y = K.project(x, x - g * A(x))
        x = K.project(x, x - g * A(y))
        yield k, x, None, y


def _relaxed1(problem, cfg, x):
    A, K, g, alpha = problem.operator, problem.feasible, cfg.gamma, cfg.alpha
    k = 0
    while True:
        a = alpha(k)
        x = (1.0 - a) * x + a * K.project(x, x - g * A(x))
        k += 1
        yield k, x, None, None


def _relaxed2(problem, cfg, x):
    A, K, g, alpha, beta = problem.operator, problem.feasible, cfg.gamma, cfg.alpha, cfg.beta
    k = 0
    while True:
        a, b = alpha(k), beta(k)
        y = (1.0 - b) * x + b * K.project(x, x - g * A(x))
        x = (1.0 - a) * x + a * K.project(y, y - g * A(y))
        k += 1
        yield k, x, None, y


def _inertial_relaxed(problem, cfg, x):
    A, K, g, alpha, theta = problem.operator, problem.feasible, cfg.gamma, cfg.alpha, cfg.theta
    x_prev = x
    k = 0
    while True:
        a, t = alpha(k), theta(k)
        y = x + t * (x - x_prev)
        x_prev, x = x, (1.0 - a) * y + a * K.project(y, y - g * A(y))
        k += 1
        yield k, x, None, y


_ITERATIONS = {
    Algorithm.PROPOSED: _proposed,
    Algorithm.GRADPROJ: _gradproj,
    Algorithm.EXTRAGRAD: _extragrad,
    Algorithm.RELAXED1: _relaxed1,
    Algorithm.RELAXED2: _relaxed2,
    Algorithm.INERTIAL_RELAXED: _inertial_relaxed,
}


def _drive(problem, cfg: SolverConfig, start, algorithm: Algorithm) -> IterationTrace:
    if cfg.algorithm is not algorithm:
        cfg = cfg.with_(algorithm=algorithm)
    start = as_vector(problem.starts[0] if start is None else start, problem.n, name="start")
    trace = IterationTrace(algorithm.value, start)
    opt, feas, done = check_termination(problem, start, cfg.tol)
    trace.start_opt, trace.start_feas = opt, feas
    if done:
        trace.finish(Status.SOLVED, "start point satisfies the tolerance")
        return trace

    it = _ITERATIONS[algorithm](problem, cfg, start.copy())
    prev = start
    t0 = time.perf_counter()
    with np.errstate(all="ignore"):
        for _ in range(cfg.max_iter):
            try:
                k, x, z, y = next(it)
            except QviError as exc:
                trace.finish(Status.DIVERGED, f"iteration {trace.iters + 1}: {exc}")
                break
            xn = float(np.linalg.norm(x))
            if not math.isfinite(xn) or xn > DIVERGENCE_NORM:
                trace.finish(Status.DIVERGED, f"iteration {k}: |x| = {xn:.3g}")
                break
            opt, feas, done = check_termination(problem, x, cfg.tol)
            d = x - prev
            trace.records.append(
                IterationRecord(k, x, z, y, math.sqrt(float(d @ d)), opt, feas,
                                time.perf_counter() - t0)
            )
            prev = x
            if done:
                trace.finish(Status.SOLVED)
                break
        else:
            trace.finish(Status.MAX_ITER)
    trace.elapsed = time.perf_counter() - t0
    return trace


def solve_proposed(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.PROPOSED)


def solve_gradient_projection(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.GRADPROJ)


def solve_extragradient(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.EXTRAGRAD)


def solve_relaxed1(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.RELAXED1)


def solve_relaxed2(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.RELAXED2)


def solve_inertial_relaxed(problem, config: SolverConfig, start=None) -> IterationTrace:
    return _drive(problem, config, start, Algorithm.INERTIAL_RELAXED)


def solve(problem, config: SolverConfig, start=None) -> IterationTrace:
    """Run ``config.algorithm`` on `problem` from `start` (default: first start point)."""
    return _drive(problem, config, start, config.algorithm)
