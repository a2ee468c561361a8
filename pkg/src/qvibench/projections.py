"""Exact metric projections and moving-set feasible maps.

Every set family here has a closed-form projection except
:class:`Intersection`, which runs Dykstra's alternating projections over its
members.  A feasible map sends a point ``x`` to a closed convex set ``K(x)``;
the only non-constant map supported is a translate ``K(x) = Cx + d + base``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DimensionError,
    ParameterError,
    QviError,
    _frozen,
    as_matrix,
    as_vector,
    spectral_norm,
)

__all__ = [
    "ConvexSet",
    "Box",
    "Ball",
    "Halfspace",
    "Intersection",
    "DykstraError",
    "UnboundedSetError",
    "ConstantMap",
    "MovingSet",
    "project",
    "project_feasible_map",
    "lambda_certificate",
]

# Slack on the stored translation certificate.
LAMBDA_SLACK = 1e-9


class DykstraError(QviError):
    """Dykstra's iteration did not settle within its iteration budget."""

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class UnboundedSetError(QviError, ValueError):
    pass


class ConvexSet:
    """Interface shared by the set families.

    Subclasses implement ``project``, ``violation`` (how far a point is from
    satisfying the set's constraints, zero inside), ``linear_min`` (the
    minimum of ``F·u`` over the set) and ``bounding_box``.
    """

    n: int

    def project(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def violation(self, u: np.ndarray) -> float:
        raise NotImplementedError

    def linear_min(self, F: np.ndarray) -> float:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def is_bounded(self) -> bool:
        lo, hi = self.bounding_box()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def to_dict(self) -> dict:
        raise NotImplementedError


def _bounds(v, n: int | None, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or (n is not None and a.shape[0] != n):
        raise DimensionError(f"{name}: expected a vector of length {n}, got shape {a.shape}")
    if np.any(np.isnan(a)):
        raise ParameterError(f"{name}: contains NaN")
    return a


def _float_list(a: np.ndarray) -> list:
    return [float(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf") for v in a]


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _bounds(self.lo, None, "Box.lo")
        hi = _bounds(self.hi, lo.shape[0], "Box.hi")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise ParameterError(f"Box invariant violated: lo[{i}]={lo[i]} > hi[{i}]={hi[i]}")
        object.__setattr__(self, "lo", _frozen(lo.copy()))
        object.__setattr__(self, "hi", _frozen(hi.copy()))

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    def project(self, z):
        return np.minimum(np.maximum(z, self.lo), self.hi)

    def violation(self, u):
        return float(np.max(np.maximum(np.maximum(self.lo - u, u - self.hi), 0.0)))

    def linear_min(self, F):
        if not self.is_bounded:
            # Finite only if F vanishes along every unbounded direction.
            lo_ok = (F <= 0) | np.isfinite(self.lo)
            hi_ok = (F >= 0) | np.isfinite(self.hi)
            if not (np.all(lo_ok) and np.all(hi_ok)):
                raise UnboundedSetError("linear minimisation over an unbounded box is -inf")
        nz = F != 0
        pick = np.where(F[nz] > 0, self.lo[nz], self.hi[nz])
        return float(F[nz] @ pick)

    def bounding_box(self):
        return self.lo, self.hi

    def to_dict(self):
        return {"kind": "box", "lo": _float_list(self.lo), "hi": _float_list(self.hi)}


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = as_vector(self.center, name="Ball.center")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ParameterError(f"Ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", _frozen(c.copy()))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def project(self, z):
        d = z - self.center
        dist = math.sqrt(float(d @ d))
        if dist <= self.radius:
            return np.array(z, dtype=np.float64)
        return self.center + (self.radius / dist) * d

    def violation(self, u):
        d = u - self.center
        return max(0.0, math.sqrt(float(d @ d)) - self.radius)

    def linear_min(self, F):
        return float(F @ self.center) - self.radius * math.sqrt(float(F @ F))

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def to_dict(self):
        return {"kind": "ball", "center": _float_list(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """Points ``u`` with ``normal · u <= offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = as_vector(self.normal, name="Halfspace.normal")
        nn = float(a @ a)
        if nn == 0.0:
            raise ParameterError("Halfspace normal must be non-zero")
        if not math.isfinite(self.offset):
            raise ParameterError("Halfspace offset must be finite")
        object.__setattr__(self, "normal", _frozen(a.copy()))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "_nn", nn)

    @property
    def n(self) -> int:
        return self.normal.shape[0]

    def project(self, z):
        excess = float(self.normal @ z) - self.offset
        if excess <= 0.0:
            return np.array(z, dtype=np.float64)
        return z - (excess / self._nn) * self.normal

    def violation(self, u):
        return max(0.0, float(self.normal @ u) - self.offset)

    def linear_min(self, F):
        # Bounded below only when F = -t * normal with t >= 0.
        t = -float(F @ self.normal) / self._nn
        if t >= 0 and np.allclose(F, -t * self.normal, rtol=1e-12, atol=1e-300):
            return -t * self.offset
        raise UnboundedSetError("linear minimisation over a halfspace is -inf")

    def bounding_box(self):
        inf = np.full(self.n, np.inf)
        return -inf, inf

    def to_dict(self):
        return {"kind": "halfspace", "normal": _float_list(self.normal), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    """Intersection of member sets, projected with Dykstra's algorithm.

    The intersection is assumed non-empty; callers certify this with a
    witness point.
    """

    members: tuple
    dykstra_tol: float = 1e-12
    dykstra_max_iter: int = 10_000
    _box: Box | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ParameterError("Intersection needs at least one member")
        n = members[0].n
        for i, m in enumerate(members):
            if not isinstance(m, ConvexSet):
                raise ParameterError(f"Intersection member {i} is not a ConvexSet")
            if m.n != n:
                raise DimensionError(f"Intersection member {i} has dimension {m.n}, expected {n}")
        if self.dykstra_tol <= 0 or self.dykstra_max_iter < 1:
            raise ParameterError("dykstra_tol must be positive and dykstra_max_iter >= 1")
        object.__setattr__(self, "members", members)
        if all(isinstance(m, Box) for m in members):
            lo = np.max([m.lo for m in members], axis=0)
            hi = np.min([m.hi for m in members], axis=0)
            if np.all(lo <= hi):
                object.__setattr__(self, "_box", Box(lo, hi))

    @property
    def n(self) -> int:
        return self.members[0].n

    def project(self, z):
        x = np.array(z, dtype=np.float64)
        incr = [np.zeros_like(x) for _ in self.members]
        change = math.inf
        for _ in range(self.dykstra_max_iter):
            x_prev = x
            for i, m in enumerate(self.members):
                y = m.project(x + incr[i])
                incr[i] = x + incr[i] - y
                x = y
            d = x - x_prev
            change = math.sqrt(float(d @ d))
            if change < self.dykstra_tol:
                return x
        raise DykstraError(
            f"Dykstra did not converge in {self.dykstra_max_iter} sweeps (last change {change:.3g})",
            x,
            change,
        )

    def violation(self, u):
        return max(m.violation(u) for m in self.members)

    def bounding_box(self):
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for m in self.members:
            mlo, mhi = m.bounding_box()
            lo = np.maximum(lo, mlo)
            hi = np.minimum(hi, mhi)
        return lo, hi

    def linear_min(self, F, tol: float = 1e-8):
        """Minimum of ``F·u`` over the intersection.

        Boxes-only intersections are exact.  Otherwise the value is refined by
        projected steps ``u <- P(u - t F)`` with doubling ``t``; the objective
        gap after a step is at most ``diam² / (2t)``, and iteration stops once
        that bound drops below ``tol``.  The result never undercuts the
        bounding-box lower bound.
        """
        if self._box is not None:
            return self._box.linear_min(F)
        lo, hi = self.bounding_box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise UnboundedSetError("linear minimisation needs a bounded intersection")
        fnorm = math.sqrt(float(F @ F))
        if fnorm == 0.0:
            return 0.0
        lower = float(np.sum(np.where(F > 0, F * lo, F * hi)))
        diam = max(float(np.linalg.norm(hi - lo)), 1e-300)
        u = self.project(0.5 * (lo + hi))
        t = diam / fnorm
        for _ in range(80):
            u = self.project(u - t * F)
            if diam * diam / (2.0 * t) <= tol:
                break
            t *= 2.0
        return max(float(F @ u), lower)

    def to_dict(self):
        return {
            "kind": "intersection",
            "members": [m.to_dict() for m in self.members],
            "dykstra_tol": self.dykstra_tol,
            "dykstra_max_iter": self.dykstra_max_iter,
        }


def project(s: ConvexSet, z) -> np.ndarray:
    return s.project(as_vector(z, s.n, name="z"))


# -- feasible maps ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantMap:
    """``K(x) = set`` for every ``x``."""

    set: ConvexSet

    @property
    def n(self) -> int:
        return self.set.n

    @property
    def base(self) -> ConvexSet:
        return self.set

    lam = 0.0

    def shift(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(self.n)

    def project(self, x, z):
        return self.set.project(z)

    def to_dict(self):
        return {"kind": "constant", "set": self.set.to_dict()}


@dataclass(frozen=True, eq=False)
class MovingSet:
    """``K(x) = C x + d + base``.

    `lam` is a Lipschitz certificate for ``x -> Cx + d``; when omitted it is
    computed as the spectral norm of `C`.  Translating by a ``lam``-Lipschitz
    map keeps ``‖P_K(x)(z) - P_K(y)(z)‖ <= lam ‖x - y‖``.
    """

    base: ConvexSet
    C: np.ndarray
    d: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        n = self.base.n
        C = as_matrix(self.C, "C", square=True)
        if C.shape[0] != n:
            raise DimensionError(f"C is {C.shape}, base set has dimension {n}")
        d = as_vector(self.d, n, name="d")
        sigma = spectral_norm(C)
        lam = sigma if self.lam is None else float(self.lam)
        if not lam >= 0:
            raise ParameterError(f"lambda must be non-negative, got {lam}")
        if lam < sigma - LAMBDA_SLACK:
            raise ParameterError(f"lambda={lam} is below the spectral norm of C ({sigma:.12g})")
        object.__setattr__(self, "C", _frozen(C.copy()))
        object.__setattr__(self, "d", _frozen(d.copy()))
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.base.n

    def shift(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x + self.d

    def project(self, x, z):
        c = self.C @ x + self.d
        return c + self.base.project(z - c)

    def to_dict(self):
        return {
            "kind": "moving",
            "base": self.base.to_dict(),
            "C": [list(map(float, row)) for row in self.C],
            "d": list(map(float, self.d)),
            "lambda": self.lam,
        }


def project_feasible_map(K, x, z) -> np.ndarray:
    """``P_{K(x)}(z)``; for a moving set this is ``c(x) + P_base(z - c(x))``."""
    x = as_vector(x, K.n, name="x")
    z = as_vector(z, K.n, name="z")
    return K.project(x, z)


def lambda_certificate(K) -> float:
    return float(K.lam)
