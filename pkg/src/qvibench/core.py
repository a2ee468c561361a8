"""Vector arithmetic, affine operators and the step-size / contraction theory.

Everything here is a pure function over immutable inputs.  Vectors are plain
1-D ``float64`` numpy arrays; :func:`as_vector` is the single entry point that
enforces shape and finiteness at API boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "QviError",
    "DimensionError",
    "NonFiniteError",
    "NotStronglyMonotoneError",
    "ParameterError",
    "as_vector",
    "as_matrix",
    "inner_product",
    "norm",
    "AffineOperator",
    "apply_operator",
    "certify_mu_lip",
    "spectral_norm",
    "check_lambda_condition",
    "gamma_interval",
    "contraction_beta",
    "contraction_rho",
    "contraction_rho_valid",
    "ContractionParams",
]


class QviError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(QviError, ValueError):
    pass


class NonFiniteError(QviError, ValueError):
    pass


class NotStronglyMonotoneError(QviError, ValueError):
    pass


class ParameterError(QviError, ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_vector(x, n: int | None = None, name: str = "x") -> np.ndarray:
    """Return `x` as a finite 1-D float64 array, optionally of length `n`."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name}: expected a 1-D vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionError(f"{name}: expected dimension {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return v


def as_matrix(m, name: str = "M", square: bool = False) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise DimensionError(f"{name}: expected a non-empty 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return a


def inner_product(x, y) -> float:
    x = as_vector(x, name="x")
    y = as_vector(y, x.shape[0], name="y")
    return float(x @ y)


def norm(x) -> float:
    x = as_vector(x)
    return math.sqrt(float(x @ x))


# -- extremal eigenvalues -----------------------------------------------------


def _lanczos_extreme(matvec, n: int, *, largest: bool, rtol: float = 1e-10, seed: int = 0):
    """Extreme eigenvalue of a symmetric operator by Lanczos with full reorthogonalisation.

    Returns ``(ritz_value, residual_bound)``; some eigenvalue lies within
    ``residual_bound`` of ``ritz_value``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    basis = np.zeros((n, n))
    basis[:, 0] = v
    alphas: list[float] = []
    betas: list[float] = []
    scale = 0.0
    for j in range(n):
        w = matvec(basis[:, j])
        a = float(basis[:, j] @ w)
        alphas.append(a)
        w = w - a * basis[:, j]
        if j > 0:
            w -= betas[-1] * basis[:, j - 1]
        for _ in range(2):
            w -= basis[:, : j + 1] @ (basis[:, : j + 1].T @ w)
        b = float(np.linalg.norm(w))
        scale = max(scale, abs(a), b)

        if j == 0:
            ritz, last = np.array([a]), np.array([[1.0]])
        else:
            ritz, last = eigh_tridiagonal(np.array(alphas), np.array(betas))
        idx = -1 if largest else 0
        theta = float(ritz[idx])
        resid = b * abs(float(last[-1, idx]))
        if (
            j == n - 1
            or b <= 1e-14 * max(scale, 1e-300)
            or resid <= rtol * max(abs(theta), 1e-300)
        ):
            return theta, resid
        betas.append(b)
        basis[:, j + 1] = w / b
    raise AssertionError("unreachable")


def spectral_norm(C) -> float:
    """Largest singular value of `C`, via Lanczos on ``CᵀC``."""
    C = as_matrix(C, "C")
    if not np.any(C):
        return 0.0
    top, resid = _lanczos_extreme(lambda v: C.T @ (C @ v), C.shape[1], largest=True)
    return math.sqrt(max(top + resid, 0.0))


def certify_mu_lip(M) -> tuple[float, float]:
    """Strong-monotonicity and Lipschitz constants of ``x -> Mx + q``.

    ``mu`` is the smallest eigenvalue of the symmetric part of `M` and ``lip``
    the largest singular value of `M`, both from a Lanczos iteration converged
    to relative accuracy 1e-10.  The Lanczos residual bound is subtracted from
    ``mu`` and added to ``lip`` so the pair is a safe certificate.

    Raises
    ------
    NotStronglyMonotoneError
        If the certified ``mu`` is not positive.
    """
    M = as_matrix(M, square=True)
    n = M.shape[0]
    sym = 0.5 * (M + M.T)
    low, low_res = _lanczos_extreme(lambda v: sym @ v, n, largest=False)
    top, top_res = _lanczos_extreme(lambda v: M.T @ (M @ v), n, largest=True)
    mu = low - low_res
    lip = math.sqrt(max(top + top_res, 0.0))
    if not mu > 0.0:
        raise NotStronglyMonotoneError(f"not strongly monotone: mu = {mu:.6g} <= 0")
    return mu, max(lip, mu)


# -- operators ----------------------------------------------------------------


CERT_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class AffineOperator:
    """``A(x) = M x + q`` together with certified constants ``mu <= lip``."""

    M: np.ndarray
    q: np.ndarray
    mu: float
    lip: float

    def __post_init__(self):
        M = as_matrix(self.M, square=True)
        q = as_vector(self.q, M.shape[0], name="q")
        object.__setattr__(self, "M", _frozen(M.copy()))
        object.__setattr__(self, "q", _frozen(q.copy()))
        if not (self.mu > 0 and self.lip > 0):
            raise ParameterError(f"mu and lip must be positive (mu={self.mu}, lip={self.lip})")
        if self.mu > self.lip:
            raise ParameterError(f"mu={self.mu} exceeds lip={self.lip}")
        # The stored constants must certify M (within CERT_SLACK).
        low = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        top = float(np.linalg.norm(M, 2))
        if self.mu > low + CERT_SLACK:
            raise ParameterError(f"mu={self.mu} exceeds the smallest eigenvalue {low:.12g} of (M+M^T)/2")
        if self.lip < top - CERT_SLACK:
            raise ParameterError(f"lip={self.lip} is below the spectral norm {top:.12g} of M")

    @classmethod
    def from_matrix(cls, M, q) -> AffineOperator:
        mu, lip = certify_mu_lip(M)
        return cls(M, q, mu, lip)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.M @ x + self.q


def apply_operator(A: AffineOperator, x) -> np.ndarray:
    return A(as_vector(x, A.n))


# -- parameter theory ---------------------------------------------------------


def _check_mu_lip(mu: float, lip: float) -> None:
    if not (mu > 0 and lip > 0):
        raise ParameterError(f"mu and L must be positive (mu={mu}, L={lip})")
    if mu > lip:
        raise ParameterError(f"mu={mu} exceeds L={lip}")


def check_lambda_condition(mu: float, lip: float, lam: float) -> bool:
    """True iff ``lam + sqrt(1 - mu²/L²) < 1`` (strict)."""
    _check_mu_lip(mu, lip)
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    return lam + math.sqrt(max(1.0 - (mu / lip) ** 2, 0.0)) < 1.0


def gamma_interval(mu: float, lip: float, lam: float) -> tuple[float, float]:
    """Open interval of admissible step sizes, centred at ``mu / L²``."""
    if not check_lambda_condition(mu, lip, lam):
        raise ParameterError(
            f"lambda condition violated: {lam} + sqrt(1 - mu²/L²) >= 1 (mu={mu}, L={lip})"
        )
    radius = math.sqrt(mu * mu - lip * lip * lam * (2.0 - lam)) / (lip * lip)
    center = mu / (lip * lip)
    return center - radius, center + radius


def contraction_beta(mu: float, lip: float, lam: float, gamma: float) -> float:
    """``sqrt(1 - 2 mu gamma + gamma² L²) + lam``.

    The radicand is ``(1 - gamma L)² + 2 gamma (L - mu) >= 0`` in exact
    arithmetic; rounding below zero is clamped, anything worse raises.
    """
    _check_mu_lip(mu, lip)
    rad = 1.0 - 2.0 * mu * gamma + gamma * gamma * lip * lip
    if rad < -1e-12:
        raise ParameterError(f"negative radicand {rad} in contraction factor")
    return math.sqrt(max(rad, 0.0)) + lam


def _check_rho_domain(beta: float, a: float, b: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ParameterError(f"beta must lie in [0, 1), got {beta}")
    if not 0.0 < a <= b < 1.0:
        raise ParameterError(f"need 0 < a <= b < 1, got a={a}, b={b}")


def contraction_rho(beta: float, a: float, b: float) -> float:
    """``max{beta², b(1 - beta²), (1 - beta²)(1 - a)}``."""
    _check_rho_domain(beta, a, b)
    s = 1.0 - beta * beta
    return max(beta * beta, b * s, s * (1.0 - a))


def contraction_rho_valid(beta: float, a: float, b: float) -> float:
    """``beta² + (1 - beta²) max{b, 1 - a}``.

    Per-step bound on ``‖x_k - x*‖² + ‖z_k - x*‖²`` that follows from the
    one-step estimate ``‖x_{k+1} - x*‖ <= beta ‖y_k - x*‖`` when the two
    weighted terms are bounded separately and then added.  It always
    dominates :func:`contraction_rho`.
    """
    _check_rho_domain(beta, a, b)
    s = 1.0 - beta * beta
    return beta * beta + s * max(b, 1.0 - a)


@dataclass(frozen=True)
class ContractionParams:
    """A certified parameter set for the inertial method.

    Construction fails unless the lambda condition holds, ``gamma`` lies in
    the open admissible interval (and is positive) and ``0 < a <= b < 1``.
    """

    mu: float
    lip: float
    lam: float
    gamma: float
    a: float
    b: float

    def __post_init__(self):
        lo, hi = gamma_interval(self.mu, self.lip, self.lam)
        if not (max(lo, 0.0) < self.gamma < hi):
            raise ParameterError(
                f"gamma={self.gamma} outside the admissible interval ({lo:.12g}, {hi:.12g})"
            )
        if not 0.0 < self.a <= self.b < 1.0:
            raise ParameterError(f"need 0 < a <= b < 1, got a={self.a}, b={self.b}")

    @property
    def interval(self) -> tuple[float, float]:
        return gamma_interval(self.mu, self.lip, self.lam)

    @property
    def beta(self) -> float:
        return contraction_beta(self.mu, self.lip, self.lam, self.gamma)

    @property
    def rho(self) -> float:
        return contraction_rho(self.beta, self.a, self.b)

    @property
    def rho_valid(self) -> float:
        return contraction_rho_valid(self.beta, self.a, self.b)
