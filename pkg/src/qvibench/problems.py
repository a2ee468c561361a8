"""QVI problem instances: file format, builtin suite and reference oracle.

A problem file is UTF-8 JSON with top-level fields ``name, n, M, q,
feasible, starts`` and the optional ``gamma, theta_bounds, reference, seed,
description``.  See ``docs/problem-format.md`` for the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import (
    AffineOperator,
    ContractionParams,
    ParameterError,
    QviError,
    _frozen,
    as_vector,
    certify_mu_lip,
    check_lambda_condition,
)
from .metrics import feas_measure, optimality
from .projections import (
    Ball,
    Box,
    ConstantMap,
    Halfspace,
    Intersection,
    MovingSet,
)

__all__ = [
    "QviProblem",
    "ProblemFormatError",
    "OracleError",
    "certify",
    "builtin_suite",
    "builtin_problem",
    "load_problem",
    "dump_problem",
    "problem_from_dict",
    "problem_to_dict",
    "reference_solution",
]

# Default inertial-parameter bounds for certification (theta_k = 1/3).
DEFAULT_THETA_BOUNDS = (1.0 / 3.0, 1.0 / 3.0)
REFERENCE_CHECK_TOL = 1e-8


class ProblemFormatError(QviError, ValueError):
    """A problem file failed to parse or validate.

    ``where`` is ``"line L, column C"`` for syntax errors or the dotted field
    path (``feasible.base.lo``) for structural ones.
    """

    def __init__(self, message: str, where: str | None = None, path: str | None = None):
        self.where = where
        self.path = path
        prefix = f"{path}: " if path else ""
        loc = f" [{where}]" if where else ""
        super().__init__(f"{prefix}{message}{loc}")


class OracleError(QviError):
    pass


@dataclass(frozen=True, eq=False)
class QviProblem:
    name: str
    operator: AffineOperator
    feasible: ConstantMap | MovingSet
    starts: tuple
    reference: np.ndarray | None = None
    certified: ContractionParams | None = None
    seed: int | None = None
    description: str = ""

    def __post_init__(self):
        n = self.operator.n
        if self.feasible.n != n:
            raise ParameterError(
                f"{self.name}: feasible map has dimension {self.feasible.n}, operator {n}"
            )
        starts = tuple(
            _frozen(as_vector(s, n, name=f"starts[{i}]").copy()) for i, s in enumerate(self.starts)
        )
        if not starts:
            raise ParameterError(f"{self.name}: at least one starting point is required")
        object.__setattr__(self, "starts", starts)
        if self.reference is not None:
            ref = _frozen(as_vector(self.reference, n, name="reference").copy())
            object.__setattr__(self, "reference", ref)
            opt, feas = optimality(self, ref), feas_measure(self, ref)
            if not (opt <= REFERENCE_CHECK_TOL and feas <= REFERENCE_CHECK_TOL):
                raise ParameterError(
                    f"{self.name}: reference is not a solution (opt={opt:.3g}, feas={feas:.3g})"
                )

    @property
    def n(self) -> int:
        return self.operator.n

    @property
    def lam(self) -> float:
        return float(self.feasible.lam)


def certify(operator: AffineOperator, feasible, gamma: float | None = None,
            theta_bounds=DEFAULT_THETA_BOUNDS) -> ContractionParams | None:
    """Contraction parameters for a problem, or ``None`` if the lambda condition fails.

    Without an explicit `gamma` the beta-minimising step ``mu / L²`` is used.
    An explicit `gamma` outside the admissible interval raises.
    """
    mu, lip, lam = operator.mu, operator.lip, float(feasible.lam)
    if not check_lambda_condition(mu, lip, lam):
        if gamma is not None:
            raise ParameterError(
                f"gamma given but the lambda condition fails: {lam} + sqrt(1 - mu²/L²) >= 1"
            )
        return None
    if gamma is None:
        gamma = mu / (lip * lip)
    a, b = theta_bounds
    return ContractionParams(mu, lip, lam, float(gamma), float(a), float(b))


# -- serialisation ------------------------------------------------------------


def _num(v, where: str) -> float:
    if isinstance(v, bool):
        raise ProblemFormatError("expected a number", where)
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", "-inf", "-infinity"):
        return float(v.strip().lower().replace("infinity", "inf"))
    raise ProblemFormatError(f"expected a number, got {type(v).__name__}", where)


def _vec(v, where: str, n: int | None = None) -> np.ndarray:
    if not isinstance(v, list):
        raise ProblemFormatError("expected an array of numbers", where)
    a = np.array([_num(e, f"{where}[{i}]") for i, e in enumerate(v)], dtype=np.float64)
    if n is not None and a.shape[0] != n:
        raise ProblemFormatError(f"expected {n} entries, got {a.shape[0]}", where)
    return a


def _mat(v, where: str, n: int) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n:
        raise ProblemFormatError(f"expected {n} rows", where)
    return np.array([_vec(row, f"{where}[{i}]", n) for i, row in enumerate(v)])


def _field(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise ProblemFormatError("expected an object", where or "<root>")
    if key not in d:
        raise ProblemFormatError(f"missing required field {key!r}", where or "<root>")
    return d[key]


def _set_from_dict(d, where: str, n: int):
    kind = _field(d, "kind", where)
    try:
        if kind == "box":
            return Box(_vec(_field(d, "lo", where), f"{where}.lo", n),
                       _vec(_field(d, "hi", where), f"{where}.hi", n))
        if kind == "ball":
            return Ball(_vec(_field(d, "center", where), f"{where}.center", n),
                        _num(_field(d, "radius", where), f"{where}.radius"))
        if kind == "halfspace":
            return Halfspace(_vec(_field(d, "normal", where), f"{where}.normal", n),
                             _num(_field(d, "offset", where), f"{where}.offset"))
        if kind == "intersection":
            members = _field(d, "members", where)
            if not isinstance(members, list):
                raise ProblemFormatError("expected an array of sets", f"{where}.members")
            sets = [_set_from_dict(m, f"{where}.members[{i}]", n) for i, m in enumerate(members)]
            kw = {}
            if "dykstra_tol" in d:
                kw["dykstra_tol"] = _num(d["dykstra_tol"], f"{where}.dykstra_tol")
            if "dykstra_max_iter" in d:
                kw["dykstra_max_iter"] = int(d["dykstra_max_iter"])
            return Intersection(tuple(sets), **kw)
    except ProblemFormatError:
        raise
    except QviError as exc:
        raise ProblemFormatError(str(exc), where) from exc
    raise ProblemFormatError(f"unknown set kind {kind!r}", f"{where}.kind")


def _map_from_dict(d, n: int):
    where = "feasible"
    kind = _field(d, "kind", where)
    if kind == "constant":
        return ConstantMap(_set_from_dict(_field(d, "set", where), "feasible.set", n))
    if kind == "moving":
        base = _set_from_dict(_field(d, "base", where), "feasible.base", n)
        C = _mat(_field(d, "C", where), "feasible.C", n)
        dvec = _vec(d.get("d", [0.0] * n), "feasible.d", n)
        lam = _num(d["lambda"], "feasible.lambda") if d.get("lambda") is not None else None
        try:
            return MovingSet(base, C, dvec, lam)
        except QviError as exc:
            raise ProblemFormatError(str(exc), where) from exc
    raise ProblemFormatError(f"unknown feasible-map kind {kind!r}", "feasible.kind")


def problem_from_dict(d: dict) -> QviProblem:
    """Build and validate a problem from its JSON-compatible form."""
    name = _field(d, "name", "")
    if not isinstance(name, str) or not name:
        raise ProblemFormatError("expected a non-empty string", "name")
    n = _field(d, "n", "")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ProblemFormatError("expected a positive integer", "n")
    M = _mat(_field(d, "M", ""), "M", n)
    q = _vec(_field(d, "q", ""), "q", n)
    feasible = _map_from_dict(_field(d, "feasible", ""), n)
    raw_starts = _field(d, "starts", "")
    if not isinstance(raw_starts, list) or not raw_starts:
        raise ProblemFormatError("expected a non-empty array of points", "starts")
    starts = [_vec(s, f"starts[{i}]", n) for i, s in enumerate(raw_starts)]

    try:
        operator = AffineOperator.from_matrix(M, q)
    except QviError as exc:
        raise ProblemFormatError(str(exc), "M") from exc

    gamma = _num(d["gamma"], "gamma") if d.get("gamma") is not None else None
    theta = DEFAULT_THETA_BOUNDS
    if d.get("theta_bounds") is not None:
        theta = tuple(_vec(d["theta_bounds"], "theta_bounds", 2))
    try:
        certified = certify(operator, feasible, gamma, theta)
    except QviError as exc:
        raise ProblemFormatError(str(exc), "gamma") from exc

    reference = _vec(d["reference"], "reference", n) if d.get("reference") is not None else None
    seed = d.get("seed")
    try:
        return QviProblem(
            name=name,
            operator=operator,
            feasible=feasible,
            starts=tuple(starts),
            reference=reference,
            certified=certified,
            seed=seed,
            description=str(d.get("description", "")),
        )
    except QviError as exc:
        raise ProblemFormatError(str(exc), "reference" if "reference" in str(exc) else None) from exc


def problem_to_dict(p: QviProblem) -> dict:
    d = {
        "name": p.name,
        "n": p.n,
        "M": [list(map(float, row)) for row in p.operator.M],
        "q": list(map(float, p.operator.q)),
        "feasible": p.feasible.to_dict(),
        "starts": [list(map(float, s)) for s in p.starts],
    }
    if p.certified is not None:
        d["gamma"] = p.certified.gamma
        d["theta_bounds"] = [p.certified.a, p.certified.b]
    if p.reference is not None:
        d["reference"] = list(map(float, p.reference))
    if p.seed is not None:
        d["seed"] = p.seed
    if p.description:
        d["description"] = p.description
    return d


def load_problem(path) -> QviProblem:
    """Parse, validate and certify a problem file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(exc.msg, f"line {exc.lineno}, column {exc.colno}", str(path)) from exc
    try:
        return problem_from_dict(data)
    except ProblemFormatError as exc:
        raise ProblemFormatError(str(exc).split(" [")[0], exc.where, str(path)) from exc


def dump_problem(p: QviProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p), indent=1) + "\n", encoding="utf-8")


# -- builtin suite ------------------------------------------------------------

SUITE_ORDER = (
    "analytic-1d",
    "box-1d",
    "movball-2",
    "movball-5",
    "movball-20",
    "movbox-2",
    "movbox-5",
    "movbox-50",
    "vi-box-5",
    "vi-ball-3",
    "vi-inter-4",
)


def builtin_suite() -> list[QviProblem]:
    """The packaged benchmark problems, in catalogue order."""
    return [builtin_problem(name) for name in SUITE_ORDER]


_CACHE: dict[str, QviProblem] = {}


def builtin_problem(name: str) -> QviProblem:
    if name not in SUITE_ORDER:
        raise KeyError(f"no builtin problem named {name!r}")
    if name not in _CACHE:
        ref = resources.files("qvibench") / "data" / f"{name}.json"
        _CACHE[name] = problem_from_dict(json.loads(ref.read_text(encoding="utf-8")))
    return _CACHE[name]


# -- reference oracle ---------------------------------------------------------


def reference_solution(problem: QviProblem, tol: float = 1e-13, max_iter: int = 1_000_000,
                       start=None) -> np.ndarray:
    """Unique solution by Banach-Picard iteration of the natural map.

    Iterates ``x <- P_{K(x)}(x - g A(x))`` with ``g = mu / L²``, which is a
    contraction with factor ``sqrt(1 - mu²/L²) + lambda < 1`` whenever the
    lambda condition holds, until ``‖x_{k+1} - x_k‖ <= tol max(1, ‖x_k‖)``.
    """
    A, K = problem.operator, problem.feasible
    if not check_lambda_condition(A.mu, A.lip, float(K.lam)):
        raise OracleError(f"{problem.name}: lambda condition fails, the natural map is not certified")
    g = A.mu / (A.lip * A.lip)
    x = np.array(problem.starts[0] if start is None else as_vector(start, problem.n), dtype=np.float64)
    for _ in range(max_iter):
        x_new = K.project(x, x - g * A(x))
        step = math.sqrt(float((x_new - x) @ (x_new - x)))
        if not math.isfinite(step):
            raise OracleError(f"{problem.name}: oracle iterate became non-finite")
        scale = max(1.0, math.sqrt(float(x @ x)))
        x = x_new
        if step <= tol * scale:
            return x
    raise OracleError(f"{problem.name}: no convergence in {max_iter} oracle iterations")
