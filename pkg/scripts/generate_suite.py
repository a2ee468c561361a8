"""Regenerate the packaged benchmark problems in src/qvibench/data/.

Each problem is drawn from ``numpy.random.default_rng(seed)`` with the seed
written into its file, then stored with explicit matrices so loading never
depends on the generator.  Run from the repository root::

    python scripts/generate_suite.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from qvibench.core import AffineOperator
from qvibench.problems import QviProblem, certify, problem_to_dict, reference_solution
from qvibench.projections import Ball, Box, ConstantMap, Intersection, MovingSet

OUT = Path(__file__).resolve().parents[1] / "src" / "qvibench" / "data"
BASE_SEED = 20240517


def random_operator_matrix(rng, n, spread=0.3, skew=0.2):
    """Symmetric part with spectrum in [1, 1 + spread] plus a skew part, scaled to unit L."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    S = Q @ np.diag(rng.uniform(1.0, 1.0 + spread, n)) @ Q.T
    if n > 1:
        G = rng.standard_normal((n, n))
        W = G - G.T
        S = S + skew * W / np.linalg.norm(W, 2)
    return S / np.linalg.norm(S, 2)


def translation(rng, n, lam):
    G = rng.standard_normal((n, n))
    return lam * G / np.linalg.norm(G, 2)


def starts(rng, n, count, scale=2.0):
    return [scale * rng.standard_normal(n) for _ in range(count)]


def build(name, seed, M, q, feasible, start_points, description):
    op = AffineOperator.from_matrix(M, q)
    p = QviProblem(name, op, feasible, tuple(start_points), None, certify(op, feasible), seed,
                   description)
    ref = reference_solution(p)
    return QviProblem(name, op, feasible, p.starts, ref, p.certified, seed, description)


def suite():
    out = []
    seeds = iter(range(BASE_SEED, BASE_SEED + 100))

    out.append(build(
        "analytic-1d", None, [[1.0]], [0.0],
        MovingSet(Box([0.1], [10.0]), [[0.2]], [0.0], 0.2),
        [[0.7], [-1.0], [4.0]],
        "A(x) = x, K(x) = [0.2x + 0.1, 0.2x + 10]; solution 0.125 on the lower bound",
    ))
    out.append(build(
        "box-1d", None, [[1.0]], [0.0],
        ConstantMap(Box([-1.0], [1.0])),
        [[0.7], [-0.9]],
        "A(x) = x on the constant box [-1, 1]; solution 0",
    ))

    for n, lam in ((2, 0.2), (5, 0.1), (20, 0.2)):
        seed = next(seeds)
        rng = np.random.default_rng(seed)
        M = random_operator_matrix(rng, n)
        q = 2.0 * rng.standard_normal(n)
        base = Ball(0.5 * rng.standard_normal(n), 1.0)
        fm = MovingSet(base, translation(rng, n, lam), 0.2 * rng.standard_normal(n))
        out.append(build(f"movball-{n}", seed, M, q, fm, starts(rng, n, 3 if n < 20 else 2),
                         f"moving unit ball, lambda = {lam}"))

    for n, lam in ((2, 0.1), (5, 0.2), (50, 0.1)):
        seed = next(seeds)
        rng = np.random.default_rng(seed)
        M = random_operator_matrix(rng, n)
        q = 1.5 * rng.standard_normal(n)
        half = rng.uniform(0.5, 1.5, n)
        fm = MovingSet(Box(-half, half), translation(rng, n, lam), 0.2 * rng.standard_normal(n))
        out.append(build(f"movbox-{n}", seed, M, q, fm, starts(rng, n, 3 if n < 50 else 2),
                         f"moving box, lambda = {lam}"))

    seed = next(seeds)
    rng = np.random.default_rng(seed)
    M = random_operator_matrix(rng, 5)
    q = 1.5 * rng.standard_normal(5)
    out.append(build("vi-box-5", seed, M, q, ConstantMap(Box(-np.ones(5), np.ones(5))),
                     starts(rng, 5, 3), "variational inequality on a constant box"))

    xbar = np.array([0.2, -0.3, 0.1])
    out.append(build("vi-ball-3", None, np.eye(3), -xbar, ConstantMap(Ball(np.zeros(3), 1.0)),
                     [[1.5, 0.0, 0.0], [-1.0, 1.0, 1.0]],
                     "A(x) = x - xbar with xbar inside the unit ball; solution xbar"))

    seed = next(seeds)
    rng = np.random.default_rng(seed)
    M = random_operator_matrix(rng, 4)
    q = 1.5 * rng.standard_normal(4)
    inter = Intersection((Box(-np.ones(4), np.ones(4)),
                          Box(np.full(4, -0.5), np.array([1.5, 0.5, 1.5, 0.5]))))
    out.append(build("vi-inter-4", seed, M, q, ConstantMap(inter), starts(rng, 4, 3),
                     "constant intersection of two boxes"))
    return out


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for p in suite():
        path = OUT / f"{p.name}.json"
        path.write_text(json.dumps(problem_to_dict(p), indent=1) + "\n", encoding="utf-8")
        c = p.certified
        print(f"{p.name:12s} n={p.n:3d} mu={p.operator.mu:.4f} L={p.operator.lip:.4f} "
              f"lam={p.lam:.3f} gamma*={c.gamma:.4f} beta={c.beta:.4f} x*={p.reference[:3]}")


if __name__ == "__main__":
    main()
