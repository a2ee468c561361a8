import math

import numpy as np
import pytest

from qvibench.core import AffineOperator, ParameterError
from qvibench.problems import QviProblem, builtin_problem
from qvibench.projections import Box, ConstantMap, MovingSet
from qvibench.solvers import (
    ALPHA_DEFAULT,
    BETA_DEFAULT,
    THETA_DEFAULT,
    Algorithm,
    Schedule,
    SolverConfig,
    Status,
    check_termination,
    solve,
    solve_extragradient,
    solve_gradient_projection,
    solve_inertial_relaxed,
    solve_proposed,
    solve_relaxed1,
    solve_relaxed2,
)

X_STAR = 0.125


def scalar_problem(feasible, q=0.0, starts=((0.7,),)):
    op = AffineOperator.from_matrix([[1.0]], [q])
    return QviProblem("scalar", op, feasible, starts)


@pytest.fixture(scope="module")
def analytic():
    return builtin_problem("analytic-1d")


# -- schedules and configuration ----------------------------------------------


@pytest.mark.parametrize("text, k, expected", [
    ("0.5", 7, 0.5),
    ("1/3", 0, 1 / 3),
    ("1,0,5,5", 3, 3 / 20),
    ("0,1,1,1", 9, 0.1),
    ("3,0,7,9", 2, 6 / 23),
])
def test_schedule_parse(text, k, expected):
    assert Schedule.parse(text)(k) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("text", ["", "a", "1,2,3", "1/0/2"])
def test_schedule_parse_errors(text):
    with pytest.raises(ParameterError):
        Schedule.parse(text)


def test_schedule_denominator_must_stay_positive():
    with pytest.raises(ParameterError):
        Schedule(0, 1, -1, 5)


def test_default_schedules():
    assert THETA_DEFAULT(0) == 0 and THETA_DEFAULT(4) == pytest.approx(4 / 25)
    assert ALPHA_DEFAULT(0) == 1 and ALPHA_DEFAULT(3) == pytest.approx(0.25)
    assert BETA_DEFAULT(0) == 0 and BETA_DEFAULT(1) == pytest.approx(3 / 16)
    cfg = SolverConfig.default("proposed")
    assert cfg.gamma == 0.5 and cfg.tol == 1e-4 and cfg.max_iter == 1000


def test_schedule_str_round_trip():
    for s in (Schedule.constant(1 / 3), Schedule.constant(0.25), THETA_DEFAULT):
        assert Schedule.parse(str(s)).values(20) == pytest.approx(s.values(20), abs=1e-15)


def test_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(Algorithm.PROPOSED, gamma=0.0, theta=Schedule.constant(0.3))
    with pytest.raises(ParameterError, match="theta_0"):
        SolverConfig(Algorithm.PROPOSED, theta=Schedule.constant(1.0))
    with pytest.raises(ParameterError, match="alpha"):
        SolverConfig(Algorithm.RELAXED1, alpha=Schedule.constant(0.0))
    with pytest.raises(ParameterError, match="needs a beta"):
        SolverConfig(Algorithm.RELAXED2, alpha=Schedule.constant(0.5))
    with pytest.raises(ParameterError):
        SolverConfig(Algorithm.GRADPROJ, max_iter=0)


def test_theta_bounds_of_default_schedule():
    lo, hi = SolverConfig.default("proposed", max_iter=1000).theta_bounds
    assert lo == 0.0 and hi == pytest.approx(1000 / 5005)


# -- spec examples --------------------------------------------------------------


def test_proposed_one_projection_when_beta_zero():
    p = scalar_problem(ConstantMap(Box([-1.0], [1.0])))
    cfg = SolverConfig(Algorithm.PROPOSED, gamma=1.0, theta=Schedule.constant(1 / 3), tol=0.0)
    tr = solve_proposed(p, cfg)
    assert tr.status is Status.SOLVED and tr.iters == 1
    assert tr.x[0] == 0.0


def test_proposed_analytic(analytic):
    cfg = SolverConfig(Algorithm.PROPOSED, gamma=1.0, theta=Schedule.constant(1 / 3), tol=1e-12)
    tr = solve_proposed(analytic, cfg, [0.7])
    assert tr.status is Status.SOLVED
    assert tr.x[0] == pytest.approx(X_STAR, abs=1e-10)
    assert analytic.reference[0] == pytest.approx(X_STAR, abs=1e-12)


@pytest.mark.parametrize("fn, kw", [
    (solve_gradient_projection, {}),
    (solve_extragradient, {}),
    (solve_relaxed1, {"alpha": Schedule.constant(0.5)}),
    (solve_relaxed2, {"alpha": ALPHA_DEFAULT, "beta": BETA_DEFAULT}),
    (solve_inertial_relaxed, {"alpha": ALPHA_DEFAULT, "theta": THETA_DEFAULT}),
])
def test_baselines_reach_analytic_solution(analytic, fn, kw):
    algo = {solve_gradient_projection: "gradproj", solve_extragradient: "extragrad",
            solve_relaxed1: "relaxed1", solve_relaxed2: "relaxed2",
            solve_inertial_relaxed: "inertial-relaxed"}[fn]
    cfg = SolverConfig(Algorithm(algo), gamma=1.0 if algo != "extragrad" else 0.5,
                       tol=1e-6, max_iter=200_000, **kw)
    tr = fn(analytic, cfg, [0.7])
    assert tr.status is Status.SOLVED
    # the sublinear schedules stop further from the solution than opt suggests
    assert tr.x[0] == pytest.approx(X_STAR, abs=1e-4)


@pytest.mark.parametrize("algo", list(Algorithm))
def test_start_at_solution_is_stationary(analytic, algo):
    cfg = SolverConfig.default(algo, tol=0.0, max_iter=5)
    tr = solve(analytic, cfg, analytic.reference)
    for rec in tr.records:
        assert rec.x[0] == pytest.approx(X_STAR, abs=1e-14)


@pytest.mark.parametrize("algo", [Algorithm.GRADPROJ, Algorithm.EXTRAGRAD])
def test_singleton_set_one_step(algo):
    p = scalar_problem(ConstantMap(Box([0.0], [0.0])), q=2.0, starts=((5.0,),))
    tr = solve(p, SolverConfig(algo, gamma=0.5, tol=0.0))
    assert tr.iters == 1 and tr.x[0] == 0.0 and tr.status is Status.SOLVED


def test_start_point_already_solved_counts_zero_iterations(analytic):
    tr = solve(analytic, SolverConfig.default("gradproj"), analytic.reference)
    assert tr.iters == 0 and tr.status is Status.SOLVED
    assert tr.x[0] == pytest.approx(X_STAR)


# -- structural reductions --------------------------------------------------------


@pytest.fixture(scope="module")
def movbox():
    return builtin_problem("movbox-5")


def run(problem, algo, start, **kw):
    kw.setdefault("tol", None)
    kw.setdefault("max_iter", 60)
    return solve(problem, SolverConfig(Algorithm(algo), **kw), start)


def test_half_theta_proposed_is_relaxed1(movbox):
    s = movbox.starts[0]
    a = run(movbox, "proposed", s, gamma=0.5, theta=Schedule.constant(0.5))
    b = run(movbox, "relaxed1", s, gamma=0.5, alpha=Schedule.constant(0.5))
    for i in range(len(b.records) - 1):
        np.testing.assert_allclose(a.records[i + 1].z, b.records[i].x, rtol=0, atol=1e-12)


def test_unit_alpha_relaxed1_is_gradproj(movbox):
    s = movbox.starts[1]
    a = run(movbox, "relaxed1", s, gamma=0.5, alpha=Schedule.constant(1.0))
    b = run(movbox, "gradproj", s, gamma=0.5)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.x, rb.x)


def test_zero_beta_relaxed2_is_relaxed1(movbox):
    s = movbox.starts[2]
    a = run(movbox, "relaxed2", s, gamma=0.5, alpha=ALPHA_DEFAULT, beta=Schedule.constant(0.0))
    b = run(movbox, "relaxed1", s, gamma=0.5, alpha=ALPHA_DEFAULT)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_allclose(ra.x, rb.x, rtol=0, atol=1e-12)


def test_zero_theta_inertial_relaxed_is_relaxed1(movbox):
    s = movbox.starts[0]
    a = run(movbox, "inertial-relaxed", s, gamma=0.5, alpha=ALPHA_DEFAULT, theta=Schedule.constant(0.0))
    b = run(movbox, "relaxed1", s, gamma=0.5, alpha=ALPHA_DEFAULT)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_allclose(ra.x, rb.x, rtol=0, atol=1e-12)


@pytest.mark.parametrize("theta", [Schedule.constant(1 / 3), THETA_DEFAULT, Schedule.constant(0.7)])
def test_evaluation_point_two_forms_agree(movbox, theta):
    # y_k = z_{k+1} + ((1-2t)/t)(z_{k+1} - z_k) equals (1 - t) x_k + t z_k with t = theta_k
    tr = run(movbox, "proposed", movbox.starts[0], gamma=0.5, theta=theta, max_iter=40)
    for k in range(len(tr.records) - 1):
        t = theta(k)
        x, z = tr.records[k].x, tr.records[k].z
        y = tr.records[k + 1].y
        expected = (1 - t) * x + t * z
        np.testing.assert_allclose(y, expected, rtol=1e-10, atol=1e-10 * max(1.0, np.linalg.norm(y)))


# -- driver behaviour -----------------------------------------------------------


def test_determinism(movbox):
    cfg = SolverConfig.default("proposed")
    a, b = solve(movbox, cfg), solve(movbox, cfg)
    assert a.iters == b.iters
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.x, rb.x) and ra.opt == rb.opt and ra.step_norm == rb.step_norm


def test_divergence_detected():
    p = scalar_problem(ConstantMap(Box([-np.inf], [np.inf])), starts=((1.0,),))
    tr = solve(p, SolverConfig(Algorithm.GRADPROJ, gamma=3.0, max_iter=1000))
    assert tr.status is Status.DIVERGED
    assert "|x|" in tr.message
    assert tr.iters < 100


def test_max_iter_reached(analytic):
    tr = solve(analytic, SolverConfig.default("relaxed1", max_iter=10))
    assert tr.status is Status.MAX_ITER and tr.iters == 10


def test_tol_none_runs_every_iteration():
    p = scalar_problem(ConstantMap(Box([-1.0], [1.0])))
    tr = solve(p, SolverConfig(Algorithm.GRADPROJ, gamma=1.0, tol=None, max_iter=7))
    assert tr.iters == 7 and tr.status is Status.MAX_ITER


def test_status_is_set_once(analytic):
    tr = solve(analytic, SolverConfig.default("gradproj"))
    with pytest.raises(RuntimeError):
        tr.finish(Status.SOLVED)


def test_step_norms_and_indexing(analytic):
    tr = solve(analytic, SolverConfig.default("proposed", tol=0.0, max_iter=5), [0.7])
    assert [r.k for r in tr.records] == [0, 1, 2, 3, 4]
    g = solve(analytic, SolverConfig.default("gradproj", tol=0.0, max_iter=5), [0.7])
    assert [r.k for r in g.records] == [1, 2, 3, 4, 5]
    assert g.records[0].step_norm == pytest.approx(abs(g.records[0].x[0] - 0.7))


# -- termination ----------------------------------------------------------------


def test_check_termination_examples(analytic):
    opt, feas, done = check_termination(analytic, [X_STAR], 1e-4)
    assert abs(opt) <= 1e-10 and feas == 0.0 and done
    p = scalar_problem(ConstantMap(Box([0.0], [1.0])))
    _, feas, done = check_termination(p, [1.5], 1e-4)
    assert feas == pytest.approx(0.5) and not done


def test_check_termination_unbounded_falls_back_to_residual():
    K = MovingSet(Box([0.0], [np.inf]), [[0.2]], [0.1])
    # A(x) = x bounded below on K(x): the linear measure is finite
    opt, _, _ = check_termination(scalar_problem(K), [0.5], 1e-4)
    assert opt == pytest.approx(0.5 * (0.5 - 0.2))
    # A(x) = x - 1 at 0.5 points into the unbounded direction: natural residual at gamma = 1,
    # |0.5 - P_[0.2, inf)(0.5 + 0.5)| = 0.5
    opt, feas, _ = check_termination(scalar_problem(K, q=-1.0), [0.5], 1e-4)
    assert opt == pytest.approx(0.5)
    assert feas == 0.0 and math.isfinite(opt)
