import numpy as np

from multirate.adaptivity import adaptive_loop, mark
from multirate.adjoint_solver import GoalFunctional
from multirate.dwr_estimator import ErrorBreakdown
from multirate.time_grid import closed_marks, refine, uniform_partition
from conftest import make_sd, silence_source


def test_equal_indicators_mark_nothing():
    b = ErrorBreakdown(np.full(6, 0.1), np.full(4, 0.1), np.full(6, 0.1), np.full(4, 0.1))
    assert b.sigma_bar == 0.2
    assert mark(b).counts() == (0, 0)


def test_single_peak_marked():
    tf = np.full(10, 1e-3)
    b = ErrorBreakdown(tf.copy(), np.full(10, 1e-3), np.full(10, 1e-3), np.full(10, 1e-3))
    b.theta_f[4] = 10 * b.sigma_bar  # becomes dominant; recompute threshold
    bar = b.sigma_bar
    assert abs(b.theta_f[4]) >= bar
    m = mark(b)
    assert m.fluid == {4} and m.solid == frozenset()


def test_negative_indicators_use_absolute_value():
    b = ErrorBreakdown(np.array([-1.0, 0.01]), np.array([0.0]), np.zeros(2), np.zeros(1))
    assert mark(b).fluid == {0}


def test_zero_source_is_fixed_point():
    sd = silence_source(make_sd(h=0.5, config_id=1))
    p = uniform_partition(1.0, 6, 1, 1)
    recs, q = adaptive_loop(sd, p, GoalFunctional("fluid"), steps=2)
    assert q == p
    assert all(r.sigma == 0.0 and r.marked_fluid == r.marked_solid == 0 for r in recs)


def test_refinement_locality(sd1):
    goal = GoalFunctional("fluid")
    p = uniform_partition(1.0, 20, 1, 1)
    from multirate.adjoint_solver import solve_adjoint
    from multirate.dwr_estimator import estimate
    from multirate.primal_solver import solve_primal

    U, _ = solve_primal(sd1, p)
    b = estimate(sd1, goal, U, solve_adjoint(sd1, goal, U))
    m = mark(b)
    q = refine(p, m)
    closed = closed_marks(p, m)
    bar = b.sigma_bar
    for which, th, vt in (("fluid", b.theta_f, b.vartheta_f), ("solid", b.theta_s, b.vartheta_s)):
        hot = (np.abs(th) >= bar) | (np.abs(vt) >= bar)
        for patch in p.patches(which):
            if not any(hot[i] for i in patch):
                assert not set(patch) & closed.of(which)
    # untouched intervals keep their nodes
    assert set(p.fluid) <= set(q.fluid)


def test_records_consistent(sd1):
    goal = GoalFunctional("fluid")
    recs, q = adaptive_loop(sd1, uniform_partition(1.0, 20, 1, 1), goal, steps=2, j_ref=1.0)
    assert [r.step for r in recs] == [1, 2]
    assert (recs[0].N, recs[0].M, recs[0].L) == (20, 20, 20)
    assert recs[1].M >= recs[0].M + recs[0].marked_fluid
    assert recs[1].L >= recs[0].L + recs[0].marked_solid
    assert all(r.eff is not None for r in recs)
