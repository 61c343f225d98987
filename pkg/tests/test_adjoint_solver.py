import numpy as np
import pytest

from multirate.adjoint_solver import (
    GAUSS,
    GoalFunctional,
    flatten_adjoint,
    goal_derivative_load,
    goal_value,
    solve_adjoint,
)
from multirate.coupled_forms import PrimalTrajectory, flatten, global_system
from multirate.dwr_estimator import adjoint_residual
from multirate.primal_solver import solve_primal
from multirate.time_grid import uniform_partition

FLUID = GoalFunctional("fluid")
SOLID = GoalFunctional("solid")


def test_gauss_points():
    assert GAUSS[0] == pytest.approx(0.5 - 1 / (2 * np.sqrt(3)), abs=1e-15)
    assert GAUSS[1] == pytest.approx(0.5 + 1 / (2 * np.sqrt(3)), abs=1e-15)
    assert np.allclose(GAUSS, [0.2113249, 0.7886751], atol=1e-7)


def test_bad_kind():
    with pytest.raises(ValueError):
        GoalFunctional("interface")


def test_zero_trajectory(sd1):
    p = uniform_partition(1.0, 4, 2, 1)
    U = PrimalTrajectory(p, np.zeros((p.M + 1, sd1.dim_f)), np.zeros((p.L + 1, sd1.dim_s)))
    for J in (FLUID, SOLID):
        assert goal_value(J, sd1, U) == 0.0
        lf, ls = goal_derivative_load(J, sd1, U)
        assert not np.any(lf) and not np.any(ls)
        Z = solve_adjoint(sd1, J, U)
        assert not np.any(Z.fluid) and not np.any(Z.solid)


def test_manufactured_linear_in_time(sd1, rng):
    # U_f(t) = (a + b t) w: the integral of nu (a + b t)^2 w^T Kr w over [0, T]
    p = uniform_partition(1.0, 3, 2, 1)
    t = p.times("fluid")
    w = rng.standard_normal(sd1.dim_f)
    a, b = 0.3, -1.7
    U = PrimalTrajectory(p, np.outer(a + b * t, w), np.zeros((p.L + 1, sd1.dim_s)))
    nf = sd1.ops.nf
    q = sd1.ops.params.nu * w[nf:] @ (sd1.ops.Kr_f @ w[nf:])
    exact = q * ((a + b) ** 3 - a**3) / (3 * b)
    assert goal_value(FLUID, sd1, U) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("J", [FLUID, SOLID])
def test_derivative_matches_difference_quotient(sd2, rng, J):
    p = uniform_partition(1.0, 4, 2, 3)
    U, _ = solve_primal(sd2, p)
    # direction correlated with U so that J'(Xi) is not lost to cancellation
    xf = U.fluid * (1.0 + 0.5 * rng.standard_normal(U.fluid.shape))
    xs = U.solid * (1.0 + 0.5 * rng.standard_normal(U.solid.shape))
    s = 1e-7
    V = PrimalTrajectory(p, U.fluid + s * xf, U.solid + s * xs)
    fd = (goal_value(J, sd2, V) - goal_value(J, sd2, U)) / s
    lf, ls = goal_derivative_load(J, sd2, U)
    exact = np.sum(lf * xf) + np.sum(ls * xs)
    assert fd == pytest.approx(exact, rel=1e-6)


def test_load_linear_in_state(sd1):
    p = uniform_partition(1.0, 5, 1, 1)
    U, _ = solve_primal(sd1, p)
    U2 = PrimalTrajectory(p, 2 * U.fluid, 2 * U.solid)
    for J in (FLUID, SOLID):
        a = goal_derivative_load(J, sd1, U)
        b = goal_derivative_load(J, sd1, U2)
        assert np.array_equal(b[0], 2 * a[0]) and np.array_equal(b[1], 2 * a[1])


@pytest.mark.parametrize("shape", [(2, 1, 1), (3, 2, 3), (2, 1, 4)])
def test_adjoint_is_exact_transpose(sd_coarse, shape):
    p = uniform_partition(1.0, *shape)
    U, _ = solve_primal(sd_coarse, p)
    G, F = global_system(sd_coarse, p)
    assert np.abs(G @ flatten(p, U.fluid, U.solid) - F).max() < 1e-15
    Z = solve_adjoint(sd_coarse, FLUID, U)
    L = flatten(p, *goal_derivative_load(FLUID, sd_coarse, U))
    Zv = flatten_adjoint(Z)
    assert np.abs(G.T @ Zv - L).max() <= 1e-12 * np.abs(L).max()


def test_adjoint_consistency_identity(sd1, rng):
    p = uniform_partition(1.0, 10, 2, 3)
    U, _ = solve_primal(sd1, p)
    Z = solve_adjoint(sd1, FLUID, U)
    for _ in range(20):
        xf = rng.standard_normal(U.fluid.shape)
        xs = rng.standard_normal(U.solid.shape)
        xf[0] = 0.0
        xs[0] = 0.0
        res = adjoint_residual(sd1, FLUID, U, Z, {"fluid": xf, "solid": xs})
        lf, ls = goal_derivative_load(FLUID, sd1, U)
        jprime = np.sum(lf * xf) + np.sum(ls * xs)
        assert abs(res["fluid"].sum() + res["solid"].sum()) <= 1e-9 * abs(jprime)


@pytest.mark.parametrize("J, sd", [(FLUID, "sd1"), (SOLID, "sd2")])
def test_relaxation_adjoint_matches(J, sd, request):
    sd = request.getfixturevalue(sd)
    p = uniform_partition(1.0, 10, 2, 1)
    U, _ = solve_primal(sd, p)
    a = solve_adjoint(sd, J, U)
    b = solve_adjoint(sd, J, U, method="relaxation")
    assert np.abs(a.fluid - b.fluid).max() <= 1e-8
    assert np.abs(a.solid - b.solid).max() <= 1e-8
    assert np.abs(a.solid - b.solid).max() <= 1e-10 * np.abs(a.solid).max()


def test_backward_causality(sd1, rng):
    p = uniform_partition(1.0, 6, 2, 1)
    U, _ = solve_primal(sd1, p)
    lf, ls = goal_derivative_load(FLUID, sd1, U)
    base = solve_adjoint(sd1, FLUID, U)
    # perturb the load at the fluid micro nodes of macro interval 4 only
    fi = p.macro_slices("fluid")
    lf2 = lf.copy()
    lf2[fi[3] + 1 : fi[4] + 1] += rng.standard_normal((fi[4] - fi[3], sd1.dim_f))
    pert = solve_adjoint(sd1, FLUID, U, load=(lf2, ls))
    assert np.array_equal(pert.fluid[fi[4] :], base.fluid[fi[4] :])
    assert np.array_equal(pert.solid[4:], base.solid[4:])
    assert np.abs(pert.fluid[fi[3] : fi[4]] - base.fluid[fi[3] : fi[4]]).max() > 0
