import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glowrecon.fem import FemSystem, recover_epsilon, solve_dirichlet_laplace, solve_q_equation
from glowrecon.forward import SourcePulse, analytic_plane_wave_w


def cube(n, L=1.0):
    h = L / (n - 1)
    return FemSystem((n, n, n), (h, h, h))


def nodal(fem, f):
    x, y, z = fem.node_coords().T
    return f(x, y, z).reshape(fem.shape)


def l2_error(fem, u, exact):
    e = (u - exact).ravel()
    return math.sqrt(e @ (fem.mass @ e))


def orders(errors):
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


# -- assembly ----------------------------------------------------------------------


def test_stiffness_symmetric_with_zero_row_sums():
    fem = FemSystem((5, 4, 6), (0.1, 0.2, 0.05))
    K = fem.stiffness
    assert abs(K - K.T).max() < 1e-14
    assert np.abs(K @ np.ones(fem.n_nodes)).max() < 1e-12


def test_mass_and_lumping():
    fem = FemSystem((5, 4, 6), (0.1, 0.2, 0.05))
    assert fem.mass.sum() == pytest.approx(0.4 * 0.6 * 0.25)
    ml = fem.lumped_mass
    assert np.all(ml > 0)
    assert np.allclose(ml, np.asarray(fem.mass.sum(axis=1)).ravel(), rtol=0, atol=1e-15)


def test_load_of_unit_source_is_lumped_mass():
    fem = FemSystem((4, 4, 4), (0.1, 0.1, 0.1))
    ones = np.ones(fem.conn.shape[0:1] + (8,))
    assert np.allclose(fem.load(ones), fem.lumped_mass)


def test_gradient_of_linear_field():
    fem = FemSystem((4, 5, 3), (0.1, 0.2, 0.3), (1.0, -1.0, 0.5))
    u = nodal(fem, lambda x, y, z: 2 * x - y + 3 * z)
    assert np.allclose(fem.grad_at_qp(u), [2.0, -1.0, 3.0])


# -- Laplace -----------------------------------------------------------------------


def test_constant_boundary():
    fem = cube(7)
    assert np.allclose(solve_dirichlet_laplace(fem, 2.5), 2.5, atol=1e-9)


def test_linear_reproduced():
    fem = FemSystem((9, 7, 6), (0.1, 0.15, 0.2), (-0.4, 0.0, 0.3))
    exact = nodal(fem, lambda x, y, z: x + 2 * y - z)
    assert np.abs(solve_dirichlet_laplace(fem, exact) - exact).max() < 1e-8


def test_maximum_principle(rng):
    fem = cube(8)
    g = rng.standard_normal(fem.shape)
    u = solve_dirichlet_laplace(fem, g)
    b = fem.boundary.reshape(fem.shape)
    assert u[~b].max() <= g[b].max() + 1e-12
    assert u[~b].min() >= g[b].min() - 1e-12


def test_harmonic_convergence():
    exact_f = lambda x, y, z: np.exp(x) * np.cos(y) + x * z  # noqa: E731
    errs = []
    for n in (9, 17, 33):
        fem = cube(n)
        exact = nodal(fem, exact_f)
        errs.append(l2_error(fem, solve_dirichlet_laplace(fem, exact), exact))
    assert min(orders(errs)) >= 1.8


def test_poisson_source():
    # -Laplace u = 3 pi^2 u for the sine product
    f = lambda x, y, z: np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)  # noqa: E731
    errs = []
    for n in (9, 17, 33):
        fem = cube(n)
        q = fem.qp_coords()
        src = 3 * np.pi**2 * f(q[..., 0], q[..., 1], q[..., 2])
        errs.append(l2_error(fem, solve_dirichlet_laplace(fem, 0.0, src), nodal(fem, f)))
    assert min(orders(errs)) >= 1.8


# -- q equation ----------------------------------------------------------------------


def test_q_constant_data():
    fem = cube(6)
    zero = np.zeros(fem.conn.shape[:1] + (8, 3))
    q = solve_q_equation(fem, zero, zero, 198.3, 19.96, 1.7)
    assert np.allclose(q, 1.7, atol=1e-9)


def manufactured_q(n, A1=198.33, A2=19.958):
    fem = cube(n, 0.4)
    qs = lambda x, y, z: np.sin(3 * x) * np.cosh(2 * y) + z**2  # noqa: E731
    X = fem.qp_coords()
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    grad_q = np.stack([3 * np.cos(3 * x) * np.cosh(2 * y), 2 * np.sin(3 * x) * np.sinh(2 * y), 2 * z], -1)
    lap_q = -9 * np.sin(3 * x) * np.cosh(2 * y) + 4 * np.sin(3 * x) * np.cosh(2 * y) + 2
    grad_V = np.stack([-0.2 * np.ones_like(x), 0.1 * z, -0.1 + 0.1 * y], -1)
    P = np.stack([0.05 * y, np.zeros_like(x), 0.02 * x], -1)
    diff = grad_V - P
    b = A1 * diff
    r = lap_q + np.einsum("eqd,eqd->eq", b, grad_q)
    source = r + A2 * np.einsum("eqd,eqd->eq", diff, diff)
    exact = nodal(fem, qs)
    q = solve_q_equation(fem, P, grad_V, A1, A2, exact, source_qp=source)
    return l2_error(fem, q, exact)


def test_q_equation_convergence():
    errs = [manufactured_q(n) for n in (9, 17, 33)]
    assert min(orders(errs)) >= 1.8


def test_q_rejects_nan():
    fem = cube(4)
    bad = np.full(fem.conn.shape[:1] + (8, 3), np.nan)
    with pytest.raises(ValueError):
        solve_q_equation(fem, bad, np.zeros_like(bad), 1.0, 1.0, 0.0)


# -- coefficient recovery ------------------------------------------------------------


def omega_box(h):
    n = [int(round(0.4 / h)) + 1, int(round(0.4 / h)) + 1, int(round(0.14 / h)) + 1]
    return FemSystem(tuple(n), (h, h, h), (-0.2, -0.2, -0.1))


@pytest.mark.parametrize("s", [8.0, 10.0])
def test_plane_wave_gives_one(s):
    fem = omega_box(0.02)
    z = fem.node_coords()[:, 2].reshape(fem.shape)
    w = analytic_plane_wave_w(z, s, SourcePulse(), 0.1)
    eps = recover_epsilon(fem, w, s)
    assert np.abs(eps[1:-1, 1:-1, 1:-1] - 1).max() <= 0.05


def test_plane_wave_second_order():
    errs = []
    for h in (0.02, 0.01):
        fem = omega_box(h)
        z = fem.node_coords()[:, 2].reshape(fem.shape)
        eps = recover_epsilon(fem, analytic_plane_wave_w(z, 10.0, SourcePulse(), 0.1), 10.0)
        errs.append(np.abs(eps - 1).max())
    assert orders(errs)[0] >= 1.8


def test_quadratic_v_interior():
    s = 9.0
    v_f = lambda x, y, z: -0.06 * z + 0.3 * x**2 + 0.2 * y * z  # noqa: E731
    target = lambda x, y, z: 0.6 + s * s * ((0.6 * x) ** 2 + (0.2 * z) ** 2 + (-0.06 + 0.2 * y) ** 2)  # noqa: E731
    errs = []
    for h in (0.02, 0.01):
        fem = omega_box(h)
        v = nodal(fem, v_f)
        eps = recover_epsilon(fem, np.exp(s * s * v), s)
        ref = nodal(fem, target)
        errs.append(np.abs(eps - ref)[2:-2, 2:-2, 2:-2].max())
    assert orders(errs)[0] >= 1.8


def test_constant_w_gives_zero():
    fem = omega_box(0.02)
    assert np.abs(recover_epsilon(fem, np.ones(fem.shape), 9.0)).max() < 1e-12


@given(c=st.floats(1e-3, 1e3))
def test_scaling_invariance(c):
    fem = FemSystem((6, 6, 5), (0.02, 0.02, 0.02))
    z = fem.node_coords()[:, 2].reshape(fem.shape)
    w = np.exp(-8.0 * (0.1 - z)) * (1 + 0.1 * np.sin(fem.node_coords()[:, 0].reshape(fem.shape) * 20))
    a = recover_epsilon(fem, w, 8.0)
    b = recover_epsilon(fem, c * w, 8.0)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)


def test_nonpositive_w_rejected():
    fem = FemSystem((4, 4, 4), (0.1, 0.1, 0.1))
    w = np.ones(fem.shape)
    w[1, 1, 1] = 0.0
    with pytest.raises(ValueError):
        recover_epsilon(fem, w, 9.0)
