import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import observed_order
from machlimit.compressible import CompressibleConfig
from machlimit.fields import Grid, curl, div, grad, integrate as quad, l2_norm
from machlimit.harness import DataParams, make_limit_data
from machlimit.incompressible import (
    IncompressibleState,
    SolverError,
    WeightedProjector,
    construct_w0,
    initial_limit_state,
    integrate_incompressible,
    leray_project,
    rhs_incompressible,
    solve_neumann_poisson,
)


def stream_field(grid, amp=1.0):
    """Divergence-free field with zero normal trace, built from the discrete
    operators so it is exactly solenoidal for the parity divergence."""
    x1, x3 = grid.coords()
    psi = amp * np.sin(2 * np.pi * x1) * np.sin(np.pi * x3)
    g = grad(psi, grid, parity=-1)
    return np.stack([g[1], -g[0]])


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    x1, x3 = grid.coords()
    X = np.zeros((2,) + grid.shape)
    for k in range(1, 4):
        for m in range(0, 4):
            a, b = rng.normal(size=2)
            X[0] += a * np.cos(2 * np.pi * k * x1 + b) * np.cos(m * np.pi * x3) / (k + m)
            X[1] += b * np.sin(2 * np.pi * k * x1 + a) * np.sin(m * np.pi * x3) / (k + m)
    return X


def inner(X, Y, grid):
    w = grid.weights
    return float(np.sum(X * Y * w))


def test_poisson_solve_inverts_operator(grid32):
    x1, x3 = grid32.coords()
    psi = np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
    b = div(grad(psi, grid32, parity=1), grid32, parity=1)
    back = solve_neumann_poisson(b, grid32)
    b2 = div(grad(back, grid32, parity=1), grid32, parity=1)
    assert np.max(np.abs(b2 - b)) < 1e-10 * np.max(np.abs(b))


def test_projection_fixed_point(grid32):
    X = stream_field(grid32)
    PX, QX = leray_project(X, grid32)
    assert l2_norm(PX - X, grid32) <= 1e-9 * l2_norm(X, grid32)


def test_projection_annihilates_gradients():
    errs, ns = [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, x3 = g.coords()
        X = np.stack([-2 * np.pi * np.sin(2 * np.pi * x1) * np.cos(np.pi * x3),
                      -np.pi * np.cos(2 * np.pi * x1) * np.sin(np.pi * x3)])
        PX, _ = leray_project(X, g)
        errs.append(np.max(np.abs(PX)))
    assert observed_order(errs, ns) >= 1.8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_projector_algebra(grid32, seed):
    X = random_field(grid32, seed)
    PX, QX = leray_project(X, grid32)
    PPX, _ = leray_project(PX, grid32)
    assert np.max(np.abs(PPX - PX)) <= 1e-9 * np.max(np.abs(X))
    assert abs(inner(PX, QX, grid32)) <= 1e-10 * l2_norm(X, grid32) ** 2
    np.testing.assert_allclose(PX + QX, X, rtol=0, atol=4 * np.finfo(float).eps * np.max(np.abs(X)))
    assert l2_norm(div(PX, grid32, parity=1), grid32) <= 1e-9 * l2_norm(X, grid32) / grid32.hmin


def test_projection_rejects_nan(grid32):
    X = np.zeros((2,) + grid32.shape)
    X[0, 3, 3] = np.nan
    with pytest.raises(SolverError):
        leray_project(X, grid32)


def test_w0_of_admissible_field_is_unchanged(grid32):
    x1, x3 = grid32.coords()
    rho0 = 1.0 + 0.3 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
    u = stream_field(grid32)
    w0, res = construct_w0(u, np.ones(grid32.shape), grid32)
    assert np.max(np.abs(w0 - u)) <= 1e-8 * np.max(np.abs(u))
    # with a variable weight, a solenoidal field is still fixed
    w0, res = construct_w0(u, rho0, grid32)
    assert np.max(np.abs(w0 - u)) <= 1e-8 * np.max(np.abs(u))


def test_w0_kills_weighted_gradients():
    errs, ns = [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, x3 = g.coords()
        rho0 = 1.0 + 0.3 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
        gphi = np.stack([-2 * np.pi * np.sin(2 * np.pi * x1) * np.cos(np.pi * x3),
                         -np.pi * np.cos(2 * np.pi * x1) * np.sin(np.pi * x3)])
        w0, _ = construct_w0(gphi / rho0, rho0, g)
        errs.append(np.max(np.abs(w0)))
    assert observed_order(errs, ns) >= 1.8


def test_w0_with_unit_density_matches_leray(grid32):
    X = random_field(grid32, 5)
    X[-1][:, [0, -1]] = 0.0
    w0, _ = construct_w0(X, np.ones(grid32.shape), grid32)
    PX, _ = leray_project(X, grid32)
    assert np.max(np.abs(w0 - PX)) <= 1e-9 * np.max(np.abs(X))


def test_w0_residuals_converge():
    divs, curls, ns = [], [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, x3 = g.coords()
        rho0 = np.exp(-0.3 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x3))
        u = np.stack([np.sin(2 * np.pi * x1) * np.cos(np.pi * x3) + np.cos(np.pi * x3),
                      np.cos(4 * np.pi * x1) * np.sin(np.pi * x3)])
        _, r = construct_w0(u, rho0, g)
        divs.append(r["divergence"])
        curls.append(r["curl_mismatch"])
    assert observed_order(divs, ns) >= 1.8
    assert observed_order(curls, ns) >= 1.8


def test_weighted_projector_positive_weight(grid32):
    with pytest.raises(ValueError):
        WeightedProjector(np.zeros(grid32.shape), grid32)


def test_rest_state(grid32, eos, fbar):
    _, x3 = grid32.coords()
    S = 0.3 * np.cos(np.pi * x3)
    z = np.zeros((2,) + grid32.shape)
    st_ = initial_limit_state(z, np.zeros((2, 2) + grid32.shape), S, eos)
    tend, pi_grad = rhs_incompressible(st_, fbar, grid32)
    assert max(float(np.max(np.abs(p))) for p in tend) == 0.0
    assert np.max(np.abs(pi_grad)) == 0.0


def test_rest_state_preserved_1000_steps(eos, fbar):
    g = Grid(n1=16, n3=16)
    _, x3 = g.coords()
    S = 0.3 * np.cos(np.pi * x3) + 0.2 * x3 ** 2
    st_ = initial_limit_state(np.zeros((2,) + g.shape), np.zeros((2, 2) + g.shape), S, eos)
    traj = integrate_incompressible(st_, CompressibleConfig(t_end=1.0, dt=1e-3,
                                                            snapshot_stride=500), fbar, g)
    assert traj.steps == 1000
    assert np.max(np.abs(traj.states[-1].pack() - st_.pack())) <= 1e-10


def test_projected_tendency_is_solenoidal(grid32, eos, fbar):
    st_, _ = make_limit_data("ill", grid32, eos, fbar, seed=3)
    tend, pi_grad = rhs_incompressible(st_, fbar, grid32)
    assert l2_norm(div(tend.u, grid32, parity=1), grid32) <= 1e-9 * max(1.0, l2_norm(tend.u, grid32))
    assert np.all(np.isfinite(pi_grad))


def _limit_run(n, eos, fbar, t_end=0.2):
    g = Grid(n1=n, n3=n)
    params = DataParams(u_amplitude=0.2, F_amplitude=0.05, N0=0.2, modes=1, entropy="smooth")
    st_, _ = make_limit_data("ill", g, eos, fbar, seed=0, params=params)
    cfg = CompressibleConfig(t_end=t_end, dt=0.25 * 32 / n * g.hmin, snapshot_stride=5)
    return g, st_, integrate_incompressible(st_, cfg, fbar, g)


def test_divergence_at_every_output(eos, fbar):
    g, _, traj = _limit_run(32, eos, fbar)
    for s in traj.states:
        assert l2_norm(div(s.u, g, parity=1), g) <= 1e-8
        assert s.pi_grad is not None


def test_mass_of_transported_density_conserved(eos, fbar):
    drift = []
    for n in (16, 32):
        g, st0, traj = _limit_run(n, eos, fbar)
        drift.append(abs(quad(traj.states[-1].varrho, g) - quad(st0.varrho, g)))
    assert drift[1] <= drift[0] / 3.0 + 1e-13


@given(st.integers(0, 10 ** 6))
def test_projector_idempotent_property(seed):
    g = Grid(n1=16, n3=16)
    X = np.random.default_rng(seed).normal(size=(2,) + g.shape)
    PX, QX = leray_project(X, g)
    PPX, _ = leray_project(PX, g)
    assert np.max(np.abs(PPX - PX)) <= 1e-9 * np.max(np.abs(X))
    assert abs(inner(PX, QX, g)) <= 1e-10 * l2_norm(X, g) ** 2
