import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from machlimit.compressible import (
    CompressibleConfig,
    IntegrationError,
    compatibility_residuals,
    enforce_boundary,
    ghost_layers,
    integrate,
    rhs,
    stable_dt,
)
from machlimit.diagnostics import constraint_residuals
from machlimit.fields import EquationOfState, Grid, State, integrate as quad
from machlimit.fields import eos_eval, HyperbolicityError
from machlimit.harness import DataParams, make_initial_data


def stratified(grid, eps=0.5):
    s = State.zeros(grid, eps)
    _, x3 = grid.coords()
    s.S = 0.3 * np.cos(np.pi * x3) + 0.2 * x3 ** 2
    return s


def test_rhs_uniform_equilibrium(grid32, eos, fbar):
    r = rhs(State.zeros(grid32, 0.3), eos, fbar, grid32)
    for part in r:
        assert np.all(part == 0.0)


def test_rhs_stratified_equilibrium(grid32, eos, fbar):
    r = rhs(stratified(grid32), eos, fbar, grid32)
    assert max(float(np.max(np.abs(part))) for part in r) == 0.0


def test_rhs_pressure_gradient_term(grid32, eos):
    # u = 0, F = 0, S = 0: only d_t u = -grad(q)/(eps rho) survives
    x1, _ = grid32.coords()
    s = State.zeros(grid32, 0.5)
    s.q = 0.1 * np.cos(2 * np.pi * x1)
    r = rhs(s, eos, None, grid32)
    rho, _, _ = eos_eval(eos, s.q, s.S, 0.5)
    expected = 0.1 * 2 * np.pi * np.sin(2 * np.pi * x1) / (0.5 * rho)
    np.testing.assert_allclose(r.u[0], expected, atol=2e-2 * np.max(np.abs(expected)))
    assert np.all(r.q == 0.0) and np.all(r.S == 0.0)


def test_enforce_boundary_zeroes_normal_traces(grid32):
    s = State.zeros(grid32, 0.5)
    s.u[-1][:, 0] = 1e-3
    s.F[-1, 0][:, -1] = 2.0
    out = enforce_boundary(s)
    assert np.all(out.u[-1][:, [0, -1]] == 0.0) and np.all(out.F[-1][..., [0, -1]] == 0.0)
    assert s.u[-1][0, 0] == 1e-3  # input untouched


def test_enforce_boundary_idempotent_on_equilibrium(grid32):
    s = stratified(grid32)
    np.testing.assert_array_equal(enforce_boundary(s).pack(), s.pack())


def test_ghost_layers_reflect(grid32):
    s = State.zeros(grid32, 0.5)
    _, x3 = grid32.coords()
    s.q = np.cos(np.pi * x3)
    s.u[-1] = np.sin(np.pi * x3)
    g = ghost_layers(s)
    np.testing.assert_array_equal(g["q"][:, 0], s.q[:, 1])
    np.testing.assert_array_equal(g["q"][:, -1], s.q[:, -2])
    np.testing.assert_array_equal(g["u3"][:, 0], -s.u[-1][:, 1])


def test_stable_dt_closed_form(eos):
    g = Grid(n1=64, n3=64)
    dt = stable_dt(State.zeros(g, 1.0), eos, g, 0.4)
    assert dt == pytest.approx(0.4 * (1 / 64) * math.sqrt(1 / 1.4), rel=1e-14)


def test_stable_dt_scaling(grid32, eos, fbar):
    s = State.zeros(grid32, 0.2)
    half = State.zeros(grid32, 0.1)
    r = stable_dt(half, eos, grid32, 0.4, fbar) / stable_dt(s, eos, grid32, 0.4, fbar)
    assert 0.45 <= r <= 0.55
    assert stable_dt(s, eos, grid32, 0.8, fbar) == 2 * stable_dt(s, eos, grid32, 0.4, fbar)


def test_config_validation():
    with pytest.raises(ValueError):
        CompressibleConfig(cfl=1.5)
    with pytest.raises(ValueError):
        CompressibleConfig(history_depth=3)


def test_equilibrium_preserved_over_many_steps(eos, fbar):
    g = Grid(n1=16, n3=16)
    s0 = stratified(g)
    dt = stable_dt(s0, eos, g, 0.4, fbar)
    traj = integrate(s0, CompressibleConfig(t_end=1000 * dt, dt=dt, snapshot_stride=250),
                     eos, fbar, g)
    assert traj.steps == 1000
    assert np.max(np.abs(traj.states[-1].pack() - s0.pack())) <= 1e-10


def test_trajectory_contract_and_traces(grid32, eos, fbar):
    s0 = make_initial_data("ill", grid32, eos, fbar, 0.5, seed=2)
    cfg = CompressibleConfig(t_end=0.05, snapshot_stride=1, compatibility_tolerance=None)
    traj = integrate(s0, cfg, eos, fbar, grid32)
    t = np.array(traj.times)
    assert np.all(np.diff(t) > 0) and t[-1] >= cfg.t_end - traj.dt
    for s in traj.states:
        assert constraint_residuals(s, eos, fbar, grid32)["wall_traces"] <= 1e-12


def test_bit_identical_reruns(grid32, eos, fbar):
    s0 = make_initial_data("ill", grid32, eos, fbar, 0.5, seed=4)
    cfg = CompressibleConfig(t_end=0.03, snapshot_stride=3, compatibility_tolerance=None)
    a = integrate(s0, cfg, eos, fbar, grid32)
    b = integrate(s0, cfg, eos, fbar, grid32)
    assert a.times == b.times
    for x, y in zip(a.states, b.states):
        assert np.array_equal(x.pack(), y.pack())


def test_probes_receive_window(grid32, eos, fbar):
    s0 = stratified(grid32)
    seen = []
    cfg = CompressibleConfig(t_end=0.02, snapshot_stride=1, history_depth=4)
    traj = integrate(s0, cfg, eos, fbar, grid32, probes=[lambda w: seen.append(len(w)) or len(w)])
    assert set(seen) == {4}
    assert traj.series(0) == [4] * len(traj.reports)


def test_instability_detector_aborts(grid32, eos):
    s0 = stratified(grid32)

    def blowup(t, s):
        out = rhs(State.zeros(grid32, s.eps), eos, None, grid32)
        out.u[0][:] = 1e7
        return out

    cfg = CompressibleConfig(t_end=0.05)
    with pytest.raises(IntegrationError) as err:
        integrate(s0, cfg, eos, None, grid32, source=blowup)
    assert err.value.trajectory.status == "unstable"
    assert err.value.last_good_time == 0.0


def test_eos_errors_propagate(grid32):
    eos = EquationOfState(1.4, rho_floor=0.99)
    s0 = stratified(grid32)
    with pytest.raises(HyperbolicityError) as err:
        integrate(s0, CompressibleConfig(t_end=0.01), eos, None, grid32)
    assert err.value.last_good_time == 0.0


def test_compatibility_warning(grid32, eos, fbar):
    # a wall-normal pressure gradient drives u3 at the walls at second order
    _, x3 = grid32.coords()
    s0 = State.zeros(grid32, 0.5)
    s0.q = 0.1 * x3
    res = compatibility_residuals(s0, eos, fbar, grid32)
    assert res[0] == 0.0 and res[1] == pytest.approx(1.0)
    with pytest.warns(UserWarning, match="compatibility"):
        integrate(s0, CompressibleConfig(t_end=1e-3), eos, fbar, grid32)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate(stratified(grid32), CompressibleConfig(t_end=1e-3), eos, fbar, grid32)


def _entropy_drift(n, eos, fbar):
    g = Grid(n1=n, n3=n)
    params = DataParams(u_amplitude=0.1, gradient_amplitude=0.1, q_amplitude=0.1,
                        F_amplitude=0.05, N0=0.2, modes=1, entropy="smooth")
    s0 = make_initial_data("ill", g, eos, fbar, 0.5, seed=0, params=params)
    dt0 = stable_dt(make_initial_data("ill", Grid(n1=16, n3=16), eos, fbar, 0.5, 0, params),
                    eos, Grid(n1=16, n3=16), 0.4, fbar) * 16 / n
    traj = integrate(s0, CompressibleConfig(t_end=0.2, dt=dt0, snapshot_stride=10 ** 6,
                                            compatibility_tolerance=None), eos, fbar, g)

    def m(s):
        rho, _, _ = eos_eval(eos, s.q, s.S, s.eps)
        return quad(rho * s.S ** 2, g)

    return abs(m(traj.states[-1]) - m(s0))


def test_entropy_norm_drift_is_second_order(eos, fbar):
    d = [_entropy_drift(n, eos, fbar) for n in (16, 32)]
    assert d[1] < d[0] / 3.0


@given(st.floats(0.05, 1.0), st.floats(0.1, 1.0))
def test_stable_dt_positive_and_linear_in_cfl(eps, cfl):
    g = Grid(n1=8, n3=8)
    eos = EquationOfState(1.4)
    s = State.zeros(g, eps)
    dt = stable_dt(s, eos, g, cfl)
    assert dt > 0
    assert stable_dt(s, eos, g, cfl / 2) == pytest.approx(dt / 2, rel=1e-15)
