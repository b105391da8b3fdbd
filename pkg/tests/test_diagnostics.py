import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import observed_order
from machlimit.compressible import CompressibleConfig, integrate, stable_dt
from machlimit.diagnostics import (
    ArityError,
    SamplingError,
    backward_weights,
    commutator_residual,
    constraint_residuals,
    curl_weighted,
    energy_E0,
    energy_suite,
    fit_hodge_constant,
    hodge_bound_check,
    isometry_ratio,
    sobolev_norm,
    time_derivative,
    wave_packet_transform,
    wave_residual,
    write_reports_csv,
    write_reports_jsonl,
    write_wave_packet,
)
from machlimit.fields import (
    BackgroundDeformation,
    EquationOfState,
    Grid,
    State,
    curl,
    diff,
    grad,
    l2_norm,
    read_component,
)
from machlimit.harness import make_initial_data


def window_of(state, n=4, dt=0.01):
    out = []
    for k in range(n):
        s = state.copy()
        s.t = k * dt
        out.append(s)
    return out


def stratified(grid, eps=0.5):
    s = State.zeros(grid, eps)
    _, x3 = grid.coords()
    s.S = 0.3 * np.cos(np.pi * x3) + 0.2 * x3 ** 2
    return s


# --- time differences and mixed norms --------------------------------------

@pytest.mark.parametrize("order,npts", [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)])
def test_backward_weights_exact_on_polynomials(order, npts):
    w = backward_weights(order, npts)
    t = np.arange(-(npts - 1), 1, dtype=float)
    for deg in range(npts):
        exact = math.factorial(order) if deg == order else 0.0
        assert np.dot(w, t ** deg) == pytest.approx(exact, abs=1e-10)


def test_time_derivative_of_polynomial():
    dt = 0.1
    hist = [np.array([(k * dt) ** 2]) for k in range(4)]
    assert time_derivative(hist, 1, dt)[0] == pytest.approx(2 * 3 * dt, rel=1e-10)
    assert time_derivative(hist, 2, dt)[0] == pytest.approx(2.0, rel=1e-10)
    assert time_derivative([np.ones(3)] * 4, 3, dt).max() == 0.0


def test_sobolev_norm_examples(grid32):
    z = [np.zeros(grid32.shape)] * 4
    assert sobolev_norm(z, 3, 0.5, grid32, dt=0.1) == 0.0
    c = [np.full(grid32.shape, -1.5)] * 4
    for s in range(4):
        assert sobolev_norm(c, s, 0.3, grid32, dt=0.1) == pytest.approx(
            1.5 * math.sqrt(grid32.volume), rel=1e-12)


def test_sobolev_norm_of_static_sine():
    errs, ns = [], (16, 32, 64)
    exact = 0.5 + 2 * np.pi ** 2
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, _ = g.coords()
        f = np.sin(2 * np.pi * x1)
        errs.append(abs(sobolev_norm([f, f], 1, 0.5, g, dt=0.1) ** 2 - exact))
    assert errs[-1] / exact < 1e-2
    assert abs(observed_order(errs, ns) - 2.0) <= 0.3


def test_sobolev_norm_arity(grid32):
    with pytest.raises(ArityError):
        sobolev_norm([np.zeros(grid32.shape)] * 2, 2, 0.5, grid32, dt=0.1)


# --- energies --------------------------------------------------------------

def test_energies_of_zero_state(grid32, eos, fbar):
    rep = energy_suite(window_of(State.zeros(grid32, 0.5)), eos, fbar, grid32)
    assert rep.E0 == rep.W0 == rep.E1 == rep.E2 == rep.E == 0.0
    assert rep.truncated == []


def test_E0_of_uniform_velocity(grid32, eos):
    s = State.zeros(grid32, 0.5)
    s.u[0] = 1.0
    assert energy_E0(s, eos, None, grid32) == pytest.approx(grid32.volume / 2, rel=1e-12)


def test_equilibrium_energies_constant(eos, fbar):
    g = Grid(n1=16, n3=16)
    s0 = stratified(g)
    traj = integrate(s0, CompressibleConfig(t_end=0.05, snapshot_stride=1), eos, fbar, g,
                     probes=[lambda w: energy_suite(w, eos, fbar, g)])
    E0 = [r.E0 for r in traj.series(0)]
    W0 = [r.W0 for r in traj.series(0)]
    assert np.ptp(E0) <= 1e-10 and np.ptp(W0) <= 1e-10
    assert np.max(np.abs(np.diff(E0))) / traj.dt <= 1e-10
    assert traj.series(0)[-1].residuals["wave_eq"] <= 1e-10


def test_energy_suite_truncation_flags(grid32, eos, fbar):
    s = make_initial_data("ill", grid32, eos, fbar, 0.5, seed=0)
    rep = energy_suite(window_of(s, n=2), eos, fbar, grid32)
    assert "q" in rep.truncated and "dt_u" in rep.truncated
    with pytest.raises(ArityError):
        energy_suite(window_of(s, n=1), eos, fbar, grid32)


@given(st.integers(0, 1000), st.sampled_from(["well", "ill"]), st.floats(0.05, 1.0))
def test_energies_nonnegative_and_finite(seed, mode, eps):
    g = Grid(n1=16, n3=16)
    eos = EquationOfState(1.4)
    fb = BackgroundDeformation.default(2)
    s = make_initial_data(mode, g, eos, fb, eps, seed)
    rep = energy_suite(window_of(s), eos, fb, g)
    flat = rep.flat()
    for k, v in flat.items():
        if k in ("t", "truncated"):
            continue
        assert math.isfinite(v) and v >= 0.0, k


# --- constraint, wave and commutator residuals ------------------------------

def test_constraint_zero_for_stratified_entropy(grid32, eos, fbar):
    r = constraint_residuals(stratified(grid32), eos, fbar, grid32)
    assert max(r["divF_constraint"]) <= 1e-12 and r["wall_traces"] == 0.0


def test_constraint_detects_inadmissible_data(eos):
    fb = BackgroundDeformation(np.array([[1.0, 0.0], [0.0, 0.0]]))
    errs, ns = [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, _ = g.coords()
        s = State.zeros(g, 0.5)
        s.S = 0.2 * np.sin(2 * np.pi * x1)
        rho = np.exp(-s.S / 1.4)
        exact = l2_norm(rho * (-0.2 * 2 * np.pi * np.cos(2 * np.pi * x1) / 1.4), g)
        r = constraint_residuals(s, eos, fb, g)["divF_constraint"]
        errs.append(abs(r[0] - exact))
        assert r[1] == 0.0
    assert observed_order(errs, ns) >= 1.8


def test_constraint_on_symbolically_admissible_F(eos, fbar):
    # rho (F_j + Fbar_j) = curl(chi_j) + Fbar_j is divergence free in the continuum
    errs, ns = [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        x1, x3 = g.coords()
        s = State.zeros(g, 0.5)
        s.S = 0.2 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
        rho = np.exp(-s.S / 1.4)
        for j, c in enumerate((0.1, 0.05)):
            chi_1 = c * 2 * np.pi * np.cos(2 * np.pi * x1) * np.sin(np.pi * x3)
            chi_3 = c * np.pi * np.sin(2 * np.pi * x1) * np.cos(np.pi * x3)
            col = np.stack([chi_3 + fbar.fbar[0, j], -chi_1 + fbar.fbar[1, j]])
            s.F[:, j] = col / rho - fbar.fbar[:, j, None, None]
        errs.append(max(constraint_residuals(s, eos, fbar, g)["divF_constraint"]))
    assert observed_order(errs, ns) >= 1.8


def test_wave_residual_on_equilibrium(grid32, eos, fbar):
    assert wave_residual(window_of(stratified(grid32)), eos, fbar, grid32) <= 1e-10
    with pytest.raises(ArityError):
        wave_residual(window_of(stratified(grid32), n=2), eos, fbar, grid32)


def test_commutator_static_fields(grid32, fbar):
    x1, x3 = grid32.coords()
    s = State.zeros(grid32, 0.5)
    s.S = np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
    s.F[0, 1] = 0.1 * np.sin(2 * np.pi * x1)
    assert commutator_residual(window_of(s, n=3), fbar, grid32) == [0.0, 0.0]
    with pytest.raises(ArityError):
        commutator_residual(window_of(s, n=1), fbar, grid32)


def test_window_must_be_equispaced(grid32, eos, fbar):
    w = window_of(stratified(grid32))
    w[1].t = 0.015
    with pytest.raises(ValueError):
        wave_residual(w, eos, fbar, grid32)


# --- Hodge-type estimate and weighted curls ---------------------------------

def solenoidal_corpus(grid, count=6, seed=0):
    rng = np.random.default_rng(seed)
    x1, x3 = grid.coords()
    out = []
    for _ in range(count):
        psi = np.zeros(grid.shape)
        for k in range(1, 3):
            for m in range(1, 3):
                psi += rng.normal() * np.sin(2 * np.pi * k * x1 + rng.uniform(0, 6)) \
                    * np.sin(m * np.pi * x3) / (k * k + m * m)
        out.append(np.stack([diff(psi, 1, grid), -diff(psi, 0, grid)]))
    return out


def test_hodge_zero_field(grid32):
    r = hodge_bound_check(np.zeros((2,) + grid32.shape), 1, grid32)
    assert r["lhs"] == 0.0 and r["rhs_components"] == (0.0, 0.0, 0.0, 0.0)


def test_hodge_constant_stable_across_resolutions():
    C = [fit_hodge_constant(solenoidal_corpus(Grid(n1=n, n3=n)), 1, Grid(n1=n, n3=n))
         for n in (32, 64)]
    assert 0 < C[0] < 10
    assert abs(C[1] / C[0] - 1.0) <= 0.2


def test_hodge_gradient_field_has_no_curl(grid32):
    x1, x3 = grid32.coords()
    X = grad(np.sin(2 * np.pi * x1) * np.cos(np.pi * x3), grid32)
    r = hodge_bound_check(X, 1, grid32)
    l2, dv, cu, bd = r["rhs_components"]
    assert cu <= 1e-20 * dv
    assert dv > l2 and dv > bd


def test_curl_weighted_examples(grid32, eos):
    s = State.zeros(grid32, 0.5)
    s.u[0] = 0.7
    cu, cF = curl_weighted(s, eos, grid32)
    assert np.max(np.abs(cu)) <= 1e-14
    x1, x3 = grid32.coords()
    s.u = np.stack([np.sin(2 * np.pi * x1) * np.cos(np.pi * x3), np.cos(2 * np.pi * x1) * x3])
    cu, _ = curl_weighted(s, eos, grid32)
    np.testing.assert_array_equal(cu, curl(s.u, grid32))


def test_curl_weighted_shear_oracle(eos):
    errs, ns = [], (16, 32, 64)
    for n in ns:
        g = Grid(n1=n, n3=n)
        _, x3 = g.coords()
        s = State.zeros(g, 0.5)
        s.S = 0.4 * x3
        s.u[0] = np.sin(np.pi * x3)
        rho0 = np.exp(-s.S / 1.4)
        exact = -(np.pi * np.cos(np.pi * x3) * rho0 - 0.4 / 1.4 * rho0 * np.sin(np.pi * x3))
        cu, _ = curl_weighted(s, eos, g)
        errs.append(np.max(np.abs(cu[0] - exact)))
    assert observed_order(errs, ns) >= 1.8


# --- wave packet transform -------------------------------------------------

def bump(s, width=0.5):
    out = np.zeros_like(s)
    inside = np.abs(s) < width
    out[inside] = np.exp(1 - 1 / (1 - (s[inside] / width) ** 2))
    return out


def test_wpt_zero_and_sampling_error():
    s = np.linspace(-1, 1, 401)
    W = wave_packet_transform(np.zeros_like(s), 0.05, np.linspace(-3, 3, 11), s)
    assert np.all(W == 0)
    with pytest.raises(SamplingError):
        wave_packet_transform(np.zeros(11), 0.05, [0.0], np.linspace(-1, 1, 11))


def test_wpt_isometry_and_localisation(tmp_path):
    eps = 0.05
    s = np.linspace(-1.5, 1.5, 1201)
    tau = np.linspace(-6, 6, 481)
    v = bump(s)
    W = wave_packet_transform(v, eps, tau, s)
    assert isometry_ratio(W, s, tau, v, s) == pytest.approx(1.0, abs=1e-3)
    w0 = 2.0
    Wc = wave_packet_transform(np.cos(w0 * s / eps) * v, eps, tau, s)
    energy = np.sum(np.abs(Wc) ** 2, axis=0)
    pos = tau > 0
    assert abs(tau[pos][np.argmax(energy[pos])] - w0) <= tau[1] - tau[0]
    paths = write_wave_packet(tmp_path / "wp", W, s, tau, eps)
    re, meta = read_component(paths[0])
    np.testing.assert_array_equal(re, W.real)
    assert meta["axes"] == ["t", "tau"]


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 100))
def test_wpt_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    s = np.linspace(-1, 1, 201)
    v = bump(s) * rng.normal()
    w = bump(s - 0.2, 0.4) * rng.normal()
    tau = np.linspace(-2, 2, 9)
    lhs = wave_packet_transform(a * v + b * w, 0.1, tau, s)
    rhs = a * wave_packet_transform(v, 0.1, tau, s) + b * wave_packet_transform(w, 0.1, tau, s)
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


# --- report writers --------------------------------------------------------

def test_report_writers(tmp_path, grid32, eos, fbar):
    s = make_initial_data("ill", grid32, eos, fbar, 0.5, seed=0)
    cfg = CompressibleConfig(t_end=0.01, snapshot_stride=1, compatibility_tolerance=None)
    traj = integrate(s, cfg, eos, fbar, grid32, probes=[lambda w: energy_suite(w, eos, fbar, grid32)])
    reps = traj.series(0)
    p = write_reports_csv(reps, tmp_path / "e.csv")
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == len(reps)
    assert {"t", "E0", "W0", "E1", "E2", "E", "divF_constraint_1", "wave_eq"} <= set(rows[0])
    lines = write_reports_jsonl(reps, tmp_path / "e.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["E0"] == reps[-1].E0
