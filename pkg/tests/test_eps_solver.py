import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from selmut.eps_solver import (EpsConfig, advance_eps, boundary_depth, check_bounds, compute_intake,
                               initial_potential, make_eps_config, run_eps, stability_limit)
from selmut.errors import BoundaryContactError, ValidationError
from selmut.grid import Grid1D, GridField, d2
from selmut.model import Bump, GrowthModel, InitialData, WeightFunction, envelope_rates

P0 = GrowthModel()
ONE = WeightFunction()
R_STAT = 1.0 / math.sqrt(2.0 * math.pi)


def steady(eps, grid):
    return GridField(grid, -grid.x**2 / 2 + eps * math.log((1 - eps) / math.sqrt(2 * math.pi * eps)))


def test_initial_potential_examples():
    g = Grid1D(-3, 3, 61)
    u = initial_potential(InitialData(0.5, 0.0, 1.0), 0.04, g)
    np.testing.assert_allclose(u.values, -g.x**2 / 2 + 0.04 * math.log(5.0), atol=1e-15)
    init = InitialData(0.5, 0.3, math.sqrt(0.04))
    np.testing.assert_allclose(initial_potential(init, 0.04, g).values, init.u0(g.x), atol=1e-16)
    u = initial_potential(InitialData(0.5, 0.0, R_STAT), 0.01, g)
    assert u.values.max() == pytest.approx(0.01 * math.log(3.98942280401), rel=1e-10)


def test_compute_intake_examples():
    g = Grid1D(-6, 6, 6001)
    assert compute_intake(steady(0.05, g), ONE, 0.05) == pytest.approx(0.95, abs=1e-8)
    u = GridField(Grid1D(-4, 4, 8001), -Grid1D(-4, 4, 8001).x ** 2 / 2)
    base = compute_intake(u, ONE, 0.01)
    assert base == pytest.approx(math.sqrt(2 * math.pi * 0.01), rel=1e-9)
    assert compute_intake(u + 0.01 * math.log(2.0), ONE, 0.01) == pytest.approx(2 * base, rel=1e-12)


def test_compute_intake_weighted_quadrature():
    psi = WeightFunction("smooth", 1.0, 0.4, 0.2, 0.5)
    g = Grid1D(-3, 3, 3001)
    eps = 0.05
    u = GridField(g, -(g.x - 0.1) ** 2)
    ref, _ = integrate.quad(lambda x: float(psi(x)) * math.exp(-(x - 0.1) ** 2 / eps), -3, 3,
                            points=[0.1], epsabs=1e-14)
    assert compute_intake(u, psi, eps) == pytest.approx(ref, rel=1e-9)


def test_stability_limit_and_depth():
    assert stability_limit(0.05, 0.01, 0.0) == pytest.approx(0.4 * 1e-4 / 0.1)
    assert stability_limit(0.05, 0.01, 10.0) == pytest.approx(0.4 * 0.01 / 20.0)
    assert boundary_depth(0.01) == pytest.approx(20 * 0.01 * math.log(100))
    assert boundary_depth(0.5) == pytest.approx(10.0)


def test_config_validation():
    g = Grid1D(-1, 1, 21)
    with pytest.raises(ValidationError):
        EpsConfig(0.0, 1.0, 1e-3, g)
    with pytest.raises(ValidationError):
        EpsConfig(0.1, 1.0, 3e-3, g)
    with pytest.raises(ValidationError):
        EpsConfig(0.1, 1.0, 1e-3, g, flux="upwind")
    cfg = EpsConfig(0.1, 1.0, 1e-3, g, 10)
    assert cfg.n_steps == 1000 and cfg.snapshot_dt == pytest.approx(0.01)


def test_make_config_rejects_unstable_dt():
    g = Grid1D(-6, 6, 6001)
    u0 = steady(0.05, g).values
    with pytest.raises(ValidationError, match="stability"):
        make_eps_config(0.05, 1.0, g, u0, 0.01, dt=1e-3)
    cfg = make_eps_config(0.05, 1.0, g, u0, 0.01)
    assert cfg.dt <= stability_limit(0.05, g.h, 6.0) * (1 + 1e-12)
    assert cfg.snapshot_dt == pytest.approx(0.01)


def test_run_eps_rejects_unstable_config():
    g = Grid1D(-6, 6, 1201)
    cfg = EpsConfig(0.05, 0.01, 1e-3, g, 1)
    with pytest.raises(ValidationError):
        run_eps(cfg, P0, ONE, InitialData(0.5, 0.0, R_STAT))


def test_zero_rate_fixed_point():
    g = Grid1D(-1, 1, 41)
    flat = GrowthModel(0.0, 0.0, 0.0)
    cfg = EpsConfig(0.1, 1e-3, 1e-3, g)
    u = advance_eps(GridField(g, np.zeros(g.n)), 0.0, cfg, flat, ONE)
    np.testing.assert_array_equal(u.values, 0.0)


def test_single_step_arithmetic():
    # quadratic u is differentiated exactly, so the Heun update is a constant shift
    g = Grid1D(-5, 5, 1001)
    eps, dt, c = 0.05, 1e-4, -0.02
    u = GridField(g, -g.x**2 / 2 + c)
    I1 = math.exp(c / eps) * math.sqrt(2 * math.pi * eps)
    k1 = 1 - eps - I1
    I2 = I1 * math.exp(dt * k1 / eps)
    k2 = 1 - eps - I2
    new = advance_eps(u, 0.0, EpsConfig(eps, dt, dt, g), P0, ONE)
    np.testing.assert_allclose(new.values - u.values, 0.5 * dt * (k1 + k2), atol=1e-12)


def test_steady_state_one_step_residual():
    g = Grid1D(-6, 6, 12001)
    u = steady(0.05, g)
    new = advance_eps(u, 0.0, EpsConfig(0.05, 1e-5, 1e-5, g), P0, ONE)
    assert np.abs(new.values - u.values).max() <= 1e-8


def test_steady_run_prepared():
    g = Grid1D(-6, 6, 3001)
    init = InitialData(0.5, 0.0, R_STAT)
    eps = 0.05
    cfg = make_eps_config(eps, 1.0, g, steady(eps, g).values, 0.01)
    tr = run_eps(cfg, P0, ONE, init, r=(1 - eps) * R_STAT)
    assert np.abs(tr.I_series - 0.95).max() <= 1e-5
    assert np.abs(tr.x_series).max() <= 1e-8
    rep = check_bounds(tr, P0, init)
    assert rep.ok, rep.rows
    _, _, worst_lo, _ = rep.get("concavity_lower")
    _, _, worst_hi, _ = rep.get("concavity_upper")
    assert worst_lo == pytest.approx(-1.0, abs=1e-6) and worst_hi == pytest.approx(-1.0, abs=1e-6)


def test_literal_stationary_datum_relaxes_to_one_minus_eps():
    # I_eps(0) = 1; the intake relaxes to 1 - eps over an O(eps) initial layer
    g = Grid1D(-6, 6, 3001)
    eps = 0.05
    init = InitialData(0.5, 0.0, R_STAT)
    cfg = make_eps_config(eps, 1.0, g, initial_potential(init, eps, g).values, 0.01)
    tr = run_eps(cfg, P0, ONE, init)
    assert tr.I_series[0] == pytest.approx(1.0, abs=1e-10)
    assert tr.I_series[-1] == pytest.approx(1 - eps, abs=1e-4)
    late = tr.times >= 0.5
    assert np.abs(tr.I_series[late] - (1 - eps)).max() < 1e-3
    assert np.all(np.diff(tr.I_series) <= 1e-14)


def test_intake_matches_snapshots():
    g = Grid1D(-3.5, 4, 751)
    init = InitialData(0.5, 0.5, 0.75 * R_STAT)
    cfg = make_eps_config(0.08, 0.2, g, initial_potential(init, 0.08, g).values, 0.01)
    tr = run_eps(cfg, P0, ONE, init)
    for j in range(tr.times.size):
        assert compute_intake(tr.field(j), ONE, 0.08) == tr.I_series[j]
    assert np.all(tr.I_series > 0)
    assert np.all(np.diff(tr.times) > 0)


def test_transient_tracks_limit_trait():
    g = Grid1D(-3.5, 4, 1501)
    init = InitialData(0.5, 0.5, 0.75 * R_STAT)
    eps = 0.02
    cfg = make_eps_config(eps, 1.0, g, initial_potential(init, eps, g).values, 0.01)
    tr = run_eps(cfg, P0, ONE, init)
    assert abs(tr.x_series[-1] - 0.5 * math.exp(-2.0)) <= 5 * eps


def test_spatial_convergence_of_intake():
    # the unperturbed transient stays exactly quadratic and has no spatial error at all
    m = GrowthModel(perturbation=Bump(0.2, 0.0, 0.6))
    init = InitialData(0.5, 0.5, 0.75 * R_STAT)
    eps = 0.08
    vals = []
    for n in (301, 601, 1201):
        g = Grid1D(-3.5, 4, n)
        cfg = make_eps_config(eps, 0.5, g, initial_potential(init, eps, g).values, 0.01, dt=2e-5)
        vals.append(run_eps(cfg, m, ONE, init).I_series[-1])
    d1, d2_ = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert d1 / d2_ >= 3.5


def test_boundary_contact_detected():
    g = Grid1D(-1.0, 1.5, 251)
    init = InitialData(0.5, 1.0, 0.5)
    cfg = make_eps_config(0.05, 0.1, g, initial_potential(init, 0.05, g).values, 0.01)
    with pytest.raises(BoundaryContactError):
        run_eps(cfg, P0, ONE, init)


def test_llf_flux_agrees_on_smooth_data():
    g = Grid1D(-3.5, 4, 751)
    init = InitialData(0.5, 0.5, 0.75 * R_STAT)
    u0 = initial_potential(init, 0.08, g).values
    a = run_eps(make_eps_config(0.08, 0.2, g, u0, 0.01), P0, ONE, init)
    b = run_eps(make_eps_config(0.08, 0.2, g, u0, 0.01, flux="llf"), P0, ONE, init)
    # the Lax-Friedrichs viscosity is O(h), here h = 0.01
    assert np.abs(a.I_series - b.I_series).max() < 5e-3
    assert np.abs(a.x_series - b.x_series).max() < 5e-3


def test_envelope_constants_p0():
    g = Grid1D(-6, 6, 1201)
    assert envelope_rates(P0, InitialData(0.5, 0.0), g) == pytest.approx((0.5, 0.5))


def test_concavity_violation_flagged():
    g = Grid1D(-3, 3, 601)
    init = InitialData(2.0, 0.0, 1.0)
    cfg = make_eps_config(0.05, 0.1, g, initial_potential(init, 0.05, g).values, 0.01)
    tr = run_eps(cfg, P0, ONE, init)
    # datum curvature -4 is checked against the P0 envelope of L1 = 1/2
    rep = check_bounds(tr, P0, InitialData(0.5, 0.0))
    assert rep.get("concavity_lower")[1] > 0
    assert not rep.ok


def test_diagnostics_csv(tmp_path):
    g = Grid1D(-3.5, 4, 751)
    init = InitialData(0.5, 0.5, 0.75 * R_STAT)
    tr = run_eps(make_eps_config(0.08, 0.1, g, initial_potential(init, 0.08, g).values, 0.01), P0, ONE, init)
    check_bounds(tr, P0, init).to_csv(tmp_path / "d.csv")
    tr.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,I_eps,x_eps,max_u"
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 8


@settings(max_examples=15, deadline=None)
@given(amp=st.floats(-0.15, 0.15), xc=st.floats(-0.5, 0.5))
def test_intake_stays_positive_and_bounded(amp, xc):
    m = GrowthModel(perturbation=Bump(amp, 0.0, 0.6))
    g = Grid1D(-4, 4, 401)
    init = InitialData(0.5, xc, 0.5)
    eps = 0.1
    tr = run_eps(make_eps_config(eps, 0.2, g, initial_potential(init, eps, g).values, 0.05), m, ONE, init)
    assert np.all(tr.I_series > 0)
    rep = check_bounds(tr, m, init)
    assert rep.get("intake_positive")[1] == 0
    assert np.all(d2(tr.u_snapshots[-1], g.h)[np.abs(g.x - tr.x_series[-1]) < 1] < 0)
