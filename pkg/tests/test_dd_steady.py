import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import cases
from unitcell_dg.dd_steady import (DDProblem, assemble_dd, boundary_flux, contact_potential,
                                   equilibrium_contact_densities, gummel_solve,
                                   lax_friedrichs_flux, solve_dd)
from unitcell_dg.dgcore import build_operators, reference_element
from unitcell_dg.linalg import LinearSolverHandle
from unitcell_dg.mesh import StructuredSpec, build_structured, pair_periodic_faces

DIRECT = LinearSolverHandle(method="direct")


def test_lf_alpha_example():
    # v-.n = 1, v+.n = -3: alpha = 1.5
    f = lax_friedrichs_flux(1.0, 0.0, [1.0], [-3.0], [1.0])
    assert f == pytest.approx(0.5 * 1.0 + 1.5 * 1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.floats(-5, 5), v=st.floats(-5, 5), ang=st.floats(0, 6.3))
def test_lf_consistency(n, v, ang):
    nrm = np.array([np.cos(ang), np.sin(ang)])
    vv = np.array([v, 0.3 * v])
    assert lax_friedrichs_flux(n, n, vv, vv, nrm) == pytest.approx(n * vv @ nrm, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), v=st.floats(0.01, 5))
def test_lf_upwind_constant_velocity(a, b, v):
    assert lax_friedrichs_flux(a, b, [v], [v], [1.0]) == pytest.approx(v * a, abs=1e-12)
    assert lax_friedrichs_flux(a, b, [v], [v], [-1.0]) == pytest.approx(-v * b, abs=1e-12)


def test_contact_densities():
    ne, nh = equilibrium_contact_densities(0.0, 9e6)
    assert ne == nh == pytest.approx(9e6)
    ne, nh = equilibrium_contact_densities(1.3e16, 9e6)
    assert ne == pytest.approx(1.3e16, rel=1e-12)
    assert nh == pytest.approx(6.2308e-3, rel=1e-4)
    ne, _ = equilibrium_contact_densities(18e6, 9e6)
    assert ne == pytest.approx(9e6 * (1 + math.sqrt(2)), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(C=st.floats(-1e18, 1e18), ni=st.floats(1.0, 1e10))
def test_mass_action(C, ni):
    ne, nh = equilibrium_contact_densities(C, ni)
    assert ne * nh == pytest.approx(ni * ni, rel=1e-9)
    assert ne > 0 and nh > 0


def test_contact_potential():
    assert contact_potential(3.0, 9e6, 9e6) == 3.0
    assert contact_potential(10.0, math.e, 1.0, 0.02585) == pytest.approx(10.02585)
    # V_T ln(1.3e16 / 9e6), evaluated by hand
    assert contact_potential(0.0, 1.3e16, 9e6, 0.02585) == pytest.approx(0.5452, abs=1e-4)


def line(h, p, L=1.0):
    m = build_structured(StructuredSpec(extent=((0, L),), h=h))
    return m, build_operators(m, reference_element(1, p))


def test_constant_dirichlet_solution():
    _, ops = line(0.1, 3)
    prob = DDProblem(ops, d=0.7, v=0.0, robin=(), dirichlet={"x_min": 4.0, "x_max": 4.0})
    n = solve_dd(assemble_dd(prob), DIRECT)
    assert np.allclose(n, 4.0, rtol=1e-10)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_periodic_manufactured_order(p):
    errs = []
    for K in (8, 16, 32):
        m, ops = line(1.0 / K, p)
        x = ops.x[:, 0]
        exact = np.cos(2 * np.pi * x)
        prob = DDProblem(ops, d=1.0, v=0.0, k=1.0, s=(1 + 4 * np.pi ** 2) * exact, robin=())
        n = solve_dd(assemble_dd(prob, [pair_periodic_faces(m, "x")]), DIRECT)
        errs.append(ops.l2_norm(n - exact))
    assert np.all(np.abs(cases.rates(errs) - (p + 1)) < 0.25)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_boundary_layer_order(p):
    d, v = 0.2, 1.0
    errs = []
    for K in (8, 16, 32):
        _, ops = line(1.0 / K, p)
        x = ops.x[:, 0]
        exact = np.expm1(v * x / d) / np.expm1(v / d)
        prob = DDProblem(ops, d=d, v=v, robin=(), dirichlet={"x_min": 0.0, "x_max": 1.0})
        n = solve_dd(assemble_dd(prob), DIRECT)
        errs.append(ops.l2_norm(n - exact))
    assert np.all(cases.rates(errs)[-1:] > p + 1 - 0.25)


def test_untagged_face_rejected():
    _, ops = line(0.25, 1)
    with pytest.raises(ValueError):
        assemble_dd(DDProblem(ops, d=1.0, v=0.0, robin=()))


def test_invalid_problem():
    _, ops = line(0.25, 1)
    with pytest.raises(ValueError):
        DDProblem(ops, d=0.0, v=0.0)
    with pytest.raises(ValueError):
        DDProblem(ops, d=1.0, v=np.nan)


def test_boundary_flux_balance():
    _, ops = line(0.1, 2)
    prob = DDProblem(ops, d=0.3, v=0.8, robin=(), dirichlet={"x_min": 1.0, "x_max": 2.0})
    sys_ = assemble_dd(prob)
    n = solve_dd(sys_, DIRECT)
    assert abs(boundary_flux(sys_, prob, n)) < 1e-9


def test_gummel_equilibrium():
    dev, st = cases.equilibrium()
    assert st.converged and st.iterations <= 2
    ne, nh = equilibrium_contact_densities(1.3e16, 9e6)
    assert np.abs(st.state.n_e / ne - 1).max() < 1e-10
    assert np.abs(st.state.n_h / nh - 1).max() < 1e-10
    assert np.ptp(st.state.phi) < 1e-10


def test_gummel_biased_cell_restart():
    dev, st = cases.biased_cell()
    assert st.converged
    assert st.state.n_e.min() >= 0 and st.state.n_h.min() >= 0
    assert st.phi_drop == pytest.approx(0.18 * 10 / 2.7)
    again = gummel_solve(dev, tol=1e-5, initial=st.state)
    assert again.iterations <= 1
    assert max(again.history[-1][k] for k in ("update_phi", "update_n_e", "update_n_h")) < 1e-5


def test_gummel_residuals_small():
    _, st = cases.biased_cell()
    assert all(r <= 10 * 1e-10 for r in st.residuals.values())


def test_gummel_rejects_bad_tol():
    dev, _ = cases.equilibrium()
    with pytest.raises(ValueError):
        gummel_solve(dev, tol=-1.0)


def test_diode_oracle():
    mismatch, step, st = cases.diode_mismatch()
    assert st.converged
    assert step == pytest.approx(0.02585 * math.log(10), rel=1e-9)
    assert mismatch < 0.01
