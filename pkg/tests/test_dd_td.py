import math

import numpy as np
import pytest

import cases
from unitcell_dg.dd_td import (CarrierState, DensityNaNError, TransientDD, carrier_rhs,
                               tvdrk3_step)


@pytest.fixture(scope="module")
def cell():
    return cases.biased_cell()


def test_constant_density_is_stationary():
    ops, op = cases._periodic_carrier(3, 8)
    n = np.full(ops.n_nodes, 4.2)
    v = np.full((ops.n_nodes, 1), 0.7)
    d = np.full(ops.n_nodes, 0.3)
    assert np.abs(carrier_rhs(op, n, v, d)).max() < 1e-10


def test_source_and_sink_enter_with_sign():
    ops, op = cases._periodic_carrier(2, 4)
    n = np.ones(ops.n_nodes)
    z = np.zeros((ops.n_nodes, 1))
    d = np.full(ops.n_nodes, 0.1)
    assert np.allclose(carrier_rhs(op, n, z, d, recomb=2.0, gen=5.0), 3.0)


@pytest.mark.parametrize("kind", ["advection", "diffusion"])
def test_p2_orders(kind):
    r = cases.dd_orders(2, kind)
    assert np.all(np.abs(r - 3) <= 0.2)


def test_advected_profile_stays_positive():
    err, mass, _ = cases.advection_error(3, 16, T=0.5)
    assert err < 1e-4 and mass < 1e-12


def test_tvdrk3_scalar_ode():
    y, t = 1.0, 0.0
    for _ in range(10):
        y = tvdrk3_step(y, t, 0.1, lambda w, s: -w)
        t += 0.1
    assert abs(float(y) - math.exp(-1)) < 1e-4


def test_tvdrk3_identity():
    u = np.array([1.0, 2.0, -3.0])
    assert np.array_equal(tvdrk3_step(u, 0.0, 0.5, lambda w, s: 0 * w), u)


def test_tvdrk3_order():
    assert np.all(np.abs(cases.tvd_slope() - 3) < 0.2)


def test_mass_conserved():
    assert cases.mass_drift(steps=200) < 1e-12


def test_steady_state_is_fixed_point(cell):
    dev, st = cell
    td = TransientDD(dev, st)
    s0 = CarrierState(st.state.n_e.copy(), st.state.n_h.copy())
    dt = td.max_stable_dt()
    s = s0
    for _ in range(20):
        s = td.step(s, dt)
    assert np.abs(s.n_e / s0.n_e - 1).max() < 1e-12
    assert s.t == pytest.approx(20 * dt)


def test_uniform_generation_is_carrier_symmetric(cell):
    dev, st = cell
    td = TransientDD(dev, st)
    s0 = CarrierState(st.state.n_e.copy(), st.state.n_h.copy())
    G = np.full(td.ops.n_nodes, 1e10)
    dne, dnh = td.rhs(s0, None, G)
    assert np.allclose(dne, G, rtol=1e-9) and np.allclose(dnh, G, rtol=1e-9)


def test_velocity_signs(cell):
    dev, st = cell
    td = TransientDD(dev, st)
    E = np.zeros((td.ops.n_nodes, 3))
    E[:, 0] = 1.0
    v_e, v_h, d_e, d_h = td.transport(E - td.E_static)
    assert np.all(v_e[:, 0] < 0) and np.all(v_h[:, 0] > 0)
    assert np.all(d_e > 0) and np.all(d_h > 0)


def test_mobility_policies(cell):
    dev, st = cell
    inst, frozen = TransientDD(dev, st), TransientDD(dev, st, mobility_policy="frozen")
    assert all(np.allclose(a, b) for a, b in zip(inst.transport(), frozen.transport()))
    big = np.zeros((inst.ops.n_nodes, 3))
    big[:, 1] = 50.0
    # a strong extra field saturates the instantaneous mobility only
    assert np.abs(inst.transport(big)[0]).max() < np.abs(frozen.transport(big)[0]).max()
    with pytest.raises(ValueError):
        TransientDD(dev, st, mobility_policy="lagged")


def test_nan_density_raises(cell):
    dev, st = cell
    td = TransientDD(dev, st)
    n_e = st.state.n_e.copy()
    n_e[td.ops.Np + 1] = np.nan
    with pytest.raises(DensityNaNError, match="element"):
        td.step(CarrierState(n_e, st.state.n_h.copy()), td.max_stable_dt())
