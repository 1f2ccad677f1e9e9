"""Acceptance criteria 1-9, one test each; every test records a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

import cases
from unitcell_dg.coupler import CoSimConfig, CoSimError
from unitcell_dg.dd_steady import equilibrium_contact_densities
from unitcell_dg.materials import GOLD_DRUDE, LTGAAS_LORENTZ, permittivity


def fmt(a):
    return "[" + ", ".join(f"{x:.3f}" for x in np.atleast_1d(a)) + "]"


def test_criterion_1_poisson_convergence(record):
    t0 = time.perf_counter()
    parts, ok = [], True
    for p in (1, 2, 3):
        r_phi, _ = cases.poisson_orders(p)
        ok &= bool(np.all(np.abs(r_phi - (p + 1)) <= 0.2))
        parts.append(f"p={p} {fmt(r_phi)}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    assert record(1, ok, f"phi L2 orders {'; '.join(parts)}; {elapsed:.1f} s")


def test_criterion_2_pdbc(record):
    drop = cases.pdbc_linear_drop(drop=1.0)
    tele = cases.pdbc_telescoping(N=3)
    ok = drop < 1e-8 and tele < 1e-8
    assert record(2, ok, f"E_x deviation {drop:.2e}, telescoping N=3 mismatch {tele:.2e} (limit 1e-8)")


def test_criterion_3_gummel(record):
    _, eq = cases.equilibrium()
    ne, nh = equilibrium_contact_densities(1.3e16, 9e6)
    err = max(np.abs(eq.state.n_e / ne - 1).max(), np.abs(eq.state.n_h / nh - 1).max())
    _, bar = cases.biased_bar()
    _, cell = cases.biased_cell()
    ok = (eq.converged and eq.iterations <= 2 and err < 1e-10
          and math.isclose(ne, 1.3e16, rel_tol=1e-3) and math.isclose(nh, 6.23e-3, rel_tol=1e-3)
          and bar.converged and bar.iterations <= 300 and cell.converged and cell.iterations <= 300)
    assert record(3, ok, f"equilibrium {eq.iterations} it, rel err {err:.1e}; "
                         f"0.3 V bar {bar.iterations} it, 10 V drop cell {cell.iterations} it (tol 1e-5)")


def test_criterion_4_maxwell(record):
    parts, ok = [], True
    for dim in (1, 2):
        for p in (1, 2, 3):
            r = cases.maxwell_orders(dim, p)
            ok &= bool(np.all(np.abs(r - (p + 1)) <= 0.2))
            parts.append(f"{dim}D p={p} {fmt(r)}")
    e = cases.energy_history(steps=10_000, chunk=1)
    rise = float(np.max(np.diff(e)) / e[0])
    ok &= rise <= 1e-13
    assert record(4, ok, f"E L2 orders {'; '.join(parts)}; 1e4 steps max energy rise {rise:.1e}")


def test_criterion_5_dispersive(record):
    w = 2 * math.pi * 375e12
    eps_d, eps_l = permittivity(GOLD_DRUDE, w), permittivity(LTGAAS_LORENTZ, w)
    ok = abs(eps_d - (-32.87 + 1.16j)) < 0.01 and abs(eps_l - (12.26 + 0.40j)) < 0.01
    parts = []
    for kind in ("drude", "lorentz"):
        r, fres = cases.half_space_reflection(kind)
        dev = abs(r - fres) / fres
        ok &= dev < 0.02
        parts.append(f"{kind} |r| {r:.5f} vs Fresnel {fres:.5f} ({100 * dev:.3f}%)")
    assert record(5, ok, "; ".join(parts))


def test_criterion_6_pml(record):
    db = cases.pml_reflection_db(layers=10)
    assert record(6, db < -40, f"10-element PML reflected energy {db:.1f} dB (limit -40 dB)")


def test_criterion_7_transient_dd(record):
    parts, ok = [], True
    for kind in ("advection", "diffusion"):
        for p in (1, 2, 3):
            r = cases.dd_orders(p, kind)
            ok &= bool(np.all(np.abs(r - (p + 1)) <= 0.2))
            parts.append(f"{kind} p={p} {fmt(r)}")
    mass = cases.mass_drift(steps=1000)
    tvd, lsrk = cases.tvd_slope(), cases.lsrk_slope()
    ok &= mass < 1e-10
    ok &= bool(np.all(np.abs(tvd - 3) <= 0.2)) and bool(np.all(np.abs(lsrk - 4) <= 0.2))
    assert record(7, ok, f"{'; '.join(parts)}; mass drift {mass:.1e}/1000 steps; "
                         f"TVD-RK3 {fmt(tvd)}; LSRK54 {fmt(lsrk)}")


def test_criterion_8_coupled(record):
    drift, J0, _ = cases.zero_pump_drift(T=1.0)
    f, _ = cases.beat(T=3.0, ratio=40)
    r5 = CoSimConfig(T=1.0, dt_em=4e-7, dt_dd=2e-6).ratio
    try:
        CoSimConfig(T=1.0, ratio=4.5)
        rejected = False
    except CoSimError:
        rejected = True
    ok = drift < 1e-8 and abs(f - 1.0) <= 0.05 and r5 == 5 and rejected
    assert record(8, ok, f"zero pump J_x drift {drift:.1e} (J_x {J0:.4g} A/cm^2); beat {f:.4f} THz; "
                         f"r from (4e-7, 2e-6) = {r5}; r = 4.5 rejected: {rejected}")


NOT_REPRODUCIBLE = ("3D photocurrent enhancement factor 5.9, absolute current levels of the 3D "
                    "device and core-hour comparisons are out of desk scale")


def test_criterion_9_substitute_oracle(record):
    mismatch, step, st = cases.diode_mismatch()
    ok = st.converged and mismatch < 0.01
    assert record(9, ok, f"not reproduced: {NOT_REPRODUCIBLE}; substitute 1D diode vs fine-grid "
                         f"finite-difference oracle: max |dphi| {100 * mismatch:.3f}% of the "
                         f"{1e3 * step:.2f} mV step (limit 1%)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
