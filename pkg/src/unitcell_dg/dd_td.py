"""Explicit transient drift-diffusion on the semiconductor mesh.

    dn/dt = div(d q - v n) - R + G,    q = grad(n)

with the same LDG/LF discretization as the stationary solver, so a
converged steady state is a discrete fixed point.  The drift term is
applied matrix-free because the velocity changes every stage.  Time
integration uses the three-stage Shu-Osher TVD Runge-Kutta scheme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import constants as const
from . import ldg
from .dd_steady import Device, SteadyState, dd_rules, lf_alpha, recombination_weight
from .dgcore import BOUNDARY, Operators
from .materials import mobility

log = logging.getLogger(__name__)

MOBILITY_POLICIES = ("frozen", "instantaneous")


class DensityNaNError(FloatingPointError):
    pass


@dataclass
class CarrierState:
    n_e: np.ndarray      # cm^-3 on semiconductor nodes
    n_h: np.ndarray
    t: float = 0.0

    def copy(self) -> "CarrierState":
        return CarrierState(self.n_e.copy(), self.n_h.copy(), self.t)


class CarrierOperator:
    """Time-independent pieces of one carrier equation.

    ``dirichlet`` maps tags to fixed densities, ``robin`` tags carry zero
    total normal flux.
    """

    def __init__(self, ops: Operators, conn, robin=(), dirichlet=None):
        dirichlet = dirichlet or {}
        self.ops = ops
        self.rules = dd_rules(ops, conn, robin, dirichlet)
        self.nd = np.zeros(ops.n_face_nodes)
        for t, val in dirichlet.items():
            self.nd[conn.tag == t] = val
        self.G, self.gaff = ldg.gradient(ops, self.rules, self.nd)
        self.Div, self.daff = ldg.divergence(ops, self.rules, 0.0)
        mode = self.rules.mode
        self.connected = mode == ldg.CONNECTED
        self.robin = mode == ldg.NEUMANN
        self.dirich = mode == ldg.DIRICHLET
        self.vm_idx = ops.vmap_m
        self.vp_idx = conn.vmap_p
        self.lift_fs = ops.LIFT @ sp.diags(ops.fscale)
        self.D = [ops.D(nu) for nu in range(ops.dim)]

    def gradient(self, n: np.ndarray) -> list[np.ndarray]:
        return [Gv @ n + gv for Gv, gv in zip(self.G, self.gaff)]

    def diffusion(self, d: np.ndarray, n: np.ndarray) -> np.ndarray:
        """div(d q) including the boundary penalty on Dirichlet faces."""
        q = self.gradient(n)
        out = sum(Dv @ (d * qv) for Dv, qv in zip(self.Div, q)) + self.daff
        if np.any(self.dirich):
            tau = np.where(self.dirich, self.ops.fscale * d[self.vm_idx], 0.0)
            out = out - self.lift_fs @ (tau * (n[self.vm_idx] - self.nd))
        return out

    def drift(self, v: np.ndarray, n: np.ndarray) -> np.ndarray:
        """LF discretization of div(v n) with boundary data (matrix-free)."""
        ops = self.ops
        vol = sum(Dv @ (v[:, nu] * n) for nu, Dv in enumerate(self.D))
        vm = v[self.vm_idx]
        vp = np.where(self.connected[:, None], v[self.vp_idx], vm)
        vnm = np.sum(vm * ops.normals, axis=1)
        vnp = np.sum(vp * ops.normals, axis=1)
        alpha = lf_alpha(vnm, vnp)
        am = 0.5 * vnm - alpha
        ap = alpha - 0.5 * vnp
        am = np.where(self.robin, vnm, am)
        ap = np.where(self.robin, 0.0, ap)
        nplus = np.where(self.connected, n[self.vp_idx], np.where(self.dirich, self.nd, 0.0))
        return vol - self.lift_fs @ (am * n[self.vm_idx] + ap * nplus)

    def rhs(self, n, v, d, sink, source) -> np.ndarray:
        return self.diffusion(d, n) - self.drift(v, n) - sink + source


def carrier_rhs(op: CarrierOperator, n, v, d, recomb=0.0, gen=0.0) -> np.ndarray:
    """dn/dt for one carrier given velocity, diffusivity and net rates."""
    return op.rhs(n, v, d, recomb, gen)


def tvdrk3_step(u, t: float, dt: float, rhs_fn):
    """Shu-Osher SSP-RK3 step for ``u' = rhs_fn(u, t)``; returns the new ``u``."""
    u = np.asarray(u, dtype=float)
    u1 = u + dt * rhs_fn(u, t)
    u2 = 0.75 * u + 0.25 * (u1 + dt * rhs_fn(u1, t + dt))
    return u / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs_fn(u2, t + 0.5 * dt))


class TransientDD:
    """Two-carrier transient model around a steady state.

    ``axes`` maps mesh axes to physical axes; fields passed in are physical
    3-vectors in V/um.  ``bias_field`` is a uniform extra field (for a 1D
    vertical stack with a lateral bias).  With ``balance`` the steady
    residual is subtracted so the steady state is an exact fixed point.
    """

    def __init__(self, device: Device, steady: SteadyState, mobility_policy: str = "instantaneous",
                 axes: tuple[int, ...] | None = None, bias_field=(0.0, 0.0, 0.0),
                 balance: bool = True):
        if mobility_policy not in MOBILITY_POLICIES:
            raise ValueError(f"mobility policy must be one of {MOBILITY_POLICIES}")
        self.device, self.steady = device, steady
        self.policy = mobility_policy
        dim = device.mesh.dim
        self.axes = tuple(axes or {1: (1,), 2: (0, 1)}[dim])
        ops = device.semi_ops
        self.ops = ops
        conn = ops.connect(tuple(device.semi_pairings.values()))
        full_conn = device.ops.connect(tuple(device.full_pairings.values()))
        contacts = device.contact_data(device.mesh, device.ops, full_conn)
        present = set(conn.tag[conn.kind == BOUNDARY])
        dir_e = {t: c[0] for t, c in contacts.items() if t in present}
        dir_h = {t: c[1] for t, c in contacts.items() if t in present}
        robin = tuple(sorted(present - set(dir_e)))
        self.op_e = CarrierOperator(ops, conn, robin, dir_e)
        self.op_h = CarrierOperator(ops, conn, robin, dir_h)
        n = ops.n_nodes
        self.E_static = np.zeros((n, 3))
        self.E_static[:, list(self.axes)] = steady.E_semi
        self.E_static += np.asarray(bias_field, float)[None, :]
        self._params = {k: device.semi_nodal(f) for k, f in (
            ("mu_e", lambda m: m.electron.mu0), ("vs_e", lambda m: m.electron.vsat),
            ("b_e", lambda m: m.electron.beta), ("mu_h", lambda m: m.hole.mu0),
            ("vs_h", lambda m: m.hole.vsat), ("b_h", lambda m: m.hole.beta))}
        self.mu_frozen = self._mobility(self.E_static)
        self.ni2 = device.n_i ** 2
        self.offset = (np.zeros(n), np.zeros(n))
        if balance:
            s0 = CarrierState(steady.state.n_e.copy(), steady.state.n_h.copy())
            self.offset = self.rhs(s0, None, None)
            log.info("steady residual removed: |dn_e/dt| %.3e, |dn_h/dt| %.3e cm^-3/ps",
                     np.abs(self.offset[0]).max(), np.abs(self.offset[1]).max())

    # ---- transport ---------------------------------------------------------
    def _mobility(self, E: np.ndarray):
        emag = np.linalg.norm(E, axis=1) * const.FIELD_TO_V_PER_CM
        p = self._params
        mu_e = mobility(p["mu_e"], p["vs_e"], p["b_e"], emag) * const.MOBILITY_TO_INTERNAL
        mu_h = mobility(p["mu_h"], p["vs_h"], p["b_h"], emag) * const.MOBILITY_TO_INTERNAL
        return mu_e, mu_h

    def total_field(self, E_em: np.ndarray | None) -> np.ndarray:
        return self.E_static if E_em is None else self.E_static + E_em

    def transport(self, E_em: np.ndarray | None = None):
        """Physical velocities (n, 3) [um/ps] and diffusivities [um^2/ps]."""
        E = self.total_field(E_em)
        mu_e, mu_h = self.mu_frozen if self.policy == "frozen" else self._mobility(E)
        vt = self.device.thermal_voltage
        return -mu_e[:, None] * E, mu_h[:, None] * E, mu_e * vt, mu_h * vt

    # ---- right-hand side ---------------------------------------------------
    def rhs(self, state: CarrierState, E_em: np.ndarray | None, gen: np.ndarray | None):
        v_e, v_h, d_e, d_h = self.transport(E_em)
        ax = list(self.axes)
        W = recombination_weight(self.device, np.maximum(state.n_e, 0), np.maximum(state.n_h, 0))
        R = W * (state.n_e * state.n_h - self.ni2)
        G = 0.0 if gen is None else gen
        dne = self.op_e.rhs(state.n_e, v_e[:, ax], d_e, R, G) - self.offset[0]
        dnh = self.op_h.rhs(state.n_h, v_h[:, ax], d_h, R, G) - self.offset[1]
        return dne, dnh

    def step(self, state: CarrierState, dt: float, E_em: np.ndarray | None = None,
             gen: np.ndarray | None = None) -> CarrierState:
        """One TVD-RK3 step with the field and generation frozen."""
        n = self.ops.n_nodes

        def f(u, t):
            de, dh = self.rhs(CarrierState(u[:n], u[n:], t), E_em, gen)
            return np.concatenate([de, dh])

        u = tvdrk3_step(np.concatenate([state.n_e, state.n_h]), state.t, dt, f)
        if not np.all(np.isfinite(u)):
            bad = int(np.nonzero(~np.isfinite(u))[0][0]) % n
            raise DensityNaNError(f"non-finite carrier density at t = {state.t + dt:.6g} ps "
                                  f"(element {bad // self.ops.Np})")
        return CarrierState(u[:n], u[n:], state.t + dt)

    def flux_gradients(self, state: CarrierState):
        """Physical-axis density gradients (n, 3) [cm^-3/um] of both carriers."""
        out = []
        for op, n in ((self.op_e, state.n_e), (self.op_h, state.n_h)):
            g = np.zeros((self.ops.n_nodes, 3))
            g[:, list(self.axes)] = np.stack(op.gradient(n), axis=1)
            out.append(g)
        return out

    def max_stable_dt(self, safety: float = 0.5) -> float:
        """Rough explicit limit from diffusion, drift and recombination."""
        ops = self.ops
        h = ops.element_min_size()
        p = ops.ref.p
        v_e, v_h, d_e, d_h = self.transport(None)
        vmax = max(np.abs(v_e).max(), np.abs(v_h).max(), 1e-30)
        dmax = max(d_e.max(), d_h.max(), 1e-30)
        dt_adv = h / (vmax * (2 * p + 1))
        dt_dif = h * h / (dmax * (p + 1) ** 4)
        return safety * min(dt_adv, dt_dif)
