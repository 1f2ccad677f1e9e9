"""Stationary drift-diffusion and the Gummel loop.

Carrier transport is written with the physical drift velocity ``v``
(``v_e = -mu_e E``, ``v_h = +mu_h E``):

    div(d q - v n) = R - G,    q = grad(n)

Drift uses the local Lax-Friedrichs flux, diffusion the alternate flux.
Internal units: um, ps, V, densities in cm^-3.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import constants as const
from . import ldg, poisson
from .dgcore import BOUNDARY, Operators, build_operators, reference_element
from .linalg import LinearSolverHandle, gmres_solve
from .materials import MaterialParams, mobility, recombination_weight_internal
from .mesh import Mesh, pair_periodic_faces

log = logging.getLogger(__name__)

ROBIN_TAGS = ("z_top", "z_bottom")


# --------------------------------------------------------------------------
# closed-form helpers

def lax_friedrichs_flux(n_minus, n_plus, v_minus, v_plus, normal):
    """Normal LF flux ``n.(vn)* = n.{vn} + alpha (n- - n+)``.

    ``alpha = max(|n.v-|, |n.v+|)/2``; vectors carry components last.
    """
    nm, npl = np.asarray(n_minus, float), np.asarray(n_plus, float)
    nrm = np.asarray(normal, float)
    vm = np.sum(np.asarray(v_minus, float) * nrm, axis=-1)
    vp = np.sum(np.asarray(v_plus, float) * nrm, axis=-1)
    alpha = 0.5 * np.maximum(np.abs(vm), np.abs(vp))
    return 0.5 * (vm * nm + vp * npl) + alpha * (nm - npl)


def lf_alpha(vn_minus, vn_plus):
    return 0.5 * np.maximum(np.abs(vn_minus), np.abs(vn_plus))


def equilibrium_contact_densities(C, n_i):
    """Charge-neutral equilibrium densities for net doping ``C``."""
    if np.any(np.asarray(n_i) <= 0):
        raise ValueError("n_i must be positive")
    C = np.asarray(C, dtype=float)
    # cancellation-free form for either sign of C
    root = np.sqrt(C * C + 4.0 * n_i * n_i)
    with np.errstate(divide="ignore"):
        n_e = np.where(C >= 0, 0.5 * (C + root), 2.0 * n_i * n_i / (root - C))
    n_h = n_i * n_i / n_e
    if n_e.ndim == 0:
        return float(n_e), float(n_h)
    return n_e, n_h


def contact_potential(v_el, n_e_surface, n_i, v_t=const.THERMAL_VOLTAGE_300K):
    """Ohmic-contact potential ``V_el + V_T ln(n_s / n_i)``."""
    if np.any(np.asarray(n_e_surface) <= 0) or np.any(np.asarray(n_i) <= 0):
        raise ValueError("densities must be positive")
    return v_el + v_t * np.log(np.asarray(n_e_surface) / n_i)


# --------------------------------------------------------------------------
# one carrier equation

@dataclass
class DDProblem:
    """Linearized steady carrier equation on the semiconductor mesh.

    ``d`` nodal diffusion [um^2/ps]; ``v`` nodal velocity (n_nodes, dim)
    [um/ps]; the net source is ``k n - s`` [cm^-3/ps].  ``robin`` tags get a
    total outward flux ``f_robin``; ``dirichlet`` maps tags to densities.
    """

    ops: Operators
    d: np.ndarray
    v: np.ndarray
    k: np.ndarray | float = 0.0
    s: np.ndarray | float = 0.0
    carrier: str = "electron"
    robin: tuple[str, ...] = ROBIN_TAGS
    f_robin: float | np.ndarray = 0.0
    dirichlet: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.ops.n_nodes
        self.d = np.broadcast_to(np.asarray(self.d, float), (n,)).copy()
        self.v = np.broadcast_to(np.asarray(self.v, float).reshape(-1, self.ops.dim)
                                 if np.ndim(self.v) else np.asarray(self.v, float),
                                 (n, self.ops.dim)).copy()
        self.k = np.broadcast_to(np.asarray(self.k, float), (n,)).copy()
        self.s = np.broadcast_to(np.asarray(self.s, float), (n,)).copy()
        if np.any(~(self.d > 0)):
            raise ValueError("diffusion coefficient must be positive")
        if not np.all(np.isfinite(self.v)):
            raise ValueError("drift velocity must be finite")
        if self.carrier not in ("electron", "hole"):
            raise ValueError(f"unknown carrier {self.carrier!r}")


def dd_rules(ops: Operators, conn, robin, dirichlet) -> ldg.FaceRules:
    modes = {t: ldg.NEUMANN for t in robin}
    modes.update({t: ldg.DIRICHLET for t in dirichlet})
    return ldg.face_rules(ops, conn, modes)


def drift_operator(ops: Operators, rules: ldg.FaceRules, v: np.ndarray, n_dirichlet=None):
    """Sparse LF discretization of ``div(v n)`` plus its affine part."""
    conn = rules.conn
    SM, SP = ops.SM, ops.SP(conn)
    vm = SM @ v
    vp = SP @ v
    connected = rules.mode == ldg.CONNECTED
    vp = np.where(connected[:, None], vp, vm)
    vnm = np.sum(vm * ops.normals, axis=1)
    vnp = np.sum(vp * ops.normals, axis=1)
    alpha = lf_alpha(vnm, vnp)
    am = 0.5 * vnm - alpha
    ap = alpha - 0.5 * vnp
    robin = rules.mode == ldg.NEUMANN
    am[robin] = vnm[robin]
    ap[robin] = 0.0
    dirich = rules.mode == ldg.DIRICHLET
    ap_lin = np.where(connected, ap, 0.0)
    A = sum(ops.D(nu) @ sp.diags(v[:, nu]) for nu in range(ops.dim))
    A = A - ops.LIFT @ sp.diags(ops.fscale * am) @ SM - ops.LIFT @ sp.diags(ops.fscale * ap_lin) @ SP
    aff = np.zeros(ops.n_nodes)
    if n_dirichlet is not None:
        nd = np.where(dirich, n_dirichlet, 0.0)
        aff = -(ops.LIFT @ (ops.fscale * ap * nd))
    return A.tocsr(), aff


@dataclass
class DDSystem:
    """Block layout ``[[C, Div d], [-G, M]] [n; q] = b`` plus the reduced
    matrix ``A n = r`` obtained by eliminating q (both mass-weighted)."""

    A_full: sp.csr_matrix
    b_full: np.ndarray
    A: sp.csr_matrix
    r: np.ndarray
    parts: dict

    def residual(self, n: np.ndarray) -> float:
        x = np.concatenate([n] + self.flux_q(n))
        bn = np.linalg.norm(self.b_full)
        res = np.linalg.norm(self.A_full @ x - self.b_full)
        return res / bn if bn > 0 else res

    def flux_q(self, n: np.ndarray) -> list[np.ndarray]:
        return [Gv @ n + gv for Gv, gv in zip(self.parts["G"], self.parts["gaff"])]


def assemble_dd(problem: DDProblem, pairings=()) -> DDSystem:
    """Assemble the carrier equation ``div(d q - v n) - k n + s = 0``."""
    ops = problem.ops
    conn = ops.connect([p for p in pairings if p is not None])
    rules = dd_rules(ops, conn, problem.robin, problem.dirichlet)
    nd = np.zeros(ops.n_face_nodes)
    for t, val in problem.dirichlet.items():
        nd[conn.tag == t] = val
    G, gaff = ldg.gradient(ops, rules, nd)
    Div, daff = ldg.divergence(ops, rules, problem.f_robin)
    Dr, draff = drift_operator(ops, rules, problem.v, nd)
    P, paff = ldg.dirichlet_penalty(ops, rules, problem.d, nd)
    M = ops.M
    dd = sp.diags(problem.d)
    C = -Dr - sp.diags(problem.k) - P
    rhs = -daff + draff - problem.s + paff
    full = sp.bmat([[M @ C] + [M @ Dv @ dd for Dv in Div]]
                   + [[-(M @ Gv)] + [M if j == i else None for j in range(ops.dim)]
                      for i, Gv in enumerate(G)], format="csr")
    b_full = np.concatenate([M @ rhs] + [M @ gv for gv in gaff])
    A = C.copy()
    r = rhs.copy()
    for Dv, Gv, gv in zip(Div, G, gaff):
        A = A + Dv @ dd @ Gv
        r = r - Dv @ (problem.d * gv)
    return DDSystem(full, b_full, (M @ A).tocsr(), M @ r,
                    dict(G=G, gaff=gaff, Div=Div, daff=daff, drift=Dr, drift_aff=draff,
                         rules=rules, M=M))


def boundary_flux(system: DDSystem, problem: DDProblem, n: np.ndarray) -> float:
    """Net outward numerical flux ``n.(d q - v n)*`` over all boundary faces."""
    ops = problem.ops
    rules = system.parts["rules"]
    mode = rules.mode
    q = system.flux_q(n)
    SM = ops.SM
    nm = SM @ n
    nd = np.zeros(ops.n_face_nodes)
    for t, val in problem.dirichlet.items():
        nd[rules.conn.tag == t] = val
    diff = sum(ops.normals[:, nu] * (SM @ (problem.d * q[nu])) for nu in range(ops.dim))
    diff = diff - ops.fscale * (SM @ problem.d) * (nm - nd)        # Dirichlet penalty
    vn = np.sum((SM @ problem.v) * ops.normals, axis=1)
    drift = 0.5 * vn * (nm + nd) + 0.5 * np.abs(vn) * (nm - nd)
    flux = np.where(mode == ldg.DIRICHLET, diff - drift,
                    np.broadcast_to(np.asarray(problem.f_robin, float), nm.shape))
    bnd = (rules.conn.kind == BOUNDARY)
    return float(np.sum((face_weights(ops) * flux)[bnd]))


def face_weights(ops: Operators) -> np.ndarray:
    """Quadrature weight of every face node (physical measure)."""
    # column sums of the reference face-mass block M @ LIFT
    wref = (ops.ref.mass @ ops.ref.lift).sum(axis=0)
    return np.tile(wref, ops.K) * ops.sjac


def solve_dd(system: DDSystem, solver: LinearSolverHandle | None = None,
             x0=None, total: float | None = None) -> np.ndarray:
    """Solve the reduced carrier system.

    With ``total`` the integral of n is fixed through a bordered system,
    which regularizes contact-free cells where recombination alone barely
    pins the level.
    """
    solver = solver or LinearSolverHandle()
    A, r = system.A, system.r
    if total is None:
        return gmres_solve(A, r, solver, x0=x0)
    w = np.asarray(system.parts["M"].sum(axis=0)).ravel()
    scale = np.abs(A).sum() / A.shape[0] / max(np.abs(w).mean(), 1e-300)
    wc = w * scale
    B = sp.bmat([[A, sp.csr_matrix(wc[:, None])], [sp.csr_matrix(wc[None, :]), None]],
                format="csr")
    rb = np.concatenate([r, [scale * total]])
    x0b = None if x0 is None else np.concatenate([x0, [0.0]])
    x = gmres_solve(B, rb, solver, x0=x0b)
    return x[:-1]


# --------------------------------------------------------------------------
# device and Gummel loop

@dataclass
class Device:
    """Geometry, materials and bias of a steady problem.

    ``periodic`` lists axes joined as seams; the x seam carries the drop
    ``w_x V_bias / w_sd`` when ``pdbc`` is set.  ``electrodes`` maps boundary
    tags to electrode voltages (ohmic contacts).
    """

    mesh: Mesh
    materials: dict[str, MaterialParams]
    p: int = 2
    v_bias: float = 0.0
    w_sd: float = 2.7
    periodic: tuple[str, ...] = ("x",)
    pdbc: bool = True
    electrodes: dict[str, float] = field(default_factory=dict)
    generation: np.ndarray | None = None     # cm^-3/ps on semiconductor nodes
    thermal_voltage: float = const.THERMAL_VOLTAGE_300K

    def __post_init__(self):
        missing = [r for r in self.mesh.region_names if r not in self.materials]
        if missing:
            raise ValueError(f"no material for regions {missing}")
        if not np.isfinite(self.v_bias):
            raise ValueError("V_bias must be finite")

    @cached_property
    def ref(self):
        return reference_element(self.mesh.dim, self.p)

    @cached_property
    def ops(self) -> Operators:
        return build_operators(self.mesh, self.ref)

    @cached_property
    def semi_regions(self) -> list[str]:
        return [r for r in self.mesh.region_names if self.materials[r].semiconductor]

    @cached_property
    def _sub(self):
        if not self.semi_regions:
            raise ValueError("device has no semiconductor region")
        return self.mesh.submesh(self.semi_regions)

    @property
    def semi_mesh(self) -> Mesh:
        return self._sub[0]

    @cached_property
    def semi_ops(self) -> Operators:
        return build_operators(self.semi_mesh, self.ref)

    @cached_property
    def semi_nodes(self) -> np.ndarray:
        """Full-mesh node index of every semiconductor node."""
        parent = self._sub[1]
        Np = self.ref.n_nodes
        return (parent[:, None] * Np + np.arange(Np)[None, :]).ravel()

    def pairings(self, mesh: Mesh):
        out = {}
        for a in self.periodic:
            tags = set(mesh.tags.ravel())
            if f"{a}_min" in tags and f"{a}_max" in tags:
                out[a] = pair_periodic_faces(mesh, a)
        return out

    @cached_property
    def full_pairings(self):
        return self.pairings(self.mesh)

    @cached_property
    def semi_pairings(self):
        return self.pairings(self.semi_mesh)

    @property
    def w_x(self) -> float:
        b = self.mesh.bounds()
        return float(b[0, 1] - b[0, 0])

    @property
    def phi_drop(self) -> float:
        if self.pdbc and "x" in self.full_pairings:
            return poisson.potential_drop(self.w_x, self.v_bias, self.w_sd)
        return 0.0

    def element_values(self, mesh: Mesh, attr) -> np.ndarray:
        names = mesh.region_names
        return np.array([attr(self.materials[names[r]]) for r in mesh.region])

    def semi_nodal(self, attr) -> np.ndarray:
        return np.repeat(self.element_values(self.semi_mesh, attr), self.ref.n_nodes)

    @cached_property
    def eps_static(self) -> np.ndarray:
        return self.element_values(self.mesh, lambda m: m.eps_r)

    @cached_property
    def doping(self) -> np.ndarray:
        return self.semi_nodal(lambda m: m.doping)

    @cached_property
    def n_i(self) -> np.ndarray:
        return self.semi_nodal(lambda m: m.n_i)

    def contact_data(self, mesh: Mesh, ops: Operators, conn) -> dict[str, tuple[float, float, float]]:
        """Per electrode tag: (n_e, n_h, phi) from the doping at the contact."""
        out = {}
        for tag, v_el in self.electrodes.items():
            sel = conn.tag == tag
            if not np.any(sel):
                raise ValueError(f"electrode tag {tag!r} not found on the mesh")
            elems = np.unique(ops.face_elem[sel])
            mats = {mesh.region_names[mesh.region[k]] for k in elems}
            if len(mats) != 1:
                raise ValueError(f"electrode {tag!r} touches several materials {sorted(mats)}")
            m = self.materials[mats.pop()]
            if not m.semiconductor:
                out[tag] = (np.nan, np.nan, v_el)
                continue
            ne, nh = equilibrium_contact_densities(m.doping, m.n_i)
            out[tag] = (ne, nh, float(contact_potential(v_el, ne, m.n_i, self.thermal_voltage)))
        return out


@dataclass
class GummelLinearization:
    """Standard Gummel linearization of the Poisson charge term.

    g = (q/eps0)(n + p)/V_T, f = (q/eps0)(p - n + C) + g phi_prev,
    densities converted from cm^-3 to um^-3.
    """

    def coefficients(self, n_e, n_h, doping, phi_prev, v_t):
        s = const.Q_OVER_EPS0_UM * const.CM3_TO_UM3
        g = s * (n_e + n_h) / v_t
        f = s * (n_h - n_e + doping) + g * phi_prev
        return g, f


@dataclass
class GummelState:
    iteration: int
    phi: np.ndarray            # full-mesh nodal potential [V]
    E: np.ndarray              # full-mesh nodal field (n, dim) [V/um]
    n_e: np.ndarray            # semiconductor nodes [cm^-3]
    n_h: np.ndarray
    g: np.ndarray | None = None
    f: np.ndarray | None = None
    updates: dict = field(default_factory=dict)


@dataclass
class SteadyState:
    device: Device
    state: GummelState
    converged: bool
    iterations: int
    history: list[dict]
    clamped: int
    phi_drop: float
    v_e: np.ndarray
    v_h: np.ndarray
    d_e: np.ndarray
    d_h: np.ndarray
    residuals: dict = field(default_factory=dict)

    @property
    def E_semi(self) -> np.ndarray:
        return self.state.E[self.device.semi_nodes]

    def write_history(self, path) -> None:
        write_history_csv(self.history, path)


HISTORY_COLUMNS = ("iteration", "update_phi", "update_n_e", "update_n_h",
                   "lin_iters_poisson", "lin_iters_e", "lin_iters_h")


def write_history_csv(history, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row[c] for c in HISTORY_COLUMNS])


def carrier_transport(device: Device, E_semi: np.ndarray):
    """Velocities and diffusivities (internal units) from the nodal field."""
    emag = np.linalg.norm(E_semi, axis=1) * const.FIELD_TO_V_PER_CM
    mu_e = mobility(device.semi_nodal(lambda m: m.electron.mu0),
                    device.semi_nodal(lambda m: m.electron.vsat),
                    device.semi_nodal(lambda m: m.electron.beta), emag)
    mu_h = mobility(device.semi_nodal(lambda m: m.hole.mu0),
                    device.semi_nodal(lambda m: m.hole.vsat),
                    device.semi_nodal(lambda m: m.hole.beta), emag)
    mu_e = mu_e * const.MOBILITY_TO_INTERNAL
    mu_h = mu_h * const.MOBILITY_TO_INTERNAL
    vt = device.thermal_voltage
    return -mu_e[:, None] * E_semi, mu_h[:, None] * E_semi, mu_e * vt, mu_h * vt


def recombination_weight(device: Device, n_e, n_h) -> np.ndarray:
    out = np.empty_like(n_e)
    names = device.semi_mesh.region_names
    reg = np.repeat(device.semi_mesh.region, device.ref.n_nodes)
    for r in np.unique(reg):
        sel = reg == r
        out[sel] = recombination_weight_internal(n_e[sel], n_h[sel], device.materials[names[r]])
    return out


def _rel_update(new, old, floor):
    return float(np.max(np.abs(new - old)) / max(np.max(np.abs(new)), floor))


def initial_state(device: Device) -> GummelState:
    ne, nh = equilibrium_contact_densities(device.doping, device.n_i)
    ne, nh = np.atleast_1d(ne), np.atleast_1d(nh)
    phi_semi = device.thermal_voltage * np.log(ne / device.n_i)
    phi = np.full(device.ops.n_nodes, float(np.mean(phi_semi)))
    phi[device.semi_nodes] = phi_semi
    return GummelState(0, phi, np.zeros((device.ops.n_nodes, device.mesh.dim)), ne.copy(), nh.copy())


def gummel_solve(device: Device, tol: float = 1e-5, max_iter: int = 300,
                 solver: LinearSolverHandle | None = None, relax: float = 1.0,
                 initial: GummelState | None = None,
                 linearization: GummelLinearization | None = None) -> SteadyState:
    """Self-consistent steady state by Gummel iteration.

    Each pass solves the linearized Poisson equation on the whole mesh,
    then the electron and hole equations on the semiconductor mesh.  The
    loop stops when the largest relative nodal update of phi, n_e and n_h
    drops below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0 < relax <= 1:
        raise ValueError("relaxation factor must be in (0, 1]")
    base = solver or LinearSolverHandle()
    mk = lambda: LinearSolverHandle(base.method, base.restart, base.tol, base.max_iter,  # noqa: E731
                                    base.preconditioner, base.reuse)
    h_phi, h_e, h_h = mk(), mk(), mk()
    lin = linearization or GummelLinearization()
    vt = device.thermal_voltage
    ops, sops = device.ops, device.semi_ops
    semi = device.semi_nodes
    full_pairs = device.full_pairings
    semi_pairs = tuple(device.semi_pairings.values())

    conn_full = ops.connect(tuple(full_pairs.values()))
    contacts = device.contact_data(device.mesh, ops, conn_full)
    poisson_bc = {t: c[2] for t, c in contacts.items()}
    semi_conn = sops.connect(semi_pairs)
    present = set(semi_conn.tag[semi_conn.kind == BOUNDARY])
    dd_e_bc = {t: c[0] for t, c in contacts.items() if t in present}
    dd_h_bc = {t: c[1] for t, c in contacts.items() if t in present}
    full_tags = set(conn_full.tag[conn_full.kind == BOUNDARY])
    neumann = tuple(sorted(full_tags - set(poisson_bc)))
    robin = tuple(sorted(present - set(dd_e_bc)))
    contact_free = not dd_e_bc

    st = initial or initial_state(device)
    phi, ne, nh = st.phi.copy(), st.n_e.copy(), st.n_h.copy()
    E = st.E.copy()
    doping, ni = device.doping, device.n_i
    gen = np.zeros(sops.n_nodes) if device.generation is None else np.asarray(device.generation)
    eps = device.eps_static
    history, clamped, converged = [], 0, False
    it = 0
    upd = {}
    g_full = f_full = None
    for it in range(1, max_iter + 1):
        g_full = np.zeros(ops.n_nodes)
        f_full = np.zeros(ops.n_nodes)
        g_s, f_s = lin.coefficients(ne, nh, doping, phi[semi], vt)
        g_full[semi], f_full[semi] = g_s, f_s
        prob = poisson.PoissonProblem(ops, eps, g_full, f_full, phi_drop=device.phi_drop,
                                      neumann=neumann, dirichlet=poisson_bc)
        sysp = poisson.assemble(prob, full_pairs.get("x"), full_pairs.get("y"))
        phi_f, E_f = poisson.solve(sysp, h_phi, x0=phi)
        phi_new = phi_f.flat()
        E_new = np.stack([E_f.data[..., c].ravel() for c in range(ops.dim)], axis=1)

        v_e, v_h, d_e, d_h = carrier_transport(device, E_new[semi])
        W = recombination_weight(device, ne, nh)
        pe = DDProblem(sops, d_e, v_e, k=nh * W, s=ni * ni * W + gen, carrier="electron",
                       robin=robin, dirichlet=dd_e_bc)
        syse = assemble_dd(pe, semi_pairs)
        total = sops.integrate(ne) if contact_free else None
        ne_new = solve_dd(syse, h_e, x0=ne, total=total)
        W = recombination_weight(device, np.maximum(ne_new, 0), nh)
        ph = DDProblem(sops, d_h, v_h, k=np.maximum(ne_new, 0) * W, s=ni * ni * W + gen,
                       carrier="hole", robin=robin, dirichlet=dd_h_bc)
        sysh = assemble_dd(ph, semi_pairs)
        nh_new = solve_dd(sysh, h_h, x0=nh)
        for arr in (ne_new, nh_new):
            neg = arr < 0
            if np.any(neg):
                clamped += int(neg.sum())
                arr[neg] = 0.0
        if contact_free:
            ne_new, nh_new = _neutralize(sops, ne_new, nh_new, doping)
        if relax < 1:
            phi_new = phi + relax * (phi_new - phi)
            ne_new = ne + relax * (ne_new - ne)
            nh_new = nh + relax * (nh_new - nh)
        upd = {"phi": _rel_update(phi_new, phi, vt),
               "n_e": _rel_update(ne_new, ne, 1e-300),
               "n_h": _rel_update(nh_new, nh, 1e-300)}
        history.append({"iteration": it, "update_phi": upd["phi"], "update_n_e": upd["n_e"],
                        "update_n_h": upd["n_h"], "lin_iters_poisson": h_phi.last_iterations,
                        "lin_iters_e": h_e.last_iterations, "lin_iters_h": h_h.last_iterations})
        log.info("gummel %d: dphi %.3e dne %.3e dnh %.3e", it, upd["phi"], upd["n_e"], upd["n_h"])
        phi, E, ne, nh = phi_new, E_new, ne_new, nh_new
        if not all(np.isfinite(list(upd.values()))):
            break
        if max(upd.values()) < tol:
            converged = True
            break
    if clamped:
        log.warning("clamped %d negative density values during Gummel iteration", clamped)
    if not converged:
        log.warning("Gummel iteration did not converge in %d iterations", it)
    v_e, v_h, d_e, d_h = carrier_transport(device, E[semi])
    state = GummelState(it, phi, E, ne, nh, g_full, f_full, upd)
    return SteadyState(device, state, converged, it, history, clamped, device.phi_drop,
                       v_e, v_h, d_e, d_h,
                       residuals={"poisson": h_phi.last_residual, "electron": h_e.last_residual,
                                  "hole": h_h.last_residual})


def _neutralize(ops: Operators, ne, nh, doping):
    """Rescale n_e by lambda and n_h by 1/lambda so the cell is neutral."""
    N, P, C = ops.integrate(ne), ops.integrate(nh), ops.integrate(doping)
    if N <= 0:
        return ne, nh
    lam = (C + np.sqrt(C * C + 4 * N * P)) / (2 * N)
    return ne * lam, nh / lam
