"""Time-domain DG Maxwell solver with upwind flux, PEC/absorbing/periodic
boundaries, a CFS-PML along the vertical axis, Drude/Lorentz media through
auxiliary polarization currents and a TF/SF plane-wave source.

State units: E in V/m, the scaled magnetic field H~ = eta0 H in V/m, time
in ps, lengths in um.  With c in um/ps the equations read

    eps_inf dE/dt = c curl H~ - Jp~ - J~,      mu_r dH~/dt = -c curl E

where J~ = J/eps0 (V/m/ps).  Lorentz poles add dJp~/dt = wp^2 E - g Jp~ -
wo^2 P~ and dP~/dt = Jp~ (frequencies in rad/ps); Drude drops the P~ term.

Fields are full 3-vectors.  Mesh axes map to physical axes through
``axes``; by default a 1D mesh is the vertical y axis and a 2D mesh spans
(x, y) with y vertical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from . import constants as const
from .dgcore import BOUNDARY, Operators, build_operators, reference_element
from .materials import MaterialParams
from .mesh import Mesh, pair_periodic_faces

log = logging.getLogger(__name__)

# Carpenter-Kennedy low-storage five-stage fourth-order coefficients
LSRK_A = np.array([0.0,
                   -567301805773.0 / 1357537059087.0,
                   -2404267990393.0 / 2016746695238.0,
                   -3550918686646.0 / 2091501179385.0,
                   -1275806237668.0 / 842570457699.0])
LSRK_B = np.array([1432997174477.0 / 9575080441755.0,
                   5161836677717.0 / 13612068292357.0,
                   1720146321549.0 / 2090206949498.0,
                   3134564353537.0 / 4481467310338.0,
                   2277821191437.0 / 14882151754819.0])
LSRK_C = np.array([0.0,
                   1432997174477.0 / 9575080441755.0,
                   2526269341429.0 / 6820363962896.0,
                   2006345519317.0 / 3224310063776.0,
                   2802321613138.0 / 2924317926251.0])

DEFAULT_AXES = {1: (1,), 2: (0, 1)}
COMP = {"x": 0, "y": 1, "z": 2}

LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI[_i, _j, _k] = 1.0
    LEVI[_i, _k, _j] = -1.0


class NaNError(FloatingPointError):
    def __init__(self, what: str, t: float, element: int):
        super().__init__(f"non-finite {what} at t = {t:.6g} ps (element {element})")
        self.t = t
        self.element = element


def upwind_flux(E_minus, E_plus, H_minus, H_plus, Z_minus, Z_plus, normal, alpha=1.0):
    """Upwind numerical traces ``(E*, H*)`` for 3-vectors (components last).

    E* = (2{YE} - a n x [[H]]) / (2{Y}),  H* = (2{ZH} + a n x [[E]]) / (2{Z})
    with [[u]] = u- - u+ and Y = 1/Z; ``alpha`` = 0 gives the central flux.
    """
    Em, Ep = np.asarray(E_minus, float), np.asarray(E_plus, float)
    Hm, Hp = np.asarray(H_minus, float), np.asarray(H_plus, float)
    n = np.asarray(normal, float)
    Zm, Zp = np.asarray(Z_minus, float)[..., None], np.asarray(Z_plus, float)[..., None]
    Ym, Yp = 1.0 / Zm, 1.0 / Zp
    E_star = (Ym * Em + Yp * Ep - alpha * np.cross(n, Hm - Hp)) / (Ym + Yp)
    H_star = (Zm * Hm + Zp * Hp + alpha * np.cross(n, Em - Ep)) / (Zm + Zp)
    return E_star, H_star


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PumpSpec:
    """Two-tone CW pump injected on a horizontal plane, travelling down.

    ``amplitude`` in V/m per tone; frequencies in THz; the envelope rises
    with a raised-cosine ramp lasting ``ramp_cycles`` mean optical cycles.
    """

    f1: float = 374.5
    f2: float = 375.5
    amplitude: float = 1e5
    polarization: str = "x"
    plane: float | None = None
    ramp_cycles: float = 2.0

    def __post_init__(self):
        if self.f1 == self.f2:
            raise ValueError("pump tones must differ (f1 != f2)")
        if self.ramp_cycles < 0:
            raise ValueError("ramp duration must be >= 0")
        if self.polarization not in COMP:
            raise ValueError(f"unknown polarization {self.polarization!r}")

    @property
    def ramp_time(self) -> float:
        return self.ramp_cycles * 2.0 / (self.f1 + self.f2)

    def waveform(self, t):
        return _two_tone(np.asarray(t, float), self.amplitude, self.f1, self.f2, self.ramp_time)


@numba.njit(cache=True)
def _two_tone_scalar(t, amp, f1, f2, tr):
    if amp == 0.0:
        return 0.0
    if t <= 0.0:
        return 0.0
    env = 1.0
    if tr > 0.0 and t < tr:
        env = 0.5 * (1.0 - np.cos(np.pi * t / tr))
    return amp * env * (np.cos(2 * np.pi * f1 * t) + np.cos(2 * np.pi * f2 * t))


def _two_tone(t, amp, f1, f2, tr):
    out = np.array([_two_tone_scalar(float(s), amp, f1, f2, tr) for s in np.ravel(t)])
    return out.reshape(np.shape(t)) if np.ndim(t) else float(out[0])


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian-modulated carrier injected on a horizontal plane (for probing)."""

    carrier: float = 375.0       # THz
    width: float = 0.01          # ps, 1/e half-width of the envelope
    delay: float = 0.04          # ps
    amplitude: float = 1.0
    polarization: str = "x"
    plane: float | None = None

    def waveform(self, t):
        t = np.asarray(t, float)
        out = self.amplitude * np.exp(-((t - self.delay) / self.width) ** 2) \
            * np.cos(2 * np.pi * self.carrier * (t - self.delay))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PMLSpec:
    """CFS-PML along the vertical axis in the named regions."""

    regions: tuple[str, ...] = ("pml",)
    order: int = 3
    reflection: float = 1e-6
    kappa_max: float = 1.0
    alpha_max: float = 0.0       # rad/ps

    def __post_init__(self):
        if not 0 < self.reflection < 1:
            raise ValueError("PML reflection target must be in (0, 1)")
        if self.order < 1 or self.kappa_max < 1 or self.alpha_max < 0:
            raise ValueError("invalid PML grading parameters")


@dataclass
class MaxwellConfig:
    p: int = 3
    boundary: dict[str, str] = field(default_factory=lambda: {
        "pml_outer": "pec", "z_top": "pec", "z_bottom": "pec", "y_min": "pec", "y_max": "pec",
        "x_min": "pec", "x_max": "pec", "electrode": "pec"})
    periodic: tuple[str, ...] = ()
    pml: PMLSpec | None = None
    alpha: float = 1.0
    polarization: str = "x"
    cfl: float = 0.5
    axes: tuple[int, ...] | None = None

    def __post_init__(self):
        bad = {v for v in self.boundary.values()} - {"pec", "abc"}
        if bad:
            raise ValueError(f"unknown boundary rules {sorted(bad)}")
        if not 0 <= self.alpha <= 1:
            raise ValueError("flux blend alpha must be in [0, 1]")
        if not self.cfl > 0:
            raise ValueError("CFL number must be positive")


@dataclass
class EMState:
    """Packed state vector and its time; use the solver accessors for fields."""

    u: np.ndarray
    t: float = 0.0

    def copy(self) -> "EMState":
        return EMState(self.u.copy(), self.t)


# --------------------------------------------------------------------------
# solver

class MaxwellSolver:
    """Assembles the semi-discrete operator ``du/dt = A u + w(t) b + j``."""

    def __init__(self, mesh: Mesh, materials: dict[str, MaterialParams], cfg: MaxwellConfig,
                 pump: PumpSpec | PulseSpec | None = None, ops: Operators | None = None):
        self.mesh, self.materials, self.cfg, self.pump = mesh, materials, cfg, pump
        missing = [r for r in mesh.region_names if r not in materials]
        if missing:
            raise ValueError(f"no material for regions {missing}")
        self.ops = ops or build_operators(mesh, reference_element(mesh.dim, cfg.p))
        self.axes = tuple(cfg.axes or DEFAULT_AXES[mesh.dim])
        self.vaxis = self.axes[-1]                 # physical vertical axis
        self._assemble()

    # ---- material tables --------------------------------------------------
    def _elem(self, fn) -> np.ndarray:
        names = self.mesh.region_names
        return np.array([fn(self.materials[names[r]]) for r in self.mesh.region], dtype=float)

    def _nodal(self, fn) -> np.ndarray:
        return np.repeat(self._elem(fn), self.ops.Np)

    # ---- assembly ----------------------------------------------------------
    def _active(self) -> tuple[list[int], list[int]]:
        ax = self.axes
        seed = COMP[self.cfg.polarization]
        actE, actH = {seed}, set()
        changed = True
        while changed:
            changed = False
            for c in list(actE):
                for a in ax:
                    for b in range(3):
                        if LEVI[c, a, b] and b not in actH:
                            actH.add(b)
                            changed = True
            for c in list(actH):
                for a in ax:
                    for b in range(3):
                        if LEVI[c, a, b] and b not in actE:
                            actE.add(b)
                            changed = True
        return sorted(actE), sorted(actH)

    def _assemble(self) -> None:
        ops, mesh, cfg = self.ops, self.mesh, self.cfg
        n, nfn, dim = ops.n_nodes, ops.n_face_nodes, ops.dim
        pairs = [pair_periodic_faces(mesh, a) for a in cfg.periodic]
        conn = ops.connect(pairs)
        self.conn = conn
        eps_e = self._elem(lambda m: m.eps_optical)
        mu_e = self._elem(lambda m: m.mu_r)
        Z_e = np.sqrt(mu_e / eps_e)
        fe = ops.face_elem
        pe = conn.vmap_p // ops.Np
        Zm = Z_e[fe]
        connected = conn.kind != BOUNDARY
        Zp = np.where(connected, Z_e[pe], Zm)
        rule = np.array(["" if c else cfg.boundary.get(t, None) for c, t in zip(connected, conn.tag)],
                        dtype=object)
        for i in np.nonzero(~connected)[0]:
            if rule[i] is None:
                raise ValueError(f"boundary tag {conn.tag[i]!r} has no Maxwell rule")
        pec = rule == "pec"
        abc = rule == "abc"
        cEm = np.where(pec, 2.0, 1.0)
        cEp = np.where(connected, 1.0, 0.0)
        cHm = np.where(pec, 0.0, 1.0)
        cHp = np.where(connected, 1.0, 0.0)
        del abc

        # TF/SF: face nodes on the injection plane (interior faces only)
        ncol = 6 * n + 1
        src = 6 * n
        s_tfsf = np.zeros(nfn)
        self.pol = np.zeros(3)
        self.hinc = np.zeros(3)
        if self.pump is not None and self.pump.plane is not None:
            vm = dim - 1
            xf = ops.face_coordinates()[:, vm]
            on = connected & (np.abs(xf - self.pump.plane) < 1e-9 * max(1.0, abs(self.pump.plane))) \
                & (np.abs(np.abs(ops.normals[:, vm]) - 1.0) < 1e-9)
            # all nodes of the face must lie on the plane
            onf = on.reshape(-1, ops.Nfp).all(axis=1).repeat(ops.Nfp)
            if not onf.any():
                raise ValueError(f"TF/SF plane {self.pump.plane} does not coincide with element faces")
            cent = mesh.centroids()[fe, vm]
            s_tfsf = np.where(onf, np.where(cent < self.pump.plane, -1.0, 1.0), 0.0)
            self.pol[COMP[self.pump.polarization]] = 1.0
            k = np.zeros(3)
            k[self.vaxis] = -1.0
            Zinc = float(np.mean(Zm[onf]))
            self.hinc = np.cross(k, self.pol) / Zinc

        SM, SP = ops.SM, ops.SP(conn)

        def place(mat, block):
            m = sp.csr_matrix(mat)
            return sp.csr_matrix((m.data, m.indices + block * n, m.indptr), shape=(m.shape[0], ncol))

        def src_col(vec):
            rows = np.nonzero(vec)[0]
            return sp.csr_matrix((vec[rows], (rows, np.full(rows.size, src))), shape=(nfn, ncol))

        JE = [place(sp.diags(cEm) @ SM - sp.diags(cEp) @ SP, b) + src_col(s_tfsf * self.pol[b])
              for b in range(3)]
        JH = [place(sp.diags(cHm) @ SM - sp.diags(cHp) @ SP, 3 + b) + src_col(s_tfsf * self.hinc[b])
              for b in range(3)]
        n3 = np.zeros((nfn, 3))
        for nu, a in enumerate(self.axes):
            n3[:, a] = ops.normals[:, nu]
        al = cfg.alpha
        wZ = sp.diags(Zp / (Zm + Zp))
        iZ = sp.diags(1.0 / (Zm + Zp))
        Ym, Yp = 1.0 / Zm, 1.0 / Zp
        wY = sp.diags(Yp / (Ym + Yp))
        iY = sp.diags(1.0 / (Ym + Yp))

        def cross_n(J):
            out = []
            for b in range(3):
                acc = sp.csr_matrix((nfn, ncol))
                for a in range(3):
                    for d in range(3):
                        if LEVI[b, a, d]:
                            acc = acc + sp.diags(LEVI[b, a, d] * n3[:, a]) @ J[d]
                out.append(acc)
            return out

        nxJE, nxJH = cross_n(JE), cross_n(JH)
        dH = [wZ @ JH[b] - al * (iZ @ nxJE[b]) for b in range(3)]
        dE = [wY @ JE[b] + al * (iY @ nxJH[b]) for b in range(3)]

        def directional(nu, delta, block0):
            fs = ops.LIFT @ sp.diags(ops.fscale * ops.normals[:, nu])
            return [place(ops.D(nu), block0 + b) - fs @ delta[b] for b in range(3)]

        dnuH = [directional(nu, dH, 3) for nu in range(dim)]
        dnuE = [directional(nu, dE, 0) for nu in range(dim)]

        # PML profile on nodes
        vm = dim - 1
        pml_nodes = np.zeros(n, dtype=bool)
        sig = np.zeros(n)
        kap = np.ones(n)
        alp = np.zeros(n)
        if cfg.pml is not None:
            pml_regions = [mesh.region_names.index(r) for r in cfg.pml.regions if r in mesh.region_names]
            pel = np.isin(mesh.region, pml_regions)
            if pel.any():
                pml_nodes = np.repeat(pel, ops.Np)
                sig, kap, alp = self._pml_profile(pel, cfg.pml)
        self.pml_nodes = pml_nodes

        actE, actH = self._active()
        self.actE, self.actH = actE, actH
        eps_n = np.repeat(eps_e, ops.Np)
        mu_n = np.repeat(mu_e, ops.Np)
        c0 = const.C0

        # registry of unknown blocks: name -> node index array
        blocks: list[tuple[str, np.ndarray]] = []
        for c in actE:
            blocks.append((f"E{c}", np.arange(n)))
        for c in actH:
            blocks.append((f"H{c}", np.arange(n)))
        pidx = np.nonzero(pml_nodes)[0]
        psiH = [b for b in actH if b != self.vaxis] if pidx.size else []
        psiE = [b for b in actE if b != self.vaxis] if pidx.size else []
        for b in psiH:
            blocks.append((f"psiH{b}", pidx))
        for b in psiE:
            blocks.append((f"psiE{b}", pidx))
        disp = self._elem(lambda m: {"lorentz": 2.0, "drude": 1.0}.get(m.dispersion.kind, 0.0))
        disp_n = np.repeat(disp, ops.Np)
        didx = np.nonzero(disp_n > 0)[0]
        lidx = np.nonzero(disp_n == 2)[0]
        for c in actE:
            if didx.size:
                blocks.append((f"J{c}", didx))
        for c in actE:
            if lidx.size:
                blocks.append((f"P{c}", lidx))
        offs, o = {}, 0
        for name, idx in blocks:
            offs[name] = (o, idx)
            o += idx.size
        N = o
        self.blocks, self.N = offs, N

        # map 6n+1 extended columns to packed columns (aux blocks handled separately)
        colmap = -np.ones(ncol, dtype=np.int64)
        for c in actE:
            colmap[c * n:(c + 1) * n] = offs[f"E{c}"][0] + np.arange(n)
        for c in actH:
            colmap[(3 + c) * n:(4 + c) * n] = offs[f"H{c}"][0] + np.arange(n)
        colmap[src] = N            # source column lives at index N

        def pack(mat):
            """Restrict extended columns to the packed layout (+ source column)."""
            m = sp.csr_matrix(mat).tocoo()
            keep = colmap[m.col] >= 0
            if not np.all(np.abs(m.data[~keep]) < 1e-300):
                raise RuntimeError("inactive field component couples into the active set")
            return sp.csr_matrix((m.data[keep], (m.row[keep], colmap[m.col[keep]])),
                                 shape=(m.shape[0], N + 1))

        kap_inv = 1.0 / kap
        rows = []      # (row offset, matrix over N+1 columns)

        def sel(idx):
            return sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))

        def dcol(name, idx, coef):
            """Matrix with ``coef`` rows of all n nodes mapping into block ``name``."""
            off = offs[name][0]
            return sp.csr_matrix((coef, (idx, off + np.arange(idx.size))), shape=(n, N + 1))

        for c in actE:
            acc = sp.csr_matrix((n, N + 1))
            for nu, a in enumerate(self.axes):
                for b in range(3):
                    if not LEVI[c, a, b]:
                        continue
                    dm = pack(dnuH[nu][b])
                    if nu == vm and pidx.size:
                        acc = acc + LEVI[c, a, b] * (sp.diags(kap_inv) @ dm)
                        acc = acc + LEVI[c, a, b] * dcol(f"psiH{b}", pidx, np.ones(pidx.size))
                    else:
                        acc = acc + LEVI[c, a, b] * dm
            acc = sp.diags(c0 / eps_n) @ acc
            if didx.size:
                acc = acc - dcol(f"J{c}", didx, 1.0 / eps_n[didx])
            rows.append((offs[f"E{c}"][0], acc))
        for c in actH:
            acc = sp.csr_matrix((n, N + 1))
            for nu, a in enumerate(self.axes):
                for b in range(3):
                    if not LEVI[c, a, b]:
                        continue
                    dm = pack(dnuE[nu][b])
                    if nu == vm and pidx.size:
                        acc = acc + LEVI[c, a, b] * (sp.diags(kap_inv) @ dm)
                        acc = acc + LEVI[c, a, b] * dcol(f"psiE{b}", pidx, np.ones(pidx.size))
                    else:
                        acc = acc + LEVI[c, a, b] * dm
            rows.append((offs[f"H{c}"][0], sp.diags(-c0 / mu_n) @ acc))
        if pidx.size:
            Sp = sel(pidx)
            damp = alp[pidx] + sig[pidx] / kap[pidx]
            drive = sig[pidx] / kap[pidx] ** 2
            for kind, lst, dnu in (("psiH", psiH, dnuH), ("psiE", psiE, dnuE)):
                for b in lst:
                    m = -(sp.diags(drive) @ Sp @ pack(dnu[vm][b]))
                    off = offs[f"{kind}{b}"][0]
                    m = m - sp.csr_matrix((damp, (np.arange(pidx.size), off + np.arange(pidx.size))),
                                          shape=(pidx.size, N + 1))
                    rows.append((off, m))
        if didx.size:
            wp = self._nodal(lambda m: m.dispersion.omega_p)[didx] * 1e-12
            gam = self._nodal(lambda m: m.dispersion.gamma)[didx] * 1e-12
            wo = self._nodal(lambda m: m.dispersion.omega_o)[didx] * 1e-12
            nd = didx.size
            ar = np.arange(nd)
            for c in actE:
                jo = offs[f"J{c}"][0]
                Eo = offs[f"E{c}"][0]
                r_ = [ar, ar]
                c_ = [Eo + didx, jo + ar]
                v_ = [wp ** 2, -gam]
                if lidx.size:
                    po = offs[f"P{c}"][0]
                    lpos = np.searchsorted(didx, lidx)
                    r_.append(lpos)
                    c_.append(po + np.arange(lidx.size))
                    v_.append(-(wo[lpos] ** 2))
                rows.append((jo, sp.csr_matrix((np.concatenate(v_), (np.concatenate(r_), np.concatenate(c_))),
                                               shape=(nd, N + 1))))
            if lidx.size:
                lpos = np.searchsorted(didx, lidx)
                for c in actE:
                    po = offs[f"P{c}"][0]
                    jo = offs[f"J{c}"][0]
                    rows.append((po, sp.csr_matrix((np.ones(lidx.size), (np.arange(lidx.size), jo + lpos)),
                                                   shape=(lidx.size, N + 1))))
        rows.sort(key=lambda r: r[0])
        full = sp.vstack([m for _, m in rows], format="csr")
        full.eliminate_zeros()
        self.A = full[:, :N].tocsr()
        self.A.sort_indices()
        self.b_inc = np.asarray(full[:, N].todense()).ravel()
        self.eps_n, self.mu_n = eps_n, mu_n
        self.disp_idx, self.lor_idx = didx, lidx
        # conduction-current injection: dE_c/dt -= J~_c / eps on given nodes
        self.inv_eps = 1.0 / eps_n

    def _pml_profile(self, pel: np.ndarray, spec: PMLSpec):
        ops, mesh = self.ops, self.mesh
        vm = mesh.dim - 1
        xv = ops.x[:, vm]
        cen = mesh.centroids()[:, vm]
        lo, hi = mesh.bounds()[vm]
        mid = 0.5 * (lo + hi)
        n = ops.n_nodes
        depth = np.zeros(n)
        thick = np.ones(n)
        for upper in (True, False):
            grp = pel & ((cen > mid) if upper else (cen <= mid))
            if not grp.any():
                continue
            vids = mesh.elements[grp].ravel()
            yv = mesh.vertices[vids, vm]
            start = yv.min() if upper else yv.max()
            L = (yv.max() - yv.min())
            nodes = np.repeat(grp, ops.Np)
            depth[nodes] = np.abs(xv[nodes] - start) / L
            thick[nodes] = L
        eps_n = self._nodal(lambda m: m.eps_optical)
        m = spec.order
        smax = -(m + 1) * np.log(spec.reflection) * const.C0 / (2 * thick * np.sqrt(eps_n))
        sig = np.where(np.repeat(pel, ops.Np), smax * depth ** m, 0.0)
        kap = 1.0 + (spec.kappa_max - 1.0) * depth ** m
        alp = spec.alpha_max * (1.0 - depth)
        return sig, kap, alp

    # ---- state helpers -----------------------------------------------------
    def zero_state(self) -> EMState:
        return EMState(np.zeros(self.N), 0.0)

    def _block(self, u, name):
        off, idx = self.blocks[name]
        return u[off:off + idx.size]

    def field(self, u: np.ndarray, kind: str) -> np.ndarray:
        """Nodal (n_nodes, 3) array of ``E``, ``H``, ``J`` (polarization current) or ``P``."""
        n = self.ops.n_nodes
        out = np.zeros((n, 3))
        for c in range(3):
            name = f"{kind}{c}"
            if name in self.blocks:
                off, idx = self.blocks[name]
                out[idx, c] = u[off:off + idx.size]
        return out

    def set_field(self, u: np.ndarray, kind: str, values: np.ndarray) -> None:
        for c in range(3):
            name = f"{kind}{c}"
            if name in self.blocks:
                off, idx = self.blocks[name]
                u[off:off + idx.size] = values[idx, c]

    def current_source(self, J: np.ndarray | None) -> np.ndarray:
        """Packed source vector for a nodal conduction current J~ (n, 3) [V/m/ps]."""
        j = np.zeros(self.N)
        if J is None:
            return j
        for c in self.actE:
            off, idx = self.blocks[f"E{c}"]
            j[off:off + idx.size] = -J[idx, c] * self.inv_eps[idx]
        return j

    def waveform(self, t: float) -> float:
        return 0.0 if self.pump is None else float(self.pump.waveform(t))

    def rhs(self, u: np.ndarray, t: float, jsrc: np.ndarray | None = None) -> np.ndarray:
        out = self.A @ u
        if self.pump is not None:
            out += self.waveform(t) * self.b_inc
        if jsrc is not None:
            out += jsrc
        return out

    def energy(self, u: np.ndarray) -> float:
        """Discrete 1/2 (eps |E|^2 + mu |H~|^2) integrated over the mesh."""
        M = self.ops.M
        E, H = self.field(u, "E"), self.field(u, "H")
        e = sum(E[:, c] @ (M @ (self.eps_n * E[:, c])) for c in range(3))
        h = sum(H[:, c] @ (M @ (self.mu_n * H[:, c])) for c in range(3))
        return 0.5 * float(e + h)

    def dt_max(self) -> float:
        h = self.ops.element_min_size()
        return self.cfg.cfl * h / (const.C0 * (2 * self.cfg.p + 1))

    def check_finite(self, u: np.ndarray, t: float) -> None:
        if np.all(np.isfinite(u)):
            return
        bad = int(np.nonzero(~np.isfinite(u))[0][0])
        for name, (off, idx) in self.blocks.items():
            if off <= bad < off + idx.size:
                raise NaNError(f"Maxwell field {name}", t, int(idx[bad - off] // self.ops.Np))
        raise NaNError("Maxwell field", t, -1)

    def advance(self, state: EMState, dt: float, nsteps: int,
                jsrc: np.ndarray | None = None) -> EMState:
        """``nsteps`` LSRK(5,4) steps with a frozen current source."""
        j = np.zeros(self.N) if jsrc is None else jsrc
        p = self.pump
        if p is not None and not isinstance(p, PumpSpec):
            y, t = state.u.copy(), state.t
            for _ in range(nsteps):
                y, t = lsrk54_step((y, t), lambda v, s: self.rhs(v, s, j), dt)
            out = EMState(y, t)
            self.check_finite(out.u, out.t)
            return out
        amp, f1, f2, tr = (0.0, 1.0, 2.0, 0.0) if p is None else (p.amplitude, p.f1, p.f2, p.ramp_time)
        u = _lsrk_run(self.A.indptr, self.A.indices, self.A.data, state.u.copy(), state.t, dt,
                      nsteps, self.b_inc, j, amp, f1, f2, tr, LSRK_A, LSRK_B, LSRK_C)
        out = EMState(u, state.t + nsteps * dt)
        self.check_finite(out.u, out.t)
        return out


@numba.njit(cache=True)
def _csr_matvec(indptr, indices, data, x, out):
    for i in range(indptr.size - 1):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        out[i] = s


@numba.njit(cache=True)
def _lsrk_run(indptr, indices, data, u, t0, dt, nsteps, binc, j, amp, f1, f2, tr, ra, rb, rc):
    n = u.size
    k = np.zeros(n)
    r = np.zeros(n)
    t = t0
    for _ in range(nsteps):
        for s in range(5):
            w = _two_tone_scalar(t + rc[s] * dt, amp, f1, f2, tr)
            _csr_matvec(indptr, indices, data, u, r)
            for i in range(n):
                k[i] = ra[s] * k[i] + dt * (r[i] + w * binc[i] + j[i])
                u[i] += rb[s] * k[i]
        t += dt
    return u


# --------------------------------------------------------------------------
# generic pieces

def lsrk54_step(state, rhs_fn, dt: float):
    """One LSRK(5,4) step for ``y' = rhs_fn(y, t)``; ``state`` is ``(y, t)``."""
    y, t = state
    y = np.array(y, dtype=float, copy=True)
    k = np.zeros_like(y)
    for a, b, c in zip(LSRK_A, LSRK_B, LSRK_C):
        k = a * k + dt * rhs_fn(y, t + c * dt)
        y = y + b * k
    return y, t + dt


def maxwell_rhs(state: EMState, solver: MaxwellSolver, J: np.ndarray | None = None) -> np.ndarray:
    """Time derivative of the packed state with nodal conduction current J~."""
    d = solver.rhs(state.u, state.t, solver.current_source(J))
    if not np.all(np.isfinite(d)):
        solver.check_finite(d, state.t)
    return d


def ade_update_terms(E, J_p, P, model, omega_scale: float = 1e-12):
    """Right-hand sides ``(dJp/dt, dP/dt)`` of the polarization ODEs.

    Works on scaled quantities (J~ = J/eps0, P~ = P/eps0); frequencies of
    ``model`` are in rad/s and are converted with ``omega_scale``.
    """
    wp = model.omega_p * omega_scale
    g = model.gamma * omega_scale
    wo = model.omega_o * omega_scale
    E, J_p = np.asarray(E, float), np.asarray(J_p, float)
    if model.kind == "lorentz":
        P = np.asarray(P, float)
        return wp ** 2 * E - g * J_p - wo ** 2 * P, J_p.copy()
    if model.kind == "drude":
        return wp ** 2 * E - g * J_p, np.zeros_like(J_p)
    return np.zeros_like(J_p), np.zeros_like(J_p)


def write_vtk(path, ops: Operators, point_data: dict[str, np.ndarray], title: str = "fields") -> None:
    """ASCII legacy VTK unstructured grid with one sub-cell per element.

    Element vertices are duplicated so discontinuous data is kept; node
    values at the element vertices are written as point data.
    """
    mesh = ops.mesh
    ref = ops.ref
    K = mesh.n_elements
    nv = mesh.dim + 1
    # nodal index of each reference vertex
    vnodes = np.asarray(ref.vertex_nodes)
    pts = np.zeros((K * nv, 3))
    pts[:, :mesh.dim] = mesh.vertices[mesh.elements].reshape(-1, mesh.dim)
    cell_type = 3 if mesh.dim == 1 else 5
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {K * nv} double\n")
        np.savetxt(fh, pts, fmt="%.9g")
        fh.write(f"CELLS {K} {K * (nv + 1)}\n")
        cells = np.hstack([np.full((K, 1), nv), np.arange(K * nv).reshape(K, nv)])
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {K}\n")
        np.savetxt(fh, np.full(K, cell_type), fmt="%d")
        fh.write(f"POINT_DATA {K * nv}\n")
        for name, arr in point_data.items():
            a = np.asarray(arr, float).reshape(K, ops.Np, -1)[:, vnodes, :].reshape(K * nv, -1)
            if a.shape[1] == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, a[:, 0], fmt="%.9g")
            else:
                v = np.zeros((a.shape[0], 3))
                v[:, :min(3, a.shape[1])] = a[:, :3]
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, v, fmt="%.9g")
