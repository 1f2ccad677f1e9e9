"""Nodal reference elements, per-element operators and face connectivity.

Global nodal vectors are flat arrays ordered element by element
(``k * Np + i``).  Face-node vectors are ordered ``(k, f, j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import gamma

import numpy as np
import scipy.sparse as sp

from .mesh import FACE_VERTICES, FacePairing, Mesh

NODETOL = 1e-10

# face-node kinds
INTERIOR = 0      # ordinary interior face
SEAM_MIN = 1      # connected to the opposite surface, on the min side
SEAM_MAX = 2      # connected to the opposite surface, on the max side
BOUNDARY = 3      # physical boundary, handled by the tag rule


# --------------------------------------------------------------------------
# orthonormal polynomials and nodes

def jacobi_p(x: np.ndarray, alpha: float, beta: float, n: int) -> np.ndarray:
    """Normalized Jacobi polynomial of order ``n`` at ``x``."""
    x = np.asarray(x, dtype=float)
    pl = np.zeros((n + 1, x.size))
    g0 = (2 ** (alpha + beta + 1) / (alpha + beta + 1)
          * gamma(alpha + 1) * gamma(beta + 1) / gamma(alpha + beta + 1))
    pl[0] = 1.0 / np.sqrt(g0)
    if n == 0:
        return pl[0]
    g1 = (alpha + 1) * (beta + 1) / (alpha + beta + 3) * g0
    pl[1] = ((alpha + beta + 2) * x / 2 + (alpha - beta) / 2) / np.sqrt(g1)
    if n == 1:
        return pl[1]
    aold = 2 / (2 + alpha + beta) * np.sqrt((alpha + 1) * (beta + 1) / (alpha + beta + 3))
    for i in range(1, n):
        h1 = 2 * i + alpha + beta
        anew = 2 / (h1 + 2) * np.sqrt(
            (i + 1) * (i + 1 + alpha + beta) * (i + 1 + alpha) * (i + 1 + beta)
            / (h1 + 1) / (h1 + 3))
        bnew = -(alpha ** 2 - beta ** 2) / h1 / (h1 + 2)
        pl[i + 1] = 1 / anew * (-aold * pl[i - 1] + (x - bnew) * pl[i])
        aold = anew
    return pl[n]


def grad_jacobi_p(x, alpha, beta, n):
    if n == 0:
        return np.zeros(np.size(x))
    return np.sqrt(n * (n + alpha + beta + 1)) * jacobi_p(x, alpha + 1, beta + 1, n - 1)


def jacobi_gq(alpha: float, beta: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss quadrature points/weights for the (alpha, beta) weight."""
    if n == 0:
        return np.array([(alpha - beta) / (alpha + beta + 2)]), np.array([2.0])
    h1 = 2 * np.arange(n + 1) + alpha + beta
    J = np.diag(-0.5 * (alpha ** 2 - beta ** 2) / (h1 + 2) / h1)
    i = np.arange(1, n + 1)
    off = 2 / (h1[:n] + 2) * np.sqrt(
        i * (i + alpha + beta) * (i + alpha) * (i + beta) / (h1[:n] + 1) / (h1[:n] + 3))
    J = J + np.diag(off, 1)
    if alpha + beta < 10 * np.finfo(float).eps:
        J[0, 0] = 0.0
    J = J + J.T
    w, V = np.linalg.eigh(J)
    wts = V[0] ** 2 * 2 ** (alpha + beta + 1) / (alpha + beta + 1) \
        * gamma(alpha + 1) * gamma(beta + 1) / gamma(alpha + beta + 1)
    return w, wts


def jacobi_gl(alpha: float, beta: float, n: int) -> np.ndarray:
    """Gauss-Lobatto points of order ``n``."""
    if n == 1:
        return np.array([-1.0, 1.0])
    xi, _ = jacobi_gq(alpha + 1, beta + 1, n - 2)
    return np.concatenate([[-1.0], xi, [1.0]])


def _warpfactor(n: int, rout: np.ndarray) -> np.ndarray:
    lgl = jacobi_gl(0, 0, n)
    req = np.linspace(-1, 1, n + 1)
    veq = np.array([jacobi_p(req, 0, 0, i) for i in range(n + 1)]).T
    pmat = np.array([jacobi_p(rout, 0, 0, i) for i in range(n + 1)])
    lmat = np.linalg.solve(veq.T, pmat)
    warp = lmat.T @ (lgl - req)
    zerof = np.abs(rout) < 1.0 - 1e-10
    sf = 1.0 - (zerof * rout) ** 2
    return warp / sf + warp * (zerof - 1)


def nodes_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Warp-and-blend nodes on the reference triangle, as (r, s)."""
    alpopt = [0.0, 0.0, 1.4152, 0.1001, 0.2751, 0.98, 1.0999, 1.2832,
              1.3648, 1.4773, 1.4959, 1.5743, 1.5770, 1.6223, 1.6258]
    alpha = alpopt[n - 1] if n < 16 else 5 / 3
    L1, L3 = [], []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            L1.append(i / n)
            L3.append(j / n)
    L1, L3 = np.array(L1), np.array(L3)
    L2 = 1.0 - L1 - L3
    x = -L2 + L3
    y = (-L2 - L3 + 2 * L1) / np.sqrt(3.0)
    b1, b2, b3 = 4 * L2 * L3, 4 * L1 * L3, 4 * L1 * L2
    w1 = _warpfactor(n, L3 - L2)
    w2 = _warpfactor(n, L1 - L3)
    w3 = _warpfactor(n, L2 - L1)
    w1 = b1 * w1 * (1 + (alpha * L1) ** 2)
    w2 = b2 * w2 * (1 + (alpha * L2) ** 2)
    w3 = b3 * w3 * (1 + (alpha * L3) ** 2)
    x = x + w1 + np.cos(2 * np.pi / 3) * w2 + np.cos(4 * np.pi / 3) * w3
    y = y + np.sin(2 * np.pi / 3) * w2 + np.sin(4 * np.pi / 3) * w3
    L1 = (np.sqrt(3.0) * y + 1) / 3
    L2 = (-3 * x - np.sqrt(3.0) * y + 2) / 6
    L3 = (3 * x - np.sqrt(3.0) * y + 2) / 6
    return -L2 + L3 - L1, -L2 - L3 + L1


def _rs_to_ab(r, s):
    a = np.where(np.abs(s - 1) > 1e-14, 2 * (1 + r) / np.where(s == 1, 2.0, 1 - s) - 1, -1.0)
    return a, s


def simplex2d_p(a, b, i, j):
    h1 = jacobi_p(a, 0, 0, i)
    h2 = jacobi_p(b, 2 * i + 1, 0, j)
    return np.sqrt(2.0) * h1 * h2 * (1 - b) ** i


def grad_simplex2d_p(a, b, i, j):
    fa = jacobi_p(a, 0, 0, i)
    dfa = grad_jacobi_p(a, 0, 0, i)
    gb = jacobi_p(b, 2 * i + 1, 0, j)
    dgb = grad_jacobi_p(b, 2 * i + 1, 0, j)
    dr = dfa * gb
    if i > 0:
        dr = dr * (0.5 * (1 - b)) ** (i - 1)
    ds = dfa * (gb * (0.5 * (1 + a)))
    if i > 0:
        ds = ds * (0.5 * (1 - b)) ** (i - 1)
    tmp = dgb * (0.5 * (1 - b)) ** i
    if i > 0:
        tmp = tmp - 0.5 * i * gb * (0.5 * (1 - b)) ** (i - 1)
    ds = ds + fa * tmp
    return dr * 2 ** (i + 0.5), ds * 2 ** (i + 0.5)


# --------------------------------------------------------------------------
# reference element

@dataclass(frozen=True)
class RefElement:
    """Nodal reference simplex of order ``p``.

    ``dmats[d]`` differentiates along reference coordinate ``d``;
    ``lift`` maps stacked face-node values (face-major) to the volume.
    """

    dim: int
    p: int
    nodes: np.ndarray          # (Np, dim)
    vandermonde: np.ndarray
    dmats: tuple
    mass: np.ndarray
    lift: np.ndarray           # (Np, nfaces * Nfp)
    face_nodes: tuple          # per face: node indices, ordered along the face
    vertex_nodes: tuple        # node index of each reference vertex

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_faces(self) -> int:
        return self.dim + 1

    @property
    def n_face_nodes(self) -> int:
        return len(self.face_nodes[0])


def reference_element(dim: int, p: int) -> RefElement:
    if dim not in (1, 2):
        raise ValueError(f"unsupported dimension {dim}")
    if not (isinstance(p, (int, np.integer)) and 1 <= p <= 6):
        raise ValueError(f"unsupported polynomial order {p!r}; need 1 <= p <= 6")
    return _reference_element(dim, int(p))


@lru_cache(maxsize=None)
def _reference_element(dim: int, p: int) -> RefElement:
    if dim == 1:
        r = jacobi_gl(0, 0, p)
        V = np.array([jacobi_p(r, 0, 0, i) for i in range(p + 1)]).T
        Vr = np.array([grad_jacobi_p(r, 0, 0, i) for i in range(p + 1)]).T
        Dr = Vr @ np.linalg.inv(V)
        faces = (np.array([0]), np.array([p]))
        E = np.zeros((p + 1, 2))
        E[0, 0] = 1.0
        E[p, 1] = 1.0
        lift = V @ V.T @ E
        nodes = r[:, None]
        dm = (Dr,)
        verts = (0, p)
    else:
        r, s = nodes_2d(p)
        a, b = _rs_to_ab(r, s)
        cols, dr_cols, ds_cols = [], [], []
        for i in range(p + 1):
            for j in range(p + 1 - i):
                cols.append(simplex2d_p(a, b, i, j))
                gr, gs = grad_simplex2d_p(a, b, i, j)
                dr_cols.append(gr)
                ds_cols.append(gs)
        V = np.array(cols).T
        Vinv = np.linalg.inv(V)
        Dr = np.array(dr_cols).T @ Vinv
        Ds = np.array(ds_cols).T @ Vinv
        f0 = np.nonzero(np.abs(s + 1) < NODETOL)[0]
        f1 = np.nonzero(np.abs(r + s) < NODETOL)[0]
        f2 = np.nonzero(np.abs(r + 1) < NODETOL)[0]
        # order each face from its first to its second vertex
        f0 = f0[np.argsort(r[f0])]
        f1 = f1[np.argsort(s[f1])]
        f2 = f2[np.argsort(-s[f2])]
        faces = (f0, f1, f2)
        nfp = p + 1
        E = np.zeros((r.size, 3 * nfp))
        for fi, (fn, coord) in enumerate(((f0, r[f0]), (f1, s[f1]), (f2, s[f2]))):
            V1 = np.array([jacobi_p(coord, 0, 0, i) for i in range(p + 1)]).T
            massE = np.linalg.inv(V1 @ V1.T)
            E[np.ix_(fn, np.arange(fi * nfp, (fi + 1) * nfp))] = massE
        lift = V @ (V.T @ E)
        nodes = np.stack([r, s], axis=1)
        dm = (Dr, Ds)
        verts = tuple(int(np.argmin(np.linalg.norm(nodes - v, axis=1)))
                      for v in ((-1, -1), (1, -1), (-1, 1)))
    mass = np.linalg.inv(V @ V.T)
    return RefElement(dim, p, nodes, V, dm, mass, lift, faces, verts)


# --------------------------------------------------------------------------
# physical operators

@dataclass(frozen=True)
class Connectivity:
    """Face-node maps for one boundary treatment.

    ``vmap_p`` is the exterior volume node (self for unpaired boundary
    nodes); ``kind`` is one of INTERIOR/SEAM_MIN/SEAM_MAX/BOUNDARY; the
    ``owner`` side of a connected face is the one with the lower
    ``(element, face)`` index.
    """

    vmap_p: np.ndarray
    kind: np.ndarray
    owner: np.ndarray
    tag: np.ndarray
    seam_axis: np.ndarray      # axis index of the seam, -1 otherwise


@dataclass
class Operators:
    """Per-element geometric factors and global (block-diagonal) operators."""

    mesh: Mesh
    ref: RefElement
    x: np.ndarray              # (K*Np, dim) node coordinates
    jac: np.ndarray            # (K,)
    rst_x: np.ndarray          # (K, dim, dim) d r_i / d x_j
    normals: np.ndarray        # (Nfn, dim)
    sjac: np.ndarray           # (Nfn,)
    fscale: np.ndarray         # (Nfn,)
    vmap_m: np.ndarray         # (Nfn,)
    face_elem: np.ndarray      # (Nfn,)
    face_id: np.ndarray        # (Nfn,)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def K(self) -> int:
        return self.mesh.n_elements

    @property
    def Np(self) -> int:
        return self.ref.n_nodes

    @property
    def Nfp(self) -> int:
        return self.ref.n_face_nodes

    @property
    def n_nodes(self) -> int:
        return self.K * self.Np

    @property
    def n_face_nodes(self) -> int:
        return self.vmap_m.size

    def element_of_node(self) -> np.ndarray:
        return np.repeat(np.arange(self.K), self.Np)

    def mass_blocks(self) -> np.ndarray:
        return self.jac[:, None, None] * self.ref.mass[None]

    @property
    def M(self) -> sp.csr_matrix:
        if "M" not in self._cache:
            self._cache["M"] = sp.block_diag(list(self.mass_blocks()), format="csr")
        return self._cache["M"]

    @property
    def Minv(self) -> sp.csr_matrix:
        if "Minv" not in self._cache:
            inv = np.linalg.inv(self.ref.mass)
            self._cache["Minv"] = sp.block_diag(
                [inv / j for j in self.jac], format="csr")
        return self._cache["Minv"]

    def D(self, axis: int) -> sp.csr_matrix:
        """Physical derivative along ``axis`` (block diagonal)."""
        key = ("D", axis)
        if key not in self._cache:
            blocks = []
            for k in range(self.K):
                blk = sum(self.rst_x[k, d, axis] * self.ref.dmats[d] for d in range(self.dim))
                blocks.append(blk)
            self._cache[key] = sp.block_diag(blocks, format="csr")
        return self._cache[key]

    def local_D(self, axis: int) -> np.ndarray:
        """(K, Np, Np) array of elemental derivative matrices."""
        key = ("Dl", axis)
        if key not in self._cache:
            self._cache[key] = np.einsum(
                "kd,dij->kij", self.rst_x[:, :, axis], np.array(self.ref.dmats))
        return self._cache[key]

    @property
    def LIFT(self) -> sp.csr_matrix:
        """Maps face-node values (already multiplied by fscale) to nodes."""
        if "LIFT" not in self._cache:
            self._cache["LIFT"] = sp.block_diag([self.ref.lift] * self.K, format="csr")
        return self._cache["LIFT"]

    @property
    def SM(self) -> sp.csr_matrix:
        if "SM" not in self._cache:
            n = self.n_face_nodes
            self._cache["SM"] = sp.csr_matrix(
                (np.ones(n), (np.arange(n), self.vmap_m)), shape=(n, self.n_nodes))
        return self._cache["SM"]

    def integrate(self, u: np.ndarray) -> float:
        """Integral of a nodal field over the domain."""
        return float(np.ones(self.n_nodes) @ (self.M @ u))

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def face_coordinates(self) -> np.ndarray:
        return self.x[self.vmap_m]

    def element_min_size(self) -> float:
        return float(self.mesh.edge_lengths().min()) if self.dim == 2 else float(
            self.mesh.volumes().min())

    def connect(self, pairings: tuple[FacePairing, ...] | list = ()) -> Connectivity:
        """Face-node maps with the given periodic pairings applied."""
        mesh, ref = self.mesh, self.ref
        K, nf, Nfp, Np = self.K, mesh.n_faces, self.Nfp, self.Np
        vmap_p = self.vmap_m.copy()
        kind = np.full(self.n_face_nodes, BOUNDARY, dtype=np.int8)
        owner = np.zeros(self.n_face_nodes, dtype=bool)
        tag = np.array([mesh.tags[k, f] for k in range(K) for f in range(nf)
                        for _ in range(Nfp)], dtype=object)
        seam_axis = -np.ones(self.n_face_nodes, dtype=np.int8)
        link: dict[tuple[int, int], tuple[int, int, int, np.ndarray]] = {}
        for k in range(K):
            for f in range(nf):
                kn = mesh.etoe[k, f]
                if kn >= 0:
                    link[(k, f)] = (int(kn), int(mesh.etof[k, f]), INTERIOR, np.zeros(self.dim))
        for pr in pairings:
            a = {"x": 0, "y": 1}[pr.axis]
            shift = np.zeros(self.dim)
            shift[a] = pr.width
            for (kmin, fmin), (kmax, fmax), _ in pr.pairs:
                link[(kmin, fmin)] = (kmax, fmax, SEAM_MIN, shift)
                link[(kmax, fmax)] = (kmin, fmin, SEAM_MAX, -shift)
                for kk, ff in ((kmin, fmin), (kmax, fmax)):
                    s = (kk * nf + ff) * Nfp
                    seam_axis[s:s + Nfp] = a
        for (k, f), (kn, fn, kd, shift) in link.items():
            s = (k * nf + f) * Nfp
            idx_m = self.vmap_m[s:s + Nfp]
            sn = (kn * nf + fn) * Nfp
            idx_n = self.vmap_m[sn:sn + Nfp]
            xm = self.x[idx_m] + shift
            xn = self.x[idx_n]
            d = np.linalg.norm(xm[:, None, :] - xn[None, :, :], axis=2)
            j = np.argmin(d, axis=1)
            scale = max(1.0, float(np.abs(self.x).max()))
            if np.any(d[np.arange(Nfp), j] > 1e-9 * scale):
                raise ValueError(f"face ({k},{f}) nodes do not match neighbor ({kn},{fn})")
            vmap_p[s:s + Nfp] = idx_n[j]
            kind[s:s + Nfp] = kd
            owner[s:s + Nfp] = (k, f) < (kn, fn)
        return Connectivity(vmap_p, kind, owner, tag, seam_axis)

    def SP(self, conn: Connectivity) -> sp.csr_matrix:
        """Exterior-trace selection; zero rows on unpaired boundary nodes."""
        n = self.n_face_nodes
        rows = np.nonzero(conn.kind != BOUNDARY)[0]
        return sp.csr_matrix((np.ones(rows.size), (rows, conn.vmap_p[rows])),
                             shape=(n, self.n_nodes))


def build_operators(mesh: Mesh, ref: RefElement) -> Operators:
    if ref.dim != mesh.dim:
        raise ValueError("reference element and mesh dimensions differ")
    K, Np = mesh.n_elements, ref.n_nodes
    V = mesh.vertices[mesh.elements]
    nf = mesh.n_faces
    Nfp = ref.n_face_nodes
    if mesh.dim == 1:
        r = ref.nodes[:, 0]
        x = (V[:, 0, 0][:, None] + 0.5 * (1 + r)[None] * (V[:, 1, 0] - V[:, 0, 0])[:, None])
        xr = 0.5 * (V[:, 1, 0] - V[:, 0, 0])
        jac = xr
        if np.any(jac <= 0):
            raise ValueError(f"inverted element {int(np.argmin(jac))}")
        rst_x = (1.0 / xr)[:, None, None]
        normals = np.tile(np.array([[-1.0], [1.0]]), (K, 1))
        sjac = np.ones(K * nf)
        xs = x.reshape(-1, 1)
    else:
        r, s = ref.nodes[:, 0], ref.nodes[:, 1]
        v1, v2, v3 = V[:, 0], V[:, 1], V[:, 2]
        x = (-(r + s)[None, :, None] * v1[:, None, :] + (1 + r)[None, :, None] * v2[:, None, :]
             + (1 + s)[None, :, None] * v3[:, None, :]) / 2
        xr = (v2 - v1) / 2
        xs_ = (v3 - v1) / 2
        jac = xr[:, 0] * xs_[:, 1] - xs_[:, 0] * xr[:, 1]
        if np.any(jac <= 0):
            raise ValueError(f"inverted element {int(np.argmin(jac))}")
        rx = xs_[:, 1] / jac
        sx = -xr[:, 1] / jac
        ry = -xs_[:, 0] / jac
        sy = xr[:, 0] / jac
        rst_x = np.stack([np.stack([rx, ry], 1), np.stack([sx, sy], 1)], 1)
        n0 = np.stack([xr[:, 1], -xr[:, 0]], 1)
        n1 = np.stack([xs_[:, 1] - xr[:, 1], -xs_[:, 0] + xr[:, 0]], 1)
        n2 = np.stack([-xs_[:, 1], xs_[:, 0]], 1)
        nn = np.stack([n0, n1, n2], 1)
        sj = np.linalg.norm(nn, axis=2)
        normals = (nn / sj[..., None]).reshape(-1, 2)
        sjac = sj.ravel()
        xs = x.reshape(-1, 2)
    normals = np.repeat(normals, Nfp, axis=0)
    sjac = np.repeat(sjac, Nfp)
    face_elem = np.repeat(np.arange(K), nf * Nfp)
    face_id = np.tile(np.repeat(np.arange(nf), Nfp), K)
    fscale = sjac / jac[face_elem]
    loc = np.concatenate(ref.face_nodes)
    vmap_m = (face_elem * Np + np.tile(loc, K)).astype(np.int64)
    return Operators(mesh, ref, xs, jac, rst_x, normals, sjac, fscale, vmap_m,
                     face_elem, face_id)


# --------------------------------------------------------------------------
# fields and trace operators

@dataclass
class Field:
    """Per-element nodal coefficients, shape (K, Np, ncomp)."""

    name: str
    data: np.ndarray
    units: str = ""

    @classmethod
    def from_flat(cls, name: str, flat, K: int, Np: int, units: str = "") -> "Field":
        arr = np.asarray(flat, dtype=float)
        arr = arr[:, None] if arr.ndim == 1 else arr.T  # (ncomp, N) -> (N, ncomp)
        if arr.shape[0] != K * Np:
            raise ValueError(f"field {name!r}: expected {K * Np} nodal values")
        return cls(name, arr.reshape(K, Np, -1), units)

    @property
    def rank(self) -> str:
        return "scalar" if self.data.shape[2] == 1 else "vector"

    def flat(self, comp: int = 0) -> np.ndarray:
        return self.data[:, :, comp].ravel()


def average_jump(u_minus, u_plus) -> tuple[np.ndarray, np.ndarray]:
    """Average ``(u- + u+)/2`` and jump ``u- - u+`` of trace values."""
    um = np.asarray(u_minus, dtype=float)
    up = np.asarray(u_plus, dtype=float)
    if um.shape != up.shape:
        raise ValueError(f"trace shapes differ: {um.shape} vs {up.shape}")
    return 0.5 * (um + up), um - up


def face_vertex_order(dim: int) -> tuple:
    return FACE_VERTICES[dim]
