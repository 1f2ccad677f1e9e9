"""Simplicial meshes (1D segments, 2D triangles) for unit-cell problems.

Faces are numbered per element: in 1D face ``f`` is vertex ``f``; in 2D
face ``f`` joins local vertices ``f`` and ``(f + 1) % 3``.  Boundary faces
carry exactly one tag from :data:`BOUNDARY_TAGS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

BOUNDARY_TAGS = (
    "x_min", "x_max", "y_min", "y_max",
    "z_top", "z_bottom", "electrode", "pml_outer",
)
AXES = {"x": 0, "y": 1}

FACE_VERTICES = {
    1: ((0,), (1,)),
    2: ((0, 1), (1, 2), (2, 0)),
}

MESH_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh description, geometry or file."""


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh.

    ``etoe[k, f]``/``etof[k, f]`` give the neighbor element and face across
    face ``f`` of element ``k`` (``-1`` on the boundary); ``tags[k, f]`` is
    the boundary tag or ``""`` for interior faces.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    region: np.ndarray
    etoe: np.ndarray
    etof: np.ndarray
    tags: np.ndarray
    region_names: tuple[str, ...] = ()

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.dim + 1

    def face_vertex_ids(self, k: int, f: int) -> np.ndarray:
        return self.elements[k, list(FACE_VERTICES[self.dim][f])]

    def face_centroid(self, k: int, f: int) -> np.ndarray:
        return self.vertices[self.face_vertex_ids(k, f)].mean(axis=0)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def signed_volumes(self) -> np.ndarray:
        v = self.vertices[self.elements]
        if self.dim == 1:
            return v[:, 1, 0] - v[:, 0, 0]
        a = v[:, 1] - v[:, 0]
        b = v[:, 2] - v[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes())

    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)], axis=1)

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices[self.elements]
        if self.dim == 1:
            return np.abs(v[:, 1, 0] - v[:, 0, 0])
        return np.concatenate([
            np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3)
        ])

    def boundary_faces(self, tag: str | None = None) -> list[tuple[int, int]]:
        ks, fs = np.nonzero(self.etoe < 0)
        out = [(int(k), int(f)) for k, f in zip(ks, fs)]
        if tag is not None:
            out = [(k, f) for k, f in out if self.tags[k, f] == tag]
        return out

    def neighbor(self, k: int, f: int) -> tuple[int, int] | str:
        """Return ``(k', f')`` across an interior face, or the boundary tag."""
        if self.etoe[k, f] < 0:
            return str(self.tags[k, f])
        return int(self.etoe[k, f]), int(self.etof[k, f])

    def region_of(self, name: str) -> int:
        try:
            return self.region_names.index(name)
        except ValueError:
            raise KeyError(f"unknown region {name!r}; have {self.region_names}") from None

    def with_tags(self, tags: np.ndarray) -> "Mesh":
        m = Mesh(self.dim, self.vertices, self.elements, self.region,
                 self.etoe, self.etof, tags, self.region_names)
        m.check()
        return m

    def retag(self, mapping: dict[str, str]) -> "Mesh":
        """Rename boundary tags, e.g. ``{"x_min": "electrode"}``."""
        tags = self.tags.copy()
        for old, new in mapping.items():
            tags[tags == old] = new
        return self.with_tags(tags)

    def check(self) -> None:
        """Raise :class:`MeshError` unless every mesh invariant holds."""
        vol = self.signed_volumes()
        if np.any(vol <= 0):
            bad = int(np.argmin(vol))
            raise MeshError(f"element {bad} has non-positive signed volume {vol[bad]:.3e}")
        K, nf = self.etoe.shape
        for k in range(K):
            for f in range(nf):
                kn = self.etoe[k, f]
                if kn >= 0:
                    fn = self.etof[k, f]
                    if self.etoe[kn, fn] != k or self.etof[kn, fn] != f:
                        raise MeshError(f"face ({k},{f}) neighbor references are inconsistent")
                    if self.tags[k, f]:
                        raise MeshError(f"interior face ({k},{f}) carries tag {self.tags[k, f]!r}")
                elif self.tags[k, f] not in BOUNDARY_TAGS:
                    c = self.face_centroid(k, f)
                    raise MeshError(
                        f"boundary face ({k},{f}) at {_fmt(c)} has invalid tag {self.tags[k, f]!r}")

    def submesh(self, regions: Sequence[str]) -> tuple["Mesh", np.ndarray]:
        """Extract the elements of ``regions``.

        Faces that become boundary faces are tagged ``z_top``/``z_bottom``
        by the sign of their normal along the stack (last) axis.  Returns
        the submesh and the parent index of each submesh element.
        """
        ids = [self.region_of(r) for r in regions]
        keep = np.nonzero(np.isin(self.region, ids))[0]
        if keep.size == 0:
            raise MeshError(f"no elements in regions {list(regions)}")
        used = np.unique(self.elements[keep])
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(used.size)
        elements = remap[self.elements[keep]]
        tags = np.full((keep.size, self.n_faces), "", dtype=object)
        inside = np.zeros(self.n_elements, dtype=bool)
        inside[keep] = True
        for i, k in enumerate(keep):
            for f in range(self.n_faces):
                kn = self.etoe[k, f]
                if kn < 0:
                    tags[i, f] = self.tags[k, f]
                elif not inside[kn]:
                    n = _outward_normal(self, k, f)
                    tags[i, f] = "z_top" if n[-1] >= 0 else "z_bottom"
        return _assemble(self.dim, self.vertices[used], elements, self.region[keep],
                         tags, self.region_names), keep


def _fmt(x) -> str:
    return "(" + ", ".join(f"{v:.12g}" for v in np.atleast_1d(x)) + ")"


def _outward_normal(mesh: Mesh, k: int, f: int) -> np.ndarray:
    v = mesh.vertices[mesh.elements[k]]
    if mesh.dim == 1:
        return np.array([-1.0 if f == 0 else 1.0])
    a, b = v[f], v[(f + 1) % 3]
    t = b - a
    return np.array([t[1], -t[0]]) / np.linalg.norm(t)


def _connect(dim: int, elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K = elements.shape[0]
    nf = dim + 1
    etoe = -np.ones((K, nf), dtype=np.int64)
    etof = -np.ones((K, nf), dtype=np.int64)
    seen: dict[tuple, tuple[int, int]] = {}
    for k in range(K):
        for f, loc in enumerate(FACE_VERTICES[dim]):
            key = tuple(sorted(int(elements[k, i]) for i in loc))
            if key in seen:
                k2, f2 = seen.pop(key)
                etoe[k, f], etof[k, f] = k2, f2
                etoe[k2, f2], etof[k2, f2] = k, f
            else:
                seen[key] = (k, f)
    return etoe, etof


def _assemble(dim, vertices, elements, region, tags, region_names) -> Mesh:
    vertices = np.asarray(vertices, dtype=float).reshape(-1, dim)
    elements = np.asarray(elements, dtype=np.int64)
    etoe, etof = _connect(dim, elements)
    tags = np.asarray(tags, dtype=object).copy()
    tags[etoe >= 0] = ""
    mesh = Mesh(dim, vertices, elements, np.asarray(region, dtype=np.int64),
                etoe, etof, tags, tuple(region_names))
    mesh.check()
    return mesh


# --------------------------------------------------------------------------
# structured generation

@dataclass
class StructuredSpec:
    """Axis-aligned interval/rectangle with layers along the stack axis.

    ``layers`` lists ``(upper_coordinate, region)`` along the last axis in
    increasing order; ``blocks`` are ``((lo, hi) per axis, region)`` boxes
    that override the layer region of any cell whose centroid they contain.
    With ``stack=True`` the extremes of the last axis are tagged
    ``z_bottom``/``z_top``; otherwise they get the axis' min/max tags.
    """

    extent: Sequence[tuple[float, float]]
    h: float
    layers: Sequence[tuple[float, str]] = ()
    blocks: Sequence[tuple[Sequence[tuple[float, float]], str]] = ()
    stack: bool = False
    tags: dict[str, str] = field(default_factory=dict)
    region: str = "semiconductor"


def _breakpoints(lo: float, hi: float, h: float, extra: Sequence[float]) -> np.ndarray:
    pts = sorted({lo, hi, *[e for e in extra if lo < e < hi]})
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        out.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(out)


def build_structured(spec: StructuredSpec) -> Mesh:
    dim = len(spec.extent)
    if dim not in (1, 2):
        raise MeshError(f"unsupported dimension {dim}")
    if not spec.h > 0:
        raise MeshError(f"edge length h must be positive, got {spec.h}")
    for lo, hi in spec.extent:
        if not hi > lo:
            raise MeshError(f"degenerate extent ({lo}, {hi})")

    names: list[str] = []

    def rid(name: str) -> int:
        if name not in names:
            names.append(name)
        return names.index(name)

    layers = list(spec.layers) or [(spec.extent[-1][1], spec.region)]
    for _, name in layers:
        rid(name)
    for _, name in spec.blocks:
        rid(name)

    grids = []
    for a, (lo, hi) in enumerate(spec.extent):
        extra = [b[a][0] for b, _ in spec.blocks] + [b[a][1] for b, _ in spec.blocks]
        if a == dim - 1:
            extra += [u for u, _ in layers]
        grids.append(_breakpoints(lo, hi, spec.h, extra))

    def region_at(c: np.ndarray) -> int:
        for box, name in reversed(list(spec.blocks)):
            if all(box[a][0] <= c[a] <= box[a][1] for a in range(dim)):
                return names.index(name)
        for upper, name in layers:
            if c[-1] <= upper:
                return names.index(name)
        return names.index(layers[-1][1])

    last = dim - 1
    lo_tag = "z_bottom" if spec.stack else ("x_min", "y_min")[last]
    hi_tag = "z_top" if spec.stack else ("x_max", "y_max")[last]

    if dim == 1:
        x = grids[0]
        vertices = x[:, None]
        elements = np.stack([np.arange(x.size - 1), np.arange(1, x.size)], axis=1)
        tags = np.full((elements.shape[0], 2), "", dtype=object)
        tags[0, 0] = lo_tag
        tags[-1, 1] = hi_tag
    else:
        x, y = grids
        nx, ny = x.size, y.size
        X, Y = np.meshgrid(x, y, indexing="xy")
        vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
        vid = np.arange(nx * ny).reshape(ny, nx)
        tris = []
        for j in range(ny - 1):
            for i in range(nx - 1):
                v00, v10 = vid[j, i], vid[j, i + 1]
                v01, v11 = vid[j + 1, i], vid[j + 1, i + 1]
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        elements = np.array(tris, dtype=np.int64)
        tags = np.full((elements.shape[0], 3), "", dtype=object)
        xlo, xhi = x[0], x[-1]
        ylo, yhi = y[0], y[-1]
        for k, tri in enumerate(elements):
            for f, (a, b) in enumerate(FACE_VERTICES[2]):
                pa, pb = vertices[tri[a]], vertices[tri[b]]
                if np.isclose(pa[0], xlo) and np.isclose(pb[0], xlo):
                    tags[k, f] = "x_min"
                elif np.isclose(pa[0], xhi) and np.isclose(pb[0], xhi):
                    tags[k, f] = "x_max"
                elif np.isclose(pa[1], ylo) and np.isclose(pb[1], ylo):
                    tags[k, f] = lo_tag
                elif np.isclose(pa[1], yhi) and np.isclose(pb[1], yhi):
                    tags[k, f] = hi_tag
    centroids = vertices[elements].mean(axis=1)
    region = np.array([region_at(c) for c in centroids], dtype=np.int64)
    for old, new in spec.tags.items():
        tags[tags == old] = new
    return _assemble(dim, vertices, elements, region, tags, names)


def build_mesh(spec: StructuredSpec | str | Path) -> Mesh:
    """Build a mesh from a structured description or read a mesh file."""
    if isinstance(spec, (str, Path)):
        return read_mesh(spec)
    return build_structured(spec)


# --------------------------------------------------------------------------
# mesh file

def write_mesh(mesh: Mesh, path: str | Path) -> None:
    lines = [f"dgmesh {mesh.dim} {mesh.n_vertices} {mesh.n_elements}"]
    if mesh.region_names:
        lines.append("# regions: " + " ".join(mesh.region_names))
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in e) + f" {int(r)}"
              for e, r in zip(mesh.elements, mesh.region)]
    for k, f in mesh.boundary_faces():
        lines.append(f"face {k} {f} {mesh.tags[k, f]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    names: list[str] = []
    lines = []
    for ln in raw:
        s = ln.strip()
        if s.startswith("# regions:"):
            names = s.split(":", 1)[1].split()
        elif s and not s.startswith("#"):
            lines.append(s)
    try:
        head = lines[0].split()
        if head[0] != "dgmesh":
            raise MeshError(f"{path}: missing 'dgmesh' header")
        dim, nv, ne = (int(t) for t in head[1:4])
        if dim not in (1, 2):
            raise MeshError(f"{path}: unsupported dimension {dim}")
        verts = np.array([[float(t) for t in lines[1 + i].split()] for i in range(nv)])
        if verts.shape != (nv, dim):
            raise MeshError(f"{path}: vertex lines must have {dim} coordinates")
        elem_rows = [[int(t) for t in lines[1 + nv + i].split()] for i in range(ne)]
        if any(len(r) != dim + 2 for r in elem_rows):
            raise MeshError(f"{path}: element lines need {dim + 1} vertex ids and a region id")
        er = np.array(elem_rows, dtype=np.int64)
        tags = np.full((ne, dim + 1), "", dtype=object)
        for ln in lines[1 + nv + ne:]:
            parts = ln.split()
            if parts[0] != "face" or len(parts) != 4:
                raise MeshError(f"{path}: malformed boundary line {ln!r}")
            tags[int(parts[1]), int(parts[2])] = parts[3]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: malformed mesh file ({exc})") from exc
    if er[:, :-1].max() >= nv or er[:, :-1].min() < 0:
        raise MeshError(f"{path}: element references a missing vertex")
    nreg = int(er[:, -1].max()) + 1
    if len(names) < nreg:
        names = names + [f"region{i}" for i in range(len(names), nreg)]
    return _assemble(dim, verts, er[:, :-1], er[:, -1], tags, names)


# --------------------------------------------------------------------------
# periodic pairing

@dataclass(frozen=True)
class FacePairing:
    """Bijection between the faces of the min and max surfaces of ``axis``.

    Each pair is ``((k_min, f_min), (k_max, f_max), perm)`` where
    ``perm[i]`` is the local vertex of the max face matching local vertex
    ``i`` of the min face after translation by ``width``.
    """

    axis: str
    width: float
    pairs: tuple

    def partner_map(self) -> dict[tuple[int, int], tuple[int, int]]:
        out = {}
        for a, b, _ in self.pairs:
            out[a] = b
            out[b] = a
        return out

    def inverse(self) -> "FacePairing":
        inv = []
        for a, b, perm in self.pairs:
            p = [0] * len(perm)
            for i, j in enumerate(perm):
                p[j] = i
            inv.append((b, a, tuple(p)))
        return FacePairing(self.axis, -self.width, tuple(inv))


def _check_surface_vertices(mesh, lo_faces, hi_faces, a, width, tol, axis):
    """Name the first vertex of either surface that has no translated twin."""
    lo = np.unique(np.concatenate([mesh.face_vertex_ids(k, f) for k, f in lo_faces] or [[]]).astype(int))
    hi = np.unique(np.concatenate([mesh.face_vertex_ids(k, f) for k, f in hi_faces] or [[]]).astype(int))
    if lo.size == 0 or hi.size == 0:
        return
    shift = np.zeros(mesh.dim)
    shift[a] = width
    orphans = []
    for src, dst, side, sgn in ((lo, hi, "min", 1.0), (hi, lo, "max", -1.0)):
        target = mesh.vertices[dst]
        for v in src:
            p = mesh.vertices[v] + sgn * shift
            if np.linalg.norm(target - p, axis=1).min() > tol:
                orphans.append(f"{axis}_{side} vertex {v} at {_fmt(mesh.vertices[v])}")
    if orphans:
        raise MeshError("vertices without a periodic partner: " + "; ".join(orphans))


def pair_periodic_faces(mesh: Mesh, axis: str) -> FacePairing:
    """Pair the ``<axis>_min`` faces with congruent ``<axis>_max`` faces."""
    a = AXES[axis]
    if a >= mesh.dim:
        raise MeshError(f"axis {axis!r} not present in a {mesh.dim}D mesh")
    lo_faces = mesh.boundary_faces(f"{axis}_min")
    hi_faces = mesh.boundary_faces(f"{axis}_max")
    if not lo_faces and not hi_faces:
        raise MeshError(f"mesh has no {axis}_min/{axis}_max faces")
    bounds = mesh.bounds()
    width = bounds[a, 1] - bounds[a, 0]
    scale = max(1.0, float(np.abs(bounds).max()))
    tol = MESH_TOL * scale * 100
    _check_surface_vertices(mesh, lo_faces, hi_faces, a, width, tol, axis)
    hi_vcoords = [mesh.vertices[mesh.face_vertex_ids(k, f)] for k, f in hi_faces]
    hi_cent = np.array([v.mean(axis=0) for v in hi_vcoords]).reshape(-1, mesh.dim)
    used = set()
    pairs = []
    for k, f in lo_faces:
        vc = mesh.vertices[mesh.face_vertex_ids(k, f)].copy()
        vc[:, a] += width
        c = vc.mean(axis=0)
        match = None
        if hi_cent.size:
            d = np.linalg.norm(hi_cent - c, axis=1)
            j = int(np.argmin(d))
            if d[j] <= tol and j not in used:
                match = j
        perm = None
        if match is not None:
            hv = hi_vcoords[match]
            perm = []
            for p in vc:
                dd = np.linalg.norm(hv - p, axis=1)
                jj = int(np.argmin(dd))
                if dd[jj] > tol:
                    perm = None
                    break
                perm.append(jj)
        if perm is None:
            orig = mesh.vertices[mesh.face_vertex_ids(k, f)]
            raise MeshError(
                f"unpaired {axis}_min face ({k},{f}) with vertices "
                + ", ".join(_fmt(v) for v in orig)
                + f": no congruent {axis}_max face after translation by {width:.12g}")
        used.add(match)
        pairs.append(((k, f), hi_faces[match], tuple(perm)))
    if len(used) != len(hi_faces):
        k, f = next(hf for j, hf in enumerate(hi_faces) if j not in used)
        verts = mesh.vertices[mesh.face_vertex_ids(k, f)]
        raise MeshError(
            f"unpaired {axis}_max face ({k},{f}) with vertices "
            + ", ".join(_fmt(v) for v in verts))
    return FacePairing(axis, float(width), tuple(pairs))
