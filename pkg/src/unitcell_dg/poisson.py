"""Mixed-form DG Poisson solver.

Solves ``div(eps E) + g phi = f`` with ``E = -grad(phi)`` (all quantities in
internal units, potentials in volts, lengths in um).  Seams along x carry a
potential drop, seams along y are plain periodic, other boundaries are
Neumann or Dirichlet by tag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import ldg
from .dgcore import Field, Operators
from .linalg import LinearSolverHandle, gmres_solve
from .mesh import FacePairing


def potential_drop(w_x: float, v_bias: float, w_sd: float) -> float:
    """Unit-cell drop for a linear potential across the electrode gap."""
    if not w_sd > 0:
        raise ValueError("electrode gap w_sd must be positive")
    return w_x * v_bias / w_sd


@dataclass
class PoissonProblem:
    """Coefficients and boundary data.

    ``eps`` is per element, ``g`` and ``f`` are nodal (or scalars).
    ``phi_drop`` is a scalar, an array over face nodes, or a callable of
    face-node coordinates (the profile hook).  Tags listed in ``neumann``
    get ``n.(eps E)* = f_neumann``; tags in ``dirichlet`` get ``phi* = V``.
    """

    ops: Operators
    eps: np.ndarray
    g: np.ndarray | float = 0.0
    f: np.ndarray | float = 0.0
    phi_drop: float | np.ndarray | Callable = 0.0
    f_neumann: float | np.ndarray = 0.0
    neumann: tuple[str, ...] = ("z_top", "z_bottom")
    dirichlet: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.ops.n_nodes
        self.eps = np.broadcast_to(np.asarray(self.eps, dtype=float), (self.ops.K,)).copy()
        if np.any(~(self.eps > 0)):
            raise ValueError("permittivity must be positive in every element")
        self.g = np.broadcast_to(np.asarray(self.g, dtype=float), (n,)).copy()
        self.f = np.broadcast_to(np.asarray(self.f, dtype=float), (n,)).copy()
        if not callable(self.phi_drop) and not np.all(np.isfinite(self.phi_drop)):
            raise ValueError("phi_drop must be finite")

    def drop_values(self) -> np.ndarray | float:
        if callable(self.phi_drop):
            return np.asarray(self.phi_drop(self.ops.face_coordinates()), dtype=float)
        return self.phi_drop

    def eps_nodal(self) -> np.ndarray:
        return np.repeat(self.eps, self.ops.Np)


@dataclass
class BlockSystem:
    """Mass-weighted block system ``[[M (g + P), M Div eps], [M G, M]] [phi; E] = b``.

    ``A`` is the assembled matrix over the unknown layout (phi, then each
    vector component); ``P`` is the Dirichlet boundary penalty.  ``parts`` keeps the sub-operators used by the
    reduced solve.
    """

    A: sp.csr_matrix
    b: np.ndarray
    n_scalar: int
    n_comp: int
    parts: dict
    pin: int | None = None

    def split(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        n = self.n_scalar
        return x[:n], [x[n * (1 + c):n * (2 + c)] for c in range(self.n_comp)]

    def residual(self, x: np.ndarray) -> float:
        bn = np.linalg.norm(self.b)
        r = np.linalg.norm(self.A @ x - self.b)
        return r / bn if bn > 0 else r


def _rules(problem: PoissonProblem, pairings) -> ldg.FaceRules:
    ops = problem.ops
    conn = ops.connect([p for p in pairings if p is not None])
    modes = {t: ldg.NEUMANN for t in problem.neumann}
    modes.update({t: ldg.DIRICHLET for t in problem.dirichlet})
    return ldg.face_rules(ops, conn, modes, drop=problem.drop_values(), drop_axis=0)


def _dirichlet_trace(problem: PoissonProblem, rules: ldg.FaceRules) -> np.ndarray:
    ud = np.zeros(problem.ops.n_face_nodes)
    for t, v in problem.dirichlet.items():
        ud[rules.conn.tag == t] = v
    return ud


def assemble(problem: PoissonProblem, pairing_x: FacePairing | None = None,
             pairing_y: FacePairing | None = None) -> BlockSystem:
    """Assemble the block system for ``problem``."""
    ops = problem.ops
    rules = _rules(problem, (pairing_x, pairing_y))
    ud = _dirichlet_trace(problem, rules)
    G, gaff = ldg.gradient(ops, rules, ud)
    Div, daff = ldg.divergence(ops, rules, problem.f_neumann)
    P, paff = ldg.dirichlet_penalty(ops, rules, problem.eps_nodal(), ud)
    daff = daff + paff
    M = ops.M
    eps = sp.diags(problem.eps_nodal())
    Mg = M @ (sp.diags(problem.g) + P)
    top = [Mg] + [M @ Dv @ eps for Dv in Div]
    rows = [top] + [[M @ Gv] + [M if j == i else None for j in range(ops.dim)]
                    for i, Gv in enumerate(G)]
    A = sp.bmat(rows, format="csr")
    b = np.concatenate([M @ (problem.f - daff)] + [-(M @ gv) for gv in gaff])
    pin = None
    if not np.any(problem.g) and not problem.dirichlet:
        pin = 0
    parts = dict(M=M, Mg=Mg, G=G, gaff=gaff, Div=Div, daff=daff, eps=eps, rules=rules,
                 Np=ops.Np)
    return BlockSystem(A, b, ops.n_nodes, ops.dim, parts, pin)


def reduced_operator(system: BlockSystem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate E: ``(M g - sum M Div eps G) phi = M(f - d) + sum M Div eps g_aff``."""
    P = system.parts
    M, eps = P["M"], P["eps"]
    S = P["Mg"].copy()
    rhs = system.b[:system.n_scalar].copy()
    for Dv, Gv, gv in zip(P["Div"], P["G"], P["gaff"]):
        MDe = M @ Dv @ eps
        S = S - MDe @ Gv
        rhs = rhs + MDe @ gv
    S = S.tocsr()
    if system.pin is not None:
        S = S.tolil()
        S[system.pin, :] = 0.0
        S[system.pin, system.pin] = 1.0
        S = S.tocsr()
        rhs[system.pin] = 0.0
    return S, rhs


def solve(system: BlockSystem, solver: LinearSolverHandle | None = None,
          x0: np.ndarray | None = None) -> tuple[Field, Field]:
    """Solve for (phi, E) and record the full-system residual on ``solver``."""
    solver = solver or LinearSolverHandle()
    S, rhs = reduced_operator(system)
    # scale the reduced tolerance so the full relative residual meets solver.tol
    bn, rn = np.linalg.norm(system.b), np.linalg.norm(rhs)
    tol = solver.tol
    if rn > 0 and bn > 0:
        solver.tol = min(tol, max(tol * bn / rn, 1e-15))
    try:
        phi = gmres_solve(S, rhs, solver, x0=x0)
    finally:
        solver.tol = tol
    E = [-(Gv @ phi + gv) for Gv, gv in zip(system.parts["G"], system.parts["gaff"])]
    x = np.concatenate([phi] + E)
    solver.last_residual = system.residual(x)
    return _fields(system, phi, E)


def _fields(system: BlockSystem, phi: np.ndarray, E: list[np.ndarray]) -> tuple[Field, Field]:
    Np = system.parts["Np"]
    K = system.n_scalar // Np
    return (Field("phi", phi.reshape(K, Np, 1), "V"),
            Field("E", np.stack([e.reshape(K, Np) for e in E], axis=-1), "V/um"))


def solve_problem(problem: PoissonProblem, pairing_x=None, pairing_y=None,
                  solver: LinearSolverHandle | None = None) -> tuple[Field, Field, BlockSystem]:
    system = assemble(problem, pairing_x, pairing_y)
    phi, E = solve(system, solver)
    return phi, E, system
