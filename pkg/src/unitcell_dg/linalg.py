"""Sparse block matrices, restarted GMRES and an ILU(0) preconditioner."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class LinearSolverError(RuntimeError):
    def __init__(self, msg: str, residual: float = np.nan, iterations: int = 0):
        super().__init__(f"{msg} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class SparseBlockMatrix:
    """Square CSR matrix made of ``bs x bs`` element blocks."""

    csr: sp.csr_matrix
    block_size: int

    @classmethod
    def from_blocks(cls, blocks: dict[tuple[int, int], np.ndarray], n_blocks: int,
                    block_size: int) -> "SparseBlockMatrix":
        rows, cols, vals = [], [], []
        b = block_size
        ii, jj = np.meshgrid(np.arange(b), np.arange(b), indexing="ij")
        for (I, J), blk in blocks.items():
            rows.append((I * b + ii).ravel())
            cols.append((J * b + jj).ravel())
            vals.append(np.asarray(blk, dtype=float).ravel())
        n = n_blocks * b
        csr = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
        return cls(csr, b)

    @property
    def shape(self):
        return self.csr.shape

    def block_pattern(self) -> set[tuple[int, int]]:
        coo = self.csr.tocoo()
        nz = coo.data != 0
        b = self.block_size
        return set(zip((coo.row[nz] // b).tolist(), (coo.col[nz] // b).tolist()))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()


# --------------------------------------------------------------------------
# ILU(0)

@numba.njit(cache=True)
def _ilu0_kernel(indptr, indices, data, n, shift):
    lu = data.copy()
    diag = np.empty(n, dtype=np.int64)
    iw = -np.ones(n, dtype=np.int64)
    nshift = 0
    for i in range(n):
        diag[i] = -1
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                diag[i] = p
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = p
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k >= i:
                break
            lu[p] = lu[p] / lu[diag[k]]
            for q in range(diag[k] + 1, indptr[k + 1]):
                j = indices[q]
                pos = iw[j]
                if pos >= 0:
                    lu[pos] -= lu[p] * lu[q]
        d = diag[i]
        if abs(lu[d]) < shift:
            lu[d] = shift if lu[d] >= 0 else -shift
            nshift += 1
        for p in range(indptr[i], indptr[i + 1]):
            iw[indices[p]] = -1
    return lu, diag, nshift


@numba.njit(cache=True)
def _ilu0_solve(indptr, indices, lu, diag, b):
    n = b.size
    y = b.copy()
    for i in range(n):
        s = y[i]
        for p in range(indptr[i], diag[i]):
            s -= lu[p] * y[indices[p]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[p] * y[indices[p]]
        y[i] = s / lu[diag[i]]
    return y


@dataclass
class ILU0:
    indptr: np.ndarray
    indices: np.ndarray
    lu: np.ndarray
    diag: np.ndarray
    n_shifted: int = 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        return _ilu0_solve(self.indptr, self.indices, self.lu, self.diag, np.ascontiguousarray(b, dtype=float))

    def factors(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Unit-lower L and upper U as CSR matrices."""
        n = self.diag.size
        m = sp.csr_matrix((self.lu, self.indices, self.indptr), shape=(n, n))
        L = sp.tril(m, -1, format="csr") + sp.identity(n, format="csr")
        U = sp.triu(m, 0, format="csr")
        return L, U


def ilu0_factor(A) -> ILU0:
    """Incomplete LU with zero fill on the sparsity of ``A``.

    Missing diagonal entries are inserted; zero pivots are replaced by a
    small shift and counted (``n_shifted``).
    """
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    if A.nnz == 0:
        raise ValueError("empty matrix")
    shift = 1e-12 * float(np.abs(A.data).max())
    coo = A.tocoo()
    # diagonal positions must exist structurally, even if zero
    rows = np.concatenate([coo.row, np.arange(n)])
    cols = np.concatenate([coo.col, np.arange(n)])
    vals = np.concatenate([coo.data, np.zeros(n)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.sort_indices()
    lu, diag, nshift = _ilu0_kernel(A.indptr.astype(np.int64), A.indices.astype(np.int64),
                                    A.data.astype(float), n, shift)
    if nshift:
        log.warning("ILU(0): %d zero pivots replaced by a diagonal shift", nshift)
    return ILU0(A.indptr.astype(np.int64), A.indices.astype(np.int64), lu, diag, int(nshift))


# --------------------------------------------------------------------------
# GMRES

@dataclass
class LinearSolverHandle:
    """Solver configuration plus reusable preconditioner state."""

    method: str = "gmres"            # gmres | direct
    restart: int = 100
    tol: float = 1e-10
    max_iter: int = 5000
    preconditioner: str = "ilu0"     # ilu0 | none
    reuse: bool = True
    factor: ILU0 | None = None
    baseline_iterations: int | None = None
    last_iterations: int = 0
    last_residual: float = 0.0
    history: list = field(default_factory=list)
    refreshes: int = 0

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"solver tolerance must be in (0, 1), got {self.tol}")
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")
        if self.method not in ("gmres", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.preconditioner not in ("ilu0", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def reset(self) -> None:
        self.factor = None
        self.baseline_iterations = None


def gmres(A, b: np.ndarray, M=None, x0=None, tol=1e-10, restart=100, max_iter=5000):
    """Right-preconditioned restarted GMRES.

    Returns ``(x, iterations, residual_history)``; residuals are relative
    to ``||b||``.  ``M`` applies the preconditioner inverse.
    """
    n = b.size
    matvec = A.matvec if hasattr(A, "matvec") and not sp.issparse(A) else (lambda v: A @ v)
    prec = M if M is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, [0.0]
    r = b - matvec(x)
    beta = np.linalg.norm(r)
    hist = [beta / bnorm]
    its = 0
    while hist[-1] > tol and its < max_iter:
        m = min(restart, max_iter - its)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_end = 0
        for j in range(m):
            Z[j] = prec(V[j])
            w = matvec(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w = w - H[i, j] * V[i]
            # second pass of Gram-Schmidt for robustness
            for i in range(j + 1):
                c = w @ V[i]
                H[i, j] += c
                w = w - c * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            den = np.hypot(H[j, j], H[j + 1, j])
            if den == 0:
                raise LinearSolverError("GMRES breakdown", hist[-1], its)
            cs[j] = H[j, j] / den
            sn[j] = H[j + 1, j] / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            its += 1
            j_end = j + 1
            hist.append(abs(g[j + 1]) / bnorm)
            happy = np.linalg.norm(w) <= 1e-14 * max(1.0, abs(H[j, j]))
            if hist[-1] <= tol or happy:
                break
            V[j + 1] = w / np.linalg.norm(w)
        y = np.linalg.solve(np.triu(H[:j_end, :j_end]), g[:j_end])
        x = x + y @ Z[:j_end]
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        hist[-1] = beta / bnorm
        if beta == 0:
            break
    return x, its, hist


def gmres_solve(A, b: np.ndarray, handle: LinearSolverHandle | None = None, x0=None) -> np.ndarray:
    """Solve ``A x = b`` as configured by ``handle``.

    With an initial guess the correction ``A d = b - A x0`` is solved to
    ``handle.tol`` relative to the initial residual, which is never looser
    than the plain ``||b||``-relative criterion.  Raises
    :class:`LinearSolverError` with the achieved residual when the
    tolerance is not met.
    """
    handle = handle or LinearSolverHandle()
    A = A.csr if isinstance(A, SparseBlockMatrix) else sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise ValueError(f"incompatible system: A {A.shape}, b {b.shape}")
    bn = np.linalg.norm(b)
    if handle.method == "direct":
        x = spla.spsolve(A.tocsc(), b)
        handle.last_iterations = 1
        handle.last_residual = np.linalg.norm(A @ x - b) / bn if bn else 0.0
        return x
    rhs = b
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        rhs = b - A @ x0
        if not np.any(rhs):
            handle.last_iterations, handle.last_residual, handle.history = 0, 0.0, [0.0]
            return x0.copy()
    M = None
    if handle.preconditioner == "ilu0":
        if handle.factor is None or not handle.reuse or handle.factor.diag.size != b.size:
            handle.factor = ilu0_factor(A)
            handle.baseline_iterations = None
        M = handle.factor.solve
    x, its, hist = gmres(A, rhs, M=M, tol=handle.tol,
                         restart=handle.restart, max_iter=handle.max_iter)
    if (handle.preconditioner == "ilu0" and handle.reuse and handle.baseline_iterations
            and its > 2 * handle.baseline_iterations):
        # stale preconditioner: refactor and restart from the current iterate
        handle.factor = ilu0_factor(A)
        handle.refreshes += 1
        r2 = rhs - A @ x
        d, its, hist2 = gmres(A, r2, M=handle.factor.solve, tol=handle.tol * np.linalg.norm(rhs)
                              / max(np.linalg.norm(r2), 1e-300) if np.any(r2) else handle.tol,
                              restart=handle.restart, max_iter=handle.max_iter)
        x = x + d
        hist = [np.linalg.norm(rhs - A @ x) / np.linalg.norm(rhs)]
        handle.baseline_iterations = max(its, 1)
    elif handle.baseline_iterations is None:
        handle.baseline_iterations = max(its, 1)
    if x0 is not None:
        x = x0 + x
    handle.last_iterations = its
    handle.history = hist
    handle.last_residual = np.linalg.norm(A @ x - b) / bn if bn else np.linalg.norm(A @ x)
    if hist[-1] > handle.tol:
        raise LinearSolverError("GMRES did not converge", hist[-1], its)
    return x
