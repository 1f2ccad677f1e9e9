"""Local DG building blocks: face rules and the alternate-flux gradient and
divergence operators.

Operators are returned in strong form as sparse matrices acting on the flat
nodal vector plus an affine part from boundary data:

    grad_nu(u)  = G[nu] @ u + g_aff[nu]
    div(w)      = sum_nu Div[nu] @ w_nu + d_aff

Face-node rules:

* ``CONNECTED`` (interior or periodic seam): alternate flux with beta = n.
  The owner side takes its own scalar and the partner's vector; the other
  side does the opposite, so both sides see the same flux pair.  The owner
  is the side whose outward normal points along a fixed global direction,
  which keeps the pairing direction consistent across periodic seams.  Across an
  x seam the partner's scalar is offset by the potential drop.
* ``NEUMANN``: u* = u-, n.w* = prescribed.
* ``DIRICHLET``: u* = prescribed, n.w* = n.w- + tau (u- - u_D).  The
  penalty is consistent and removes the local null mode that appears where
  the prescribed scalar meets the owner orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dgcore import BOUNDARY, SEAM_MAX, SEAM_MIN, Connectivity, Operators

CONNECTED, NEUMANN, DIRICHLET = 0, 1, 2

# generic direction: no structured-mesh face is parallel to it
OWNER_DIRECTION = np.array([1.0, 1.0 / np.pi])


class FluxRuleError(ValueError):
    """A boundary face has no flux rule."""


@dataclass
class FaceRules:
    mode: np.ndarray       # (Nfn,) CONNECTED | NEUMANN | DIRICHLET
    owner: np.ndarray      # (Nfn,) bool
    shift: np.ndarray      # (Nfn,) offset added to the partner scalar
    conn: Connectivity


def alternate_flux(u_minus, u_plus, w_minus, w_plus, normal, beta_sign=1):
    """Alternate numerical flux pair.

    ``beta = beta_sign * n``.  Returns ``(u*, w*)`` with
    u* = {u} + 1/2 beta.n [[u]] and w* = {w} - 1/2 beta (n.[[w]]).
    Vector arguments carry components on the last axis.
    """
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    w_minus = np.asarray(w_minus, dtype=float)
    w_plus = np.asarray(w_plus, dtype=float)
    n = np.asarray(normal, dtype=float)
    beta = beta_sign * n
    bn = np.sum(beta * n, axis=-1)
    u_star = 0.5 * (u_minus + u_plus) + 0.5 * bn * (u_minus - u_plus)
    njump = np.sum(n * (w_minus - w_plus), axis=-1)
    w_star = 0.5 * (w_minus + w_plus) - 0.5 * beta * njump[..., None]
    return u_star, w_star


def face_owner(ops: Operators, conn: Connectivity) -> np.ndarray:
    """Owner flag per face node: outward normal along OWNER_DIRECTION.

    Faces perpendicular to the direction fall back to the element-index rule.
    """
    dn = ops.normals @ OWNER_DIRECTION[:ops.dim]
    return np.where(np.abs(dn) > 1e-12, dn > 0, conn.owner)


def face_rules(ops: Operators, conn: Connectivity, tag_modes: dict[str, int],
               drop=0.0, drop_axis: int = 0) -> FaceRules:
    """Resolve a rule for every face node.

    ``tag_modes`` maps boundary tags to NEUMANN or DIRICHLET; ``drop`` is the
    scalar jump across seams on ``drop_axis`` (a float or an array over face
    nodes).  Raises :class:`FluxRuleError` for an untagged boundary face.
    """
    nfn = ops.n_face_nodes
    mode = np.full(nfn, CONNECTED, dtype=np.int8)
    bnd = conn.kind == BOUNDARY
    for i in np.nonzero(bnd)[0]:
        t = conn.tag[i]
        if t not in tag_modes:
            k, f = int(ops.face_elem[i]), int(ops.face_id[i])
            raise FluxRuleError(f"boundary face ({k},{f}) with tag {t!r} has no flux rule")
        mode[i] = tag_modes[t]
    drop = np.broadcast_to(np.asarray(drop, dtype=float), (nfn,))
    shift = np.zeros(nfn)
    on_axis = conn.seam_axis == drop_axis
    lo = on_axis & (conn.kind == SEAM_MIN)
    hi = on_axis & (conn.kind == SEAM_MAX)
    shift[lo] = drop[lo]
    shift[hi] = -drop[hi]
    return FaceRules(mode, face_owner(ops, conn), shift, conn)


def _lift_diag(ops: Operators, weights: np.ndarray) -> sp.csr_matrix:
    return ops.LIFT @ sp.diags(ops.fscale * weights)


def gradient(ops: Operators, rules: FaceRules, u_dirichlet=None):
    """Gradient operators ``G[nu]`` and affine parts ``g_aff[nu]``."""
    nfn = ops.n_face_nodes
    conn = rules.conn
    connected = rules.mode == CONNECTED
    take_partner = connected & ~rules.owner
    dirich = rules.mode == DIRICHLET
    cm = (take_partner | dirich).astype(float)
    cp = -take_partner.astype(float)
    c = np.zeros(nfn)
    c[take_partner] = -rules.shift[take_partner]
    if u_dirichlet is not None:
        ud = np.broadcast_to(np.asarray(u_dirichlet, dtype=float), (nfn,))
        c[dirich] = -ud[dirich]
    SM, SP = ops.SM, ops.SP(conn)
    G, g = [], []
    for nu in range(ops.dim):
        nv = ops.normals[:, nu]
        G.append((ops.D(nu) - _lift_diag(ops, nv * cm) @ SM - _lift_diag(ops, nv * cp) @ SP).tocsr())
        g.append(-(ops.LIFT @ (ops.fscale * nv * c)))
    return G, g


def divergence(ops: Operators, rules: FaceRules, f_neumann=None):
    """Divergence operators ``Div[nu]`` and the affine part ``d_aff``.

    ``f_neumann`` is the prescribed outward normal component n.w* on
    Neumann nodes.
    """
    nfn = ops.n_face_nodes
    conn = rules.conn
    own = (rules.mode == CONNECTED) & rules.owner
    neu = rules.mode == NEUMANN
    dm = (own | neu).astype(float)
    dp = -own.astype(float)
    SM, SP = ops.SM, ops.SP(conn)
    Div = []
    for nu in range(ops.dim):
        nv = ops.normals[:, nu]
        Div.append((ops.D(nu) - _lift_diag(ops, nv * dm) @ SM - _lift_diag(ops, nv * dp) @ SP).tocsr())
    d_aff = np.zeros(ops.n_nodes)
    if f_neumann is not None:
        fn = np.broadcast_to(np.asarray(f_neumann, dtype=float), (nfn,))
        d_aff = ops.LIFT @ (ops.fscale * np.where(neu, fn, 0.0))
    return Div, d_aff


def dirichlet_penalty(ops: Operators, rules: FaceRules, coef, u_dirichlet=None):
    """Penalty part of the divergence on Dirichlet nodes.

    Returns ``(P, p_aff)`` so that ``P @ u + p_aff`` equals the lifted
    ``tau (u- - u_D)`` with ``tau = coef * fscale``.  ``coef`` is nodal (the
    diffusion coefficient of the equation).
    """
    nfn = ops.n_face_nodes
    dirich = rules.mode == DIRICHLET
    tau = np.where(dirich, ops.fscale * (ops.SM @ np.broadcast_to(
        np.asarray(coef, float), (ops.n_nodes,))), 0.0)
    P = (_lift_diag(ops, tau) @ ops.SM).tocsr()
    p_aff = np.zeros(ops.n_nodes)
    if u_dirichlet is not None:
        ud = np.broadcast_to(np.asarray(u_dirichlet, dtype=float), (nfn,))
        p_aff = -(ops.LIFT @ (ops.fscale * tau * np.where(dirich, ud, 0.0)))
    return P, p_aff
