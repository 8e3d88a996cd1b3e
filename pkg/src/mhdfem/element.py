"""Reference-tetrahedron quadrature and basis functions.

Reference tetrahedron: vertices (0,0,0), (1,0,0), (0,1,0), (0,0,1) with
barycentric coordinates ``l0 = 1 - x - y - z, l1 = x, l2 = y, l3 = z``.

Three element families are provided:

* ``P1``  -- linear Lagrange, 4 DOFs (vertices)
* ``P2``  -- quadratic Lagrange, 10 DOFs (4 vertices, then 6 edge midpoints in
  the order of :data:`mhdfem.mesh.TET_EDGES`)
* ``N2``  -- first-order Nedelec element of the second family (full P1^3),
  12 DOFs, two per edge.  For local edge ``k = (a, b)`` the DOFs are the
  tangential moments ``int_e (v . t) l_a ds`` (index ``2k``) and
  ``int_e (v . t) l_b ds`` (index ``2k + 1``), with ``t`` the unit tangent
  pointing from ``a`` to ``b``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import TET_EDGES

REF_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
REF_GRAD_BARY = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

NDOFS = {"P1": 4, "P2": 10, "N2": 12}


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) reference coordinates
    weights: np.ndarray  # (nq,), sum = 1/6
    order: int


def _gauss_jacobi01(m: int, alpha: float):
    """Gauss-Jacobi nodes/weights on [0, 1] for weight (1 - s)**alpha."""
    t, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (t + 1.0), w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def quad_rule(order: int) -> QuadratureRule:
    """Quadrature on the reference tetrahedron exact for total degree ``order``.

    Orders 1 and 2 use the classical 1- and 4-point symmetric rules.  Higher
    orders use the collapsed (conical) Gauss-Jacobi product rule with
    ``m = ceil((order + 1) / 2)`` points per direction, which has positive
    weights and is exact to degree ``2m - 1``.
    """
    if order not in range(1, 7):
        raise ValueError(f"unsupported quadrature order {order}; choose 1..6")
    if order == 1:
        pts = np.array([[0.25, 0.25, 0.25]])
        wts = np.array([1.0 / 6.0])
    elif order == 2:
        a = (5.0 - np.sqrt(5.0)) / 20.0
        b = 1.0 - 3.0 * a
        pts = np.array([[a, a, a], [b, a, a], [a, b, a], [a, a, b]])
        wts = np.full(4, 1.0 / 24.0)
    else:
        m = (order + 2) // 2
        s1, w1 = _gauss_jacobi01(m, 2.0)
        s2, w2 = _gauss_jacobi01(m, 1.0)
        s3, w3 = _gauss_jacobi01(m, 0.0)
        a, b, c = np.meshgrid(s1, s2, s3, indexing="ij")
        wa, wb, wc = np.meshgrid(w1, w2, w3, indexing="ij")
        x = a
        y = b * (1.0 - a)
        z = c * (1.0 - a) * (1.0 - b)
        pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        wts = (wa * wb * wc).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(points=pts, weights=wts, order=order)


def barycentric(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    return np.column_stack([1.0 - points.sum(axis=1), points])


@dataclass(frozen=True)
class RefBasis:
    """Basis tables on the reference element at a set of points.

    ``values`` is ``(np, ndofs)`` for Lagrange and ``(np, ndofs, 3)`` for
    Nedelec.  ``grads`` is ``(np, ndofs, 3)`` (Lagrange only); ``curls`` is
    ``(ndofs, 3)`` (Nedelec only; constant on the element).
    """

    kind: str
    ndofs: int
    values: np.ndarray
    grads: np.ndarray | None = None
    curls: np.ndarray | None = None


def _p1(lam):
    vals = lam.copy()
    grads = np.broadcast_to(REF_GRAD_BARY, (len(lam), 4, 3)).copy()
    return vals, grads


def _p2(lam):
    npts = len(lam)
    vals = np.empty((npts, 10))
    grads = np.empty((npts, 10, 3))
    g = REF_GRAD_BARY
    for i in range(4):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * g[i]
    for k, (a, b) in enumerate(TET_EDGES):
        vals[:, 4 + k] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 4 + k] = 4.0 * (lam[:, a][:, None] * g[b] + lam[:, b][:, None] * g[a])
    return vals, grads


def nedelec_from_bary(lam: np.ndarray, grad_lam: np.ndarray):
    """Second-family Nedelec basis from barycentrics and their gradients.

    Works in any frame: ``lam`` is ``(..., 4)`` and ``grad_lam`` is
    ``(..., 4, 3)`` (broadcastable).  Returns values ``(..., 12, 3)`` and
    curls ``(..., 12, 3)``.
    """
    la = lam[..., TET_EDGES[:, 0]][..., None]  # (..., 6, 1)
    lb = lam[..., TET_EDGES[:, 1]][..., None]
    ga = grad_lam[..., TET_EDGES[:, 0], :]  # (..., 6, 3)
    gb = grad_lam[..., TET_EDGES[:, 1], :]
    psi_a = 4.0 * la * gb + 2.0 * lb * ga
    psi_b = -2.0 * la * gb - 4.0 * lb * ga
    vals = np.stack([psi_a, psi_b], axis=-2)  # (..., 6, 2, 3)
    vals = vals.reshape(vals.shape[:-3] + (12, 3))
    c = 2.0 * np.cross(ga, gb)
    curls = np.stack([c, c], axis=-2)
    curls = curls.reshape(curls.shape[:-3] + (12, 3))
    return vals, curls


def eval_basis(kind: str, points: np.ndarray) -> RefBasis:
    """Evaluate the reference basis ``kind`` (``"P1"``, ``"P2"``, ``"N2"``) at ``points``."""
    lam = barycentric(np.asarray(points, dtype=float))
    if kind == "P1":
        vals, grads = _p1(lam)
        return RefBasis(kind, 4, vals, grads=grads)
    if kind == "P2":
        vals, grads = _p2(lam)
        return RefBasis(kind, 10, vals, grads=grads)
    if kind == "N2":
        vals, curls = nedelec_from_bary(lam, REF_GRAD_BARY)
        return RefBasis(kind, 12, vals, curls=curls)
    raise ValueError(f"unknown element kind {kind!r}")


@dataclass(frozen=True)
class TetGeometry:
    """Affine maps of a batch of tets: ``x = x0 + jac @ xhat``."""

    x0: np.ndarray  # (nt, 3)
    jac: np.ndarray  # (nt, 3, 3)
    inv_jac: np.ndarray  # (nt, 3, 3)
    det: np.ndarray  # (nt,)

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points ``(np, 3)`` to ``(nt, np, 3)``."""
        return self.x0[:, None, :] + np.einsum("tij,qj->tqi", self.jac, ref_points)


def tet_geometry(coords: np.ndarray) -> TetGeometry:
    """Affine map data for tets with vertex coordinates ``(nt, 4, 3)``.

    Raises ``ValueError`` on zero or negative Jacobian determinants.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        coords = coords[None]
    x0 = coords[:, 0]
    jac = np.stack([coords[:, 1] - x0, coords[:, 2] - x0, coords[:, 3] - x0], axis=2)
    det = np.linalg.det(jac)
    scale = np.abs(jac).max(axis=(1, 2)) ** 3
    if np.any(det <= 1e-14 * scale):
        bad = int(np.flatnonzero(det <= 1e-14 * scale)[0])
        raise ValueError(f"degenerate or inverted tetrahedron at batch index {bad} (det={det[bad]:.3e})")
    return TetGeometry(x0=x0, jac=jac, inv_jac=np.linalg.inv(jac), det=det)


@dataclass(frozen=True)
class PhysicalTables:
    """Basis tables on physical tets.

    ``values``: ``(nt, nq, ndofs)`` or ``(nt, nq, ndofs, 3)``; ``grads``:
    ``(nt, nq, ndofs, 3)``; ``curls``: ``(nt, ndofs, 3)``; ``dx``: quadrature
    weights scaled by ``|det|``, ``(nt, nq)``.
    """

    kind: str
    values: np.ndarray
    dx: np.ndarray
    grads: np.ndarray | None = None
    curls: np.ndarray | None = None


def map_to_physical(geom: TetGeometry, ref: RefBasis, weights: np.ndarray | None = None) -> PhysicalTables:
    """Push reference tables forward through the affine maps in ``geom``.

    Lagrange gradients and Nedelec values use the covariant map
    ``J^{-T}``; Nedelec curls use ``J / det J``.
    """
    nt = len(geom.det)
    npts = ref.values.shape[0]
    if weights is None:
        weights = np.ones(npts)
    dx = np.abs(geom.det)[:, None] * np.asarray(weights)[None, :]
    if ref.kind in ("P1", "P2"):
        vals = np.broadcast_to(ref.values, (nt,) + ref.values.shape)
        grads = np.einsum("qkj,tji->tqki", ref.grads, geom.inv_jac)
        return PhysicalTables(ref.kind, vals, dx, grads=grads)
    vals = np.einsum("qkj,tji->tqki", ref.values, geom.inv_jac)
    curls = np.einsum("tij,kj->tki", geom.jac, ref.curls) / geom.det[:, None, None]
    return PhysicalTables(ref.kind, vals, dx, curls=curls)
