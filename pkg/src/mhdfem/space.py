"""Global degree-of-freedom maps, interpolation and error norms.

Four spaces are used:

==============  =========================  =================
kind            element                    n_dofs
==============  =========================  =================
``velocity``    vector P2                  ``3 (V + E)``
``pressure``    P1                         ``V``
``magnetic``    Nedelec, 2nd kind, deg. 1  ``2 E``
``multiplier``  P2                         ``V + E``
==============  =========================  =================

Lagrange nodes are numbered vertices first, then edge midpoints; vector
fields are component-major (``dof = c * (V + E) + node``).  Edge ``e`` of
the magnetic space carries DOFs ``2e`` (moment against the Lagrange function
of the lower-numbered endpoint) and ``2e + 1`` (upper endpoint), both with
the tangent pointing from the lower to the upper endpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import element as el
from .mesh import TetMesh

VELOCITY = "velocity"
PRESSURE = "pressure"
MAGNETIC = "magnetic"
MULTIPLIER = "multiplier"
SPACE_KINDS = (VELOCITY, PRESSURE, MAGNETIC, MULTIPLIER)

_ELEMENT = {VELOCITY: "P2", PRESSURE: "P1", MAGNETIC: "N2", MULTIPLIER: "P2"}

CHUNK = 4096


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of one finite element space.

    ``cell_dofs`` has shape ``(nt, k)`` with ``k`` = 4, 10, 12 or 30.  For the
    vector velocity space the local ordering is component-major
    (``c * 10 + a``).  ``cell_signs`` is only set for the magnetic space.
    """

    kind: str
    n_dofs: int
    cell_dofs: np.ndarray
    boundary_dofs: np.ndarray
    cell_signs: np.ndarray | None = None

    @property
    def element(self) -> str:
        return _ELEMENT[self.kind]

    @property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)


def _p2_cell_nodes(mesh: TetMesh) -> np.ndarray:
    return np.hstack([mesh.tets, mesh.n_vertices + mesh.tet_to_edges])


def build_dofmap(mesh: TetMesh, kind: str) -> DofMap:
    nv, ne = mesh.n_vertices, mesh.n_edges
    bnodes = np.concatenate([mesh.boundary_vertices, nv + mesh.boundary_edges])
    if kind == PRESSURE:
        dofs = np.array(mesh.tets)
        return DofMap(kind, nv, dofs, np.empty(0, dtype=int))
    if kind == MULTIPLIER:
        return DofMap(kind, nv + ne, _p2_cell_nodes(mesh), np.sort(bnodes))
    if kind == VELOCITY:
        nn = nv + ne
        nodes = _p2_cell_nodes(mesh)
        dofs = np.hstack([nodes + c * nn for c in range(3)])
        bdofs = np.concatenate([bnodes + c * nn for c in range(3)])
        return DofMap(kind, 3 * nn, dofs, np.sort(bdofs))
    if kind == MAGNETIC:
        e = mesh.tet_to_edges
        pos = mesh.tet_edge_signs > 0
        first = 2 * e + np.where(pos, 0, 1)
        second = 2 * e + np.where(pos, 1, 0)
        dofs = np.stack([first, second], axis=2).reshape(-1, 12)
        signs = np.repeat(mesh.tet_edge_signs, 2, axis=1).astype(float)
        be = mesh.boundary_edges
        bdofs = np.sort(np.concatenate([2 * be, 2 * be + 1]))
        return DofMap(kind, 2 * ne, dofs, bdofs, cell_signs=signs)
    raise ValueError(f"unknown space kind {kind!r}")


@dataclass(eq=False)
class MixedSpaces:
    """Mesh, its affine geometry and the four DOF maps, built once and shared."""

    mesh: TetMesh
    velocity: DofMap = field(init=False)
    pressure: DofMap = field(init=False)
    magnetic: DofMap = field(init=False)
    multiplier: DofMap = field(init=False)
    geometry: el.TetGeometry = field(init=False)

    def __post_init__(self):
        self.velocity = build_dofmap(self.mesh, VELOCITY)
        self.pressure = build_dofmap(self.mesh, PRESSURE)
        self.magnetic = build_dofmap(self.mesh, MAGNETIC)
        self.multiplier = build_dofmap(self.mesh, MULTIPLIER)
        self.geometry = el.tet_geometry(self.mesh.tet_coords())

    def __getitem__(self, kind: str) -> DofMap:
        return getattr(self, kind)

    def chunks(self, size: int = CHUNK):
        """Yield ``(slice, TetGeometry)`` over batches of tets."""
        g = self.geometry
        for start in range(0, len(g.det), size):
            s = slice(start, start + size)
            yield s, el.TetGeometry(g.x0[s], g.jac[s], g.inv_jac[s], g.det[s])


@dataclass
class FieldVector:
    kind: str
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)


# ---------------------------------------------------------------------------
# interpolation

def _as_vector_field(values: np.ndarray, npts: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape == (3,):
        values = np.broadcast_to(values, (npts, 3))
    return values.reshape(npts, 3)


def _as_scalar_field(values, npts: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(values, dtype=float), (npts,)).copy()


def lagrange_nodes(mesh: TetMesh, kind: str) -> np.ndarray:
    if kind == PRESSURE:
        return mesh.vertices
    return np.vstack([mesh.vertices, mesh.edge_midpoints()])


def interpolate(func: Callable, dofmap: DofMap, mesh: TetMesh, n_edge_points: int = 4) -> np.ndarray:
    """Interpolate ``func`` (points ``(N, 3)`` -> values) into ``dofmap``.

    Lagrange spaces use nodal values; the magnetic space uses the edge
    tangential moments evaluated with Gauss-Legendre quadrature.
    """
    if dofmap.kind in (PRESSURE, MULTIPLIER):
        pts = lagrange_nodes(mesh, dofmap.kind)
        return _as_scalar_field(func(pts), len(pts))
    if dofmap.kind == VELOCITY:
        pts = lagrange_nodes(mesh, dofmap.kind)
        return _as_vector_field(func(pts), len(pts)).T.ravel()
    t, w = np.polynomial.legendre.leggauss(n_edge_points)
    s = 0.5 * (t + 1.0)
    w = 0.5 * w
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    vec = b - a
    pts = a[:, None, :] + s[None, :, None] * vec[:, None, :]  # (ne, ns, 3)
    vals = _as_vector_field(func(pts.reshape(-1, 3)), pts.shape[0] * len(s)).reshape(pts.shape)
    # (v . t) ds = (v . vec) * ds_ref since |vec| cancels
    tang = np.einsum("eqi,ei->eq", vals, vec)
    out = np.empty(dofmap.n_dofs)
    out[0::2] = tang @ (w * (1.0 - s))
    out[1::2] = tang @ (w * s)
    return out


def boundary_lift(func: Callable, dofmap: DofMap, mesh: TetMesh) -> np.ndarray:
    """Full-length vector with interpolated ``func`` on boundary DOFs, zero elsewhere."""
    full = interpolate(func, dofmap, mesh)
    out = np.zeros(dofmap.n_dofs)
    out[dofmap.boundary_dofs] = full[dofmap.boundary_dofs]
    return out


# ---------------------------------------------------------------------------
# evaluation

def physical_tables(dofmap: DofMap, geom: el.TetGeometry, rule: el.QuadratureRule) -> el.PhysicalTables:
    ref = el.eval_basis(dofmap.element, rule.points)
    return el.map_to_physical(geom, ref, rule.weights)


def evaluate(dofmap: DofMap, coefs: np.ndarray, tables: el.PhysicalTables, sl: slice):
    """Field values and first derivatives at the quadrature points of a chunk.

    Returns ``(values, deriv)``:

    * pressure / multiplier: ``(nt, nq)`` and gradient ``(nt, nq, 3)``
    * velocity: ``(nt, nq, 3)`` and gradient ``(nt, nq, 3, 3)`` with
      ``grad[..., i, j] = d u_i / d x_j``
    * magnetic: ``(nt, nq, 3)`` and curl ``(nt, 3)`` (constant per tet)
    """
    local = np.asarray(coefs)[dofmap.cell_dofs[sl]]
    if dofmap.kind in (PRESSURE, MULTIPLIER):
        vals = np.einsum("tqk,tk->tq", tables.values, local)
        grads = np.einsum("tqkj,tk->tqj", tables.grads, local)
        return vals, grads
    if dofmap.kind == VELOCITY:
        local = local.reshape(-1, 3, 10)
        vals = np.einsum("tqk,tck->tqc", tables.values, local)
        grads = np.einsum("tqkj,tck->tqcj", tables.grads, local)
        return vals, grads
    local = local * dofmap.cell_signs[sl]
    vals = np.einsum("tqkj,tk->tqj", tables.values, local)
    curls = np.einsum("tkj,tk->tj", tables.curls, local)
    return vals, curls


# ---------------------------------------------------------------------------
# error norms

def error_norms(
    spaces: MixedSpaces,
    kind: str,
    coefs: np.ndarray,
    exact: Callable,
    exact_deriv: Callable | None = None,
    order: int = 6,
) -> dict:
    """Quadrature approximation of the error norms of a discrete field.

    ``exact`` maps points ``(N, 3)`` to values; ``exact_deriv`` maps to the
    gradient ``(N, 3)`` (scalars), the Jacobian ``(N, 3, 3)`` (velocity) or
    the curl ``(N, 3)`` (magnetic).  Keys of the result:

    * velocity: ``L2``, ``H1_semi``, ``H1`` (full norm)
    * pressure / multiplier: ``L2`` (and ``H1_semi``, ``H1`` if a gradient is given)
    * magnetic: ``L2``, ``curl_L2``, ``Hcurl``
    """
    dofmap = spaces[kind]
    rule = el.quad_rule(order)
    l2 = d2 = 0.0
    for sl, geom in spaces.chunks():
        tab = physical_tables(dofmap, geom, rule)
        xq = geom.to_physical(rule.points)
        nt, nq = xq.shape[:2]
        flat = xq.reshape(-1, 3)
        vals, deriv = evaluate(dofmap, coefs, tab, sl)
        ex = np.asarray(exact(flat), dtype=float)
        if vals.ndim == 2:
            ex = np.broadcast_to(ex, (nt * nq,)).reshape(nt, nq)
            l2 += np.sum(tab.dx * (vals - ex) ** 2)
        else:
            ex = _as_vector_field(ex, nt * nq).reshape(nt, nq, 3)
            l2 += np.sum(tab.dx * np.sum((vals - ex) ** 2, axis=-1))
        if exact_deriv is None:
            continue
        dex = np.asarray(exact_deriv(flat), dtype=float)
        if kind == MAGNETIC:
            dex = _as_vector_field(dex, nt * nq).reshape(nt, nq, 3)
            d2 += np.sum(tab.dx * np.sum((deriv[:, None, :] - dex) ** 2, axis=-1))
        elif kind == VELOCITY:
            dex = np.broadcast_to(dex, (nt * nq, 3, 3)).reshape(nt, nq, 3, 3)
            d2 += np.sum(tab.dx * np.sum((deriv - dex) ** 2, axis=(-1, -2)))
        else:
            dex = _as_vector_field(dex, nt * nq).reshape(nt, nq, 3)
            d2 += np.sum(tab.dx * np.sum((deriv - dex) ** 2, axis=-1))
    out = {"L2": float(np.sqrt(l2))}
    if exact_deriv is not None:
        if kind == MAGNETIC:
            out["curl_L2"] = float(np.sqrt(d2))
            out["Hcurl"] = float(np.sqrt(l2 + d2))
        else:
            out["H1_semi"] = float(np.sqrt(d2))
            out["H1"] = float(np.sqrt(l2 + d2))
    return out
