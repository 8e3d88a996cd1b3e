"""Assembly of the linearized MHD blocks and Picard residuals.

Unknowns are ordered ``(B, r, u, p)``; the linearized operator is ::

    [  C   G^T  J^T  0  ]
    [  G    0    0   0  ]
    [ -J    0    F  B^T ]
    [  0    0    B   0  ]

with

* ``C_ij = S/Rm (curl phi_j, curl phi_i)``
* ``G_ij = (phi_j, grad s_i)``
* ``J_ij = S (curl phi_j, B_k x v_i)``
* ``F_ij = 1/Re (grad v_j, grad v_i) + (u_k . grad v_j, v_i) + gamma (div v_j, div v_i)``
* ``B_ij = -(div v_j, q_i)``

Preconditioner-only matrices: the edge mass ``M``, the multiplier Laplacian
``Lr``, the pressure mass ``Qp`` and ``Shat = F + S Rm (B_k x v_j, B_k x v_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import element as el
from .space import MAGNETIC, MULTIPLIER, PRESSURE, VELOCITY, DofMap, MixedSpaces, evaluate, physical_tables

BLOCK_KINDS = ("C", "M", "G", "J", "F", "B", "Lr", "Qp", "Shat", "BuBv")
# (row space, column space) of each block
BLOCK_SPACES = {
    "C": (MAGNETIC, MAGNETIC),
    "M": (MAGNETIC, MAGNETIC),
    "G": (MULTIPLIER, MAGNETIC),
    "J": (VELOCITY, MAGNETIC),
    "F": (VELOCITY, VELOCITY),
    "B": (PRESSURE, VELOCITY),
    "Lr": (MULTIPLIER, MULTIPLIER),
    "Qp": (PRESSURE, PRESSURE),
    "Shat": (VELOCITY, VELOCITY),
    "BuBv": (VELOCITY, VELOCITY),
}
BLOCK_ORDER = (MAGNETIC, MULTIPLIER, VELOCITY, PRESSURE)


@dataclass(frozen=True)
class PhysParams:
    """Physical and solver parameters.

    ``sigma=None`` means the default shift ``S / Rm``.
    """

    Re: float = 1.0
    Rm: float = 1.0
    S: float = 1.0
    gamma: float = 1.0
    sigma: float | None = None
    theta: float = 1.0

    def __post_init__(self):
        if not (self.Re > 0 and self.Rm > 0 and self.S > 0):
            raise ValueError("Re, Rm and S must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")

    @property
    def shift(self) -> float:
        return self.S / self.Rm if self.sigma is None else float(self.sigma)


@dataclass
class MhdState:
    """Full-length coefficient vectors (boundary DOFs included)."""

    xb: np.ndarray
    xr: np.ndarray
    xu: np.ndarray
    xp: np.ndarray

    @classmethod
    def zeros(cls, spaces: MixedSpaces) -> "MhdState":
        return cls(
            np.zeros(spaces.magnetic.n_dofs),
            np.zeros(spaces.multiplier.n_dofs),
            np.zeros(spaces.velocity.n_dofs),
            np.zeros(spaces.pressure.n_dofs),
        )

    def copy(self) -> "MhdState":
        return MhdState(self.xb.copy(), self.xr.copy(), self.xu.copy(), self.xp.copy())

    def as_tuple(self):
        return (self.xb, self.xr, self.xu, self.xp)


class SparsityPattern:
    """CSR pattern of a (row space, column space) pair plus the map that
    sends every entry of the stacked local matrices to its CSR slot."""

    def __init__(self, rows: DofMap, cols: DofMap):
        r = rows.cell_dofs
        c = cols.cell_dofs
        kr, kc = r.shape[1], c.shape[1]
        self.shape = (rows.n_dofs, cols.n_dofs)
        key = (np.repeat(r, kc, axis=1).astype(np.int64) * cols.n_dofs + np.tile(c, (1, kr))).ravel()
        uniq, self.scatter = np.unique(key, return_inverse=True)
        self.scatter = self.scatter.ravel()
        irow = uniq // cols.n_dofs
        self.indices = (uniq % cols.n_dofs).astype(np.int32)
        self.indptr = np.zeros(rows.n_dofs + 1, dtype=np.int64)
        np.cumsum(np.bincount(irow, minlength=rows.n_dofs), out=self.indptr[1:])
        self.nnz = len(uniq)

    def build(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def restrict(A: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(A.tocsr()[rows][:, cols])


def _scatter_vector(dofmap: DofMap, local: np.ndarray) -> np.ndarray:
    return np.bincount(dofmap.cell_dofs.ravel(), weights=local.ravel(), minlength=dofmap.n_dofs)


def _vec_blockdiag(a: np.ndarray) -> np.ndarray:
    """(nt, 10, 10) scalar block -> (nt, 30, 30) block-diagonal vector block."""
    nt = a.shape[0]
    out = np.zeros((nt, 3, 10, 3, 10))
    for c in range(3):
        out[:, c, :, c, :] = a
    return out.reshape(nt, 30, 30)


class Assembler:
    """Element-loop assembly over a :class:`MixedSpaces` instance.

    Parameter-independent matrices (unscaled curl-curl, edge mass, gradient
    pairing, divergence, Laplacian, pressure mass, unit-viscosity vector
    Laplacian and grad-div) are computed on first use and cached.
    """

    def __init__(self, spaces: MixedSpaces, order: int = 4):
        self.spaces = spaces
        self.rule = el.quad_rule(order)
        self._patterns: dict = {}
        self._const: dict = {}

    # -- infrastructure ---------------------------------------------------
    def pattern(self, row_kind: str, col_kind: str) -> SparsityPattern:
        key = (row_kind, col_kind)
        if key not in self._patterns:
            self._patterns[key] = SparsityPattern(self.spaces[row_kind], self.spaces[col_kind])
        return self._patterns[key]

    def _tables(self, geom, kinds):
        return {k: physical_tables(self.spaces[k], geom, self.rule) for k in kinds}

    def _signs(self, sl):
        return self.spaces.magnetic.cell_signs[sl]

    def _collect(self, fn, kinds) -> np.ndarray:
        parts = []
        for sl, geom in self.spaces.chunks():
            parts.append(fn(sl, geom, self._tables(geom, kinds)))
        return np.concatenate(parts, axis=0)

    # -- constant blocks --------------------------------------------------
    def _constant(self, name: str) -> sp.csr_matrix:
        if name in self._const:
            return self._const[name]
        if name == "curlcurl":
            def fn(sl, geom, t):
                n = t[MAGNETIC]
                vol = n.dx.sum(axis=1)
                s = self._signs(sl)
                return vol[:, None, None] * np.einsum("tai,tbi->tab", n.curls, n.curls) * s[:, :, None] * s[:, None, :]
            mat = self.pattern(MAGNETIC, MAGNETIC).build(self._collect(fn, [MAGNETIC]))
        elif name == "M":
            def fn(sl, geom, t):
                n = t[MAGNETIC]
                s = self._signs(sl)
                return np.einsum("tq,tqai,tqbi->tab", n.dx, n.values, n.values, optimize=True) * s[:, :, None] * s[:, None, :]
            mat = self.pattern(MAGNETIC, MAGNETIC).build(self._collect(fn, [MAGNETIC]))
        elif name == "G":
            def fn(sl, geom, t):
                n, p2 = t[MAGNETIC], t[MULTIPLIER]
                s = self._signs(sl)
                return np.einsum("tq,tqai,tqbi->tab", n.dx, p2.grads, n.values, optimize=True) * s[:, None, :]
            mat = self.pattern(MULTIPLIER, MAGNETIC).build(self._collect(fn, [MAGNETIC, MULTIPLIER]))
        elif name == "Lr":
            mat = self.pattern(MULTIPLIER, MULTIPLIER).build(self._collect(
                lambda sl, g, t: _laplace(t[MULTIPLIER]), [MULTIPLIER]))
        elif name == "Qp":
            def fn(sl, geom, t):
                p1 = t[PRESSURE]
                return np.einsum("tq,tqa,tqb->tab", p1.dx, p1.values, p1.values, optimize=True)
            mat = self.pattern(PRESSURE, PRESSURE).build(self._collect(fn, [PRESSURE]))
        elif name == "B":
            def fn(sl, geom, t):
                p1, p2 = t[PRESSURE], t[VELOCITY]
                loc = -np.einsum("tq,tqa,tqbd->tadb", p1.dx, p1.values, p2.grads, optimize=True)
                return loc.reshape(len(loc), 4, 30)
            mat = self.pattern(PRESSURE, VELOCITY).build(self._collect(fn, [PRESSURE, VELOCITY]))
        elif name == "veclap":
            mat = self.pattern(VELOCITY, VELOCITY).build(self._collect(
                lambda sl, g, t: _vec_blockdiag(_laplace(t[VELOCITY])), [VELOCITY]))
        elif name == "graddiv":
            def fn(sl, geom, t):
                p2 = t[VELOCITY]
                loc = np.einsum("tq,tqac,tqbd->tcadb", p2.dx, p2.grads, p2.grads, optimize=True)
                return loc.reshape(len(loc), 30, 30)
            mat = self.pattern(VELOCITY, VELOCITY).build(self._collect(fn, [VELOCITY]))
        else:
            raise KeyError(name)
        self._const[name] = mat
        return mat

    # -- state-dependent blocks -------------------------------------------
    def convection(self, xu: np.ndarray) -> sp.csr_matrix:
        """``(u_k . grad v_j, v_i)`` on the full velocity space."""
        def fn(sl, geom, t):
            p2 = t[VELOCITY]
            uq, _ = evaluate(self.spaces.velocity, xu, p2, sl)
            w = np.einsum("tqi,tqbi->tqb", uq, p2.grads)
            return _vec_blockdiag(np.einsum("tq,tqa,tqb->tab", p2.dx, p2.values, w, optimize=True))
        return self.pattern(VELOCITY, VELOCITY).build(self._collect(fn, [VELOCITY]))

    def coupling(self, xb: np.ndarray) -> sp.csr_matrix:
        """Unscaled ``(curl phi_j, B_k x v_i)`` (multiply by ``S`` for ``J``)."""
        def fn(sl, geom, t):
            p2, n = t[VELOCITY], t[MAGNETIC]
            bq, _ = evaluate(self.spaces.magnetic, xb, n, sl)
            s = self._signs(sl)
            # (curl phi_j) . (B x e_c) = e_c . (curl phi_j x B)
            cx = np.cross(n.curls[:, None, :, :], bq[:, :, None, :])  # (nt, nq, 12, 3)
            loc = np.einsum("tq,tqa,tqjc->tcaj", p2.dx, p2.values, cx, optimize=True) * s[:, None, None, :]
            return loc.reshape(len(loc), 30, 12)
        return self.pattern(VELOCITY, MAGNETIC).build(self._collect(fn, [VELOCITY, MAGNETIC]))

    def bubv(self, xb: np.ndarray) -> sp.csr_matrix:
        """Unscaled ``(B_k x v_j, B_k x v_i)`` (multiply by ``S Rm``)."""
        def fn(sl, geom, t):
            p2, n = t[VELOCITY], t[MAGNETIC]
            bq, _ = evaluate(self.spaces.magnetic, xb, n, sl)
            kern = np.einsum("tqi,tqi->tq", bq, bq)[:, :, None, None] * np.eye(3) - bq[:, :, :, None] * bq[:, :, None, :]
            loc = np.einsum("tq,tqa,tqb,tqcd->tcadb", p2.dx, p2.values, p2.values, kern, optimize=True)
            return loc.reshape(len(loc), 30, 30)
        return self.pattern(VELOCITY, VELOCITY).build(self._collect(fn, [VELOCITY, MAGNETIC]))

    # -- public block access ----------------------------------------------
    def full_block(self, which: str, params: PhysParams, state: MhdState | None = None) -> sp.csr_matrix:
        """Block ``which`` on the full (unconstrained) DOF sets."""
        if which not in BLOCK_KINDS:
            raise ValueError(f"invalid block kind {which!r}; expected one of {BLOCK_KINDS}")
        if which in ("J", "F", "Shat", "BuBv") and state is None:
            raise ValueError(f"block {which} depends on the Picard state")
        if which == "C":
            return (params.S / params.Rm) * self._constant("curlcurl")
        if which in ("M", "G", "B", "Lr", "Qp"):
            return self._constant(which)
        if which == "J":
            return params.S * self.coupling(state.xb)
        if which == "BuBv":
            return (params.S * params.Rm) * self.bubv(state.xb)
        F = self._F(params, state)
        if which == "F":
            return F
        return (F + (params.S * params.Rm) * self.bubv(state.xb)).tocsr()

    def _F(self, params: PhysParams, state: MhdState) -> sp.csr_matrix:
        F = (1.0 / params.Re) * self._constant("veclap")
        if params.gamma:
            F = F + params.gamma * self._constant("graddiv")
        if np.any(state.xu):
            F = F + self.convection(state.xu)
        return F.tocsr()

    def assemble_block(self, which: str, params: PhysParams, state: MhdState | None = None) -> sp.csr_matrix:
        """Block ``which`` restricted to non-Dirichlet rows and columns."""
        rk, ck = BLOCK_SPACES.get(which, (None, None))
        A = self.full_block(which, params, state)
        return restrict(A, self.spaces[rk].interior_dofs, self.spaces[ck].interior_dofs)

    # -- load vectors -----------------------------------------------------
    def velocity_load(self, f) -> np.ndarray:
        """``(f, v_i)`` on the full velocity space; ``f`` maps ``(N, 3)`` points to ``(N, 3)``."""
        def fn(sl, geom, t):
            p2 = t[VELOCITY]
            xq = geom.to_physical(self.rule.points)
            fq = np.asarray(f(xq.reshape(-1, 3)), dtype=float)
            fq = np.broadcast_to(fq, (xq.shape[0] * xq.shape[1], 3)).reshape(xq.shape)
            return np.einsum("tq,tqc,tqa->tca", p2.dx, fq, p2.values).reshape(len(fq), 30)
        return _scatter_vector(self.spaces.velocity, self._collect(fn, [VELOCITY]))

    def magnetic_load(self, h) -> np.ndarray:
        """``(h, phi_i)`` on the full magnetic space."""
        def fn(sl, geom, t):
            n = t[MAGNETIC]
            xq = geom.to_physical(self.rule.points)
            hq = np.asarray(h(xq.reshape(-1, 3)), dtype=float)
            hq = np.broadcast_to(hq, (xq.shape[0] * xq.shape[1], 3)).reshape(xq.shape)
            return np.einsum("tq,tqi,tqji->tj", n.dx, hq, n.values) * self._signs(sl)
        return _scatter_vector(self.spaces.magnetic, self._collect(fn, [MAGNETIC]))

    # -- linearized system --------------------------------------------------
    def system(self, params: PhysParams, state: MhdState, keep_full: bool = False) -> "BlockSystem":
        sps = self.spaces
        iB, iR, iU, iP = (sps[k].interior_dofs for k in BLOCK_ORDER)
        full = {
            "C": self.full_block("C", params),
            "G": self._constant("G"),
            "J": params.S * self.coupling(state.xb),
            "F": self._F(params, state),
            "B": self._constant("B"),
        }
        bubv = (params.S * params.Rm) * self.bubv(state.xb)
        blocks = dict(
            C=restrict(full["C"], iB, iB),
            M=restrict(self._constant("M"), iB, iB),
            G=restrict(full["G"], iR, iB),
            J=restrict(full["J"], iU, iB),
            F=restrict(full["F"], iU, iU),
            B=restrict(full["B"], iP, iU),
            Lr=restrict(self._constant("Lr"), iR, iR),
            Qp=restrict(self._constant("Qp"), iP, iP),
        )
        blocks["Shat"] = (blocks["F"] + restrict(bubv, iU, iU)).tocsr()
        return BlockSystem(spaces=sps, params=params, full=full if keep_full else None, **blocks)

    def full_operator_apply(self, full: dict, state: MhdState):
        """``A(state) x`` with the full-space blocks, returned per space."""
        xb, xr, xu, xp = state.as_tuple()
        yb = full["C"] @ xb + full["G"].T @ xr + full["J"].T @ xu
        yr = full["G"] @ xb
        yu = -(full["J"] @ xb) + full["F"] @ xu + full["B"].T @ xp
        yp = full["B"] @ xu
        return yb, yr, yu, yp

    def residual(self, params: PhysParams, state: MhdState, load_u: np.ndarray, load_b: np.ndarray | None = None,
                 full: dict | None = None) -> np.ndarray:
        """Picard residual ``b = (R_b, R_r, R_u, R_p)`` on interior DOFs.

        The pressure part is made orthogonal to constants (its component
        along ``Qp 1`` is removed), matching the mean-free pressure test space.
        """
        if full is None:
            full = {
                "C": self.full_block("C", params),
                "G": self._constant("G"),
                "J": params.S * self.coupling(state.xb),
                "F": self._F(params, state),
                "B": self._constant("B"),
            }
        yb, yr, yu, yp = self.full_operator_apply(full, state)
        rb = -yb if load_b is None else load_b - yb
        parts = [rb, -yr, load_u - yu, -yp]
        out = [p[self.spaces[k].interior_dofs] for p, k in zip(parts, BLOCK_ORDER)]
        out[3] = remove_constant_mode(out[3], self._constant("Qp"))
        return np.concatenate(out)


def remove_constant_mode(rp: np.ndarray, Qp: sp.spmatrix) -> np.ndarray:
    """Remove the component of a pressure functional that tests against constants."""
    m = np.asarray(Qp.sum(axis=1)).ravel()
    return rp - (rp.sum() / m.sum()) * m


def _laplace(tab: el.PhysicalTables) -> np.ndarray:
    return np.einsum("tq,tqai,tqbi->tab", tab.dx, tab.grads, tab.grads, optimize=True)


@dataclass(eq=False)
class BlockSystem:
    """Interior-restricted blocks of the linearized operator and the
    preconditioner-only matrices, for one Picard state."""

    spaces: MixedSpaces
    params: PhysParams
    C: sp.csr_matrix
    M: sp.csr_matrix
    G: sp.csr_matrix
    J: sp.csr_matrix
    F: sp.csr_matrix
    B: sp.csr_matrix
    Lr: sp.csr_matrix
    Qp: sp.csr_matrix
    Shat: sp.csr_matrix
    full: dict | None = None
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = [self.C.shape[0], self.Lr.shape[0], self.F.shape[0], self.Qp.shape[0]]
        if self.G.shape != (sizes[1], sizes[0]) or self.J.shape != (sizes[2], sizes[0]) \
                or self.B.shape != (sizes[3], sizes[2]) or self.Shat.shape != self.F.shape:
            raise ValueError("inconsistent block dimensions")
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def split(self, x: np.ndarray):
        o = self.offsets
        return x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]], x[o[3]:o[4]]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xb, xr, xu, xp = self.split(x)
        return np.concatenate([
            self.C @ xb + self.G.T @ xr + self.J.T @ xu,
            self.G @ xb,
            -(self.J @ xb) + self.F @ xu + self.B.T @ xp,
            self.B @ xu,
        ])

    def to_sparse(self) -> sp.csr_matrix:
        return sp.bmat([
            [self.C, self.G.T, self.J.T, None],
            [self.G, None, None, None],
            [-self.J, None, self.F, self.B.T],
            [None, None, self.B, None],
        ], format="csr")


def apply_dirichlet(A: sp.spmatrix, rhs: np.ndarray, constrained: np.ndarray, values: np.ndarray):
    """Eliminate Dirichlet DOFs from a square system.

    ``values`` is a full-length vector whose entries on ``constrained`` hold
    the boundary data.  Returns ``(A_II, rhs_I - A_IB g_B, interior)``.
    """
    n = A.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    values = np.asarray(values, dtype=float)
    if rhs.shape != (n,) or values.shape != (n,):
        raise ValueError(f"expected vectors of length {n}, got {rhs.shape} and {values.shape}")
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    interior = np.flatnonzero(mask)
    g = np.zeros(n)
    g[constrained] = values[constrained]
    A = A.tocsr()
    lift = A[interior] @ g
    return restrict(A, interior, interior), rhs[interior] - lift, interior


# module-level conveniences mirroring the Assembler methods

def assemble_block(spaces: MixedSpaces, params: PhysParams, state: MhdState | None, which: str,
                   assembler: Assembler | None = None) -> sp.csr_matrix:
    return (assembler or Assembler(spaces)).assemble_block(which, params, state)


def assemble_residuals(spaces: MixedSpaces, params: PhysParams, state: MhdState, f, fb=None,
                       assembler: Assembler | None = None) -> np.ndarray:
    asm = assembler or Assembler(spaces)
    load_u = asm.velocity_load(f)
    load_b = asm.magnetic_load(fb) if fb is not None else None
    return asm.residual(params, state, load_u, load_b)
