"""Block upper-triangular preconditioner for the linearized MHD system.

Unknowns are ordered ``(b, r, u, p)``.  One application performs four
back-substitution solves in the order ``p -> u -> r -> b``::

    Qp e_p        = -(1/Re + gamma) r_p
    Shat e_u      = r_u - B^T e_p
    Lr e_r        = -sigma r_r
    (C + sigma M) e_b = r_b - J^T e_u - G^T e_r

``Shat`` is ``F + S Rm (B_k x u, B_k x v)`` for the ``with_bubv`` variant and
plain ``F`` for ``without_bubv``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import Assembler, BlockSystem, MhdState, PhysParams, restrict
from .mesh import TetMesh
from .space import MAGNETIC, VELOCITY, MixedSpaces, interpolate
from .sparse import (DirectSolver, KrylovReport, SingularFactorError, fgmres, incomplete_factorize, jacobi,
                     pcg)

log = logging.getLogger(__name__)

WITH_BUBV = "with_bubv"
WITHOUT_BUBV = "without_bubv"
VARIANTS = (WITH_BUBV, WITHOUT_BUBV)


@dataclass(frozen=True)
class SubSolverConfig:
    """How the preconditioner's sub-blocks are solved.

    ``kind="direct"`` factorizes ``Shat``, ``C + sigma M`` and ``Lr``;
    ``kind="krylov"`` uses ILU-preconditioned GMRES at tolerance ``tol_inner``
    (``tol_schur`` for the ``Shat`` solve).  ``Qp`` is always solved by
    Jacobi-preconditioned CG at ``tol_inner``.
    """

    kind: str = "direct"
    tol_inner: float = 1e-3
    tol_schur: float = 1e-3
    maxit: int = 200
    backend: str | None = None
    ilu_drop_tol: float = 1e-4
    ilu_fill_factor: float = 10.0

    def __post_init__(self):
        if self.kind not in ("direct", "krylov"):
            raise ValueError(f"unknown sub-solver kind {self.kind!r}")
        if not (self.tol_inner > 0 and self.tol_schur > 0):
            raise ValueError("sub-solver tolerances must be positive")


class _BlockSolver:
    """Solve with one sub-block, either by factorization or ILU-GMRES."""

    def __init__(self, name: str, A: sp.csr_matrix, cfg: SubSolverConfig, tol: float):
        self.name = name
        self.A = A
        self.tol = tol
        self.maxit = cfg.maxit
        self.failures = 0
        self._direct = None
        self._ilu = None
        if A.shape[0] == 0:
            return
        try:
            if cfg.kind == "direct":
                self._direct = DirectSolver(A, backend=cfg.backend)
            else:
                self._ilu = incomplete_factorize(A, cfg.ilu_drop_tol, cfg.ilu_fill_factor)
        except (SingularFactorError, RuntimeError) as exc:
            pivot = getattr(exc, "pivot", None)
            raise SingularFactorError(f"singular preconditioner block {name}: {exc}", pivot) from exc

    def __call__(self, b: np.ndarray) -> np.ndarray:
        if b.size == 0:
            return b.copy()
        if self._direct is not None:
            return self._direct.solve(b)
        x, rep = fgmres(self.A, b, self._ilu, tol=self.tol, maxit=self.maxit)
        if not rep.converged:
            self.failures += 1
        return x


@dataclass(eq=False)
class PrecondContext:
    """Everything one preconditioner application needs; read-only during FGMRES."""

    K: sp.csr_matrix  # C + sigma M
    G: sp.csr_matrix
    J: sp.csr_matrix
    Shat: sp.csr_matrix
    B: sp.csr_matrix
    Lr: sp.csr_matrix
    Qp: sp.csr_matrix
    sigma: float
    params: PhysParams
    variant: str
    config: SubSolverConfig
    offsets: np.ndarray
    solve_K: Callable = field(repr=False)
    solve_S: Callable = field(repr=False)
    solve_Lr: Callable = field(repr=False)
    qp_jacobi: Callable = field(repr=False)
    qp_failures: int = 0

    @property
    def subsolve_failures(self) -> int:
        """Number of inexact sub-solves that missed their tolerance."""
        n = self.qp_failures
        for s in (self.solve_K, self.solve_S, self.solve_Lr):
            n += getattr(s, "failures", 0)
        return n

    def split(self, r: np.ndarray):
        o = self.offsets
        return r[o[0]:o[1]], r[o[1]:o[2]], r[o[2]:o[3]], r[o[3]:o[4]]

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_precond(self, r)

    def upper_triangular(self) -> sp.csr_matrix:
        """The explicit operator whose inverse one exact application computes."""
        p = self.params
        return sp.bmat([
            [self.K, self.G.T, self.J.T, None],
            [None, -self.Lr / self.sigma, None, None],
            [None, None, self.Shat, self.B.T],
            [None, None, None, -self.Qp / (1.0 / p.Re + p.gamma)],
        ], format="csr")


def build_precond(system: BlockSystem, params: PhysParams | None = None, variant: str = WITH_BUBV,
                  sigma: float | None = None, config: SubSolverConfig | None = None) -> PrecondContext:
    """Set up the preconditioner for one Picard state.

    ``sigma`` overrides ``params.shift`` (itself ``S / Rm`` unless set).
    Raises :class:`SingularFactorError` naming the block that failed.
    """
    params = params or system.params
    config = config or SubSolverConfig()
    if variant not in VARIANTS:
        raise ValueError(f"unknown preconditioner variant {variant!r}; expected one of {VARIANTS}")
    sig = params.shift if sigma is None else float(sigma)
    if not sig > 0:
        raise ValueError("sigma must be positive")
    K = (system.C + sig * system.M).tocsr()
    schur = system.Shat if variant == WITH_BUBV else system.F
    solve_K = _BlockSolver("C+sigma*M", K, config, config.tol_inner)
    solve_S = _BlockSolver("Shat" if variant == WITH_BUBV else "F", schur, config, config.tol_schur)
    solve_Lr = _BlockSolver("Lr", system.Lr, config, config.tol_inner)
    return PrecondContext(
        K=K, G=system.G, J=system.J, Shat=schur, B=system.B, Lr=system.Lr, Qp=system.Qp,
        sigma=sig, params=params, variant=variant, config=config, offsets=system.offsets,
        solve_K=solve_K, solve_S=solve_S, solve_Lr=solve_Lr, qp_jacobi=jacobi(system.Qp),
    )


def apply_precond(ctx: PrecondContext, r: np.ndarray) -> np.ndarray:
    """One back-substitution sweep ``p -> u -> r -> b``; returns ``e``."""
    rb, rr, ru, rp = ctx.split(np.asarray(r, dtype=float))
    p = ctx.params
    ep, rep = pcg(ctx.Qp, -(1.0 / p.Re + p.gamma) * rp, ctx.qp_jacobi, tol=ctx.config.tol_inner,
                  maxit=ctx.config.maxit)
    if not rep.converged:
        ctx.qp_failures += 1
    eu = ctx.solve_S(ru - ctx.B.T @ ep)
    er = ctx.solve_Lr(-ctx.sigma * rr)
    eb = ctx.solve_K(rb - ctx.J.T @ eu - ctx.G.T @ er)
    return np.concatenate([eb, er, eu, ep])


# -- two-field coupling block ----------------------------------------------

@dataclass(eq=False)
class CouplingBlock:
    """Interior blocks of ``[[C + sigma M, J^T], [-J, F]]`` and its right-hand side."""

    K: sp.csr_matrix
    J: sp.csr_matrix
    F: sp.csr_matrix
    Shat: sp.csr_matrix
    rhs: np.ndarray

    @property
    def nb(self) -> int:
        return self.K.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xb, xu = x[:self.nb], x[self.nb:]
        return np.concatenate([self.K @ xb + self.J.T @ xu, -(self.J @ xb) + self.F @ xu])


def coupling_block_system(spaces: MixedSpaces, params: PhysParams, sigma: float, f, u0, B0,
                          assembler: Assembler | None = None) -> CouplingBlock:
    """Assemble the magnetic/velocity coupling test system with frozen ``u0``, ``B0``."""
    asm = assembler or Assembler(spaces)
    mesh = spaces.mesh
    state = MhdState.zeros(spaces)
    state.xu = interpolate(u0, spaces.velocity, mesh)
    state.xb = interpolate(B0, spaces.magnetic, mesh)
    iB, iU = spaces.magnetic.interior_dofs, spaces.velocity.interior_dofs
    C = restrict(asm.full_block("C", params), iB, iB)
    M = restrict(asm.full_block("M", params), iB, iB)
    J = restrict(asm.full_block("J", params, state), iU, iB)
    F = restrict(asm.full_block("F", params, state), iU, iU)
    bubv = restrict(asm.full_block("BuBv", params, state), iU, iU)
    load = asm.velocity_load(f)[iU]
    return CouplingBlock(K=(C + sigma * M).tocsr(), J=J, F=F, Shat=(F + bubv).tocsr(),
                         rhs=np.concatenate([np.zeros(len(iB)), load]))


def coupling_block_solve(mesh: TetMesh | MixedSpaces, params: PhysParams, sigma: float, f, u0, B0,
                         tol: float = 1e-6, sub_tol: float = 1e-3, variant: str = WITH_BUBV,
                         maxit: int = 200, config: SubSolverConfig | None = None,
                         assembler: Assembler | None = None) -> KrylovReport:
    """FGMRES on the coupling block with the two-step triangular preconditioner
    ``Shat e_u = r_u``, ``(C + sigma M) e_b = r_b - J^T e_u``.

    Returns the Krylov report; ``report.converged`` is false if ``maxit`` was hit.
    """
    spaces = mesh if isinstance(mesh, MixedSpaces) else MixedSpaces(mesh)
    if variant not in VARIANTS:
        raise ValueError(f"unknown preconditioner variant {variant!r}")
    config = config or SubSolverConfig(tol_inner=sub_tol, tol_schur=sub_tol)
    blk = coupling_block_system(spaces, params, sigma, f, u0, B0, assembler)
    solve_K = _BlockSolver("C+sigma*M", blk.K, config, config.tol_inner)
    schur = blk.Shat if variant == WITH_BUBV else blk.F
    solve_S = _BlockSolver("Shat" if variant == WITH_BUBV else "F", schur, config, config.tol_schur)
    nb = blk.nb

    def prec(r):
        eu = solve_S(r[nb:])
        eb = solve_K(r[:nb] - blk.J.T @ eu)
        return np.concatenate([eb, eu])

    _, report = fgmres(blk.matvec, blk.rhs, prec, tol=tol, maxit=maxit)
    if not report.converged:
        log.warning("coupling block FGMRES did not converge in %d iterations", maxit)
    return report
