"""Sparse linear algebra: CSR helpers, Krylov solvers and factorizations.

CSR storage, triangular factorizations (SuperLU) and incomplete LU come
from :mod:`scipy.sparse`; the Krylov drivers are implemented here so that
iteration counts and residual histories are fully under our control.
"""
from __future__ import annotations

import glob
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR: duplicates summed, column indices sorted."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def spmv_transpose(A, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if A.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: transpose of {A.shape} times vector {y.shape}")
    return A.T @ y


def _as_apply(A) -> Callable[[np.ndarray], np.ndarray]:
    if A is None:
        return lambda v: v
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda v: A @ v


@dataclass
class KrylovReport:
    """Outcome of a Krylov solve.

    ``residuals`` holds relative residual norms, starting with the initial
    one; ``iterations`` counts matrix-vector products with the operator.
    """

    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    indefinite: bool = False

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def fgmres(A, b: np.ndarray, M=None, tol: float = 1e-6, maxit: int = 200, restart: int | None = None,
           x0: np.ndarray | None = None, callback=None):
    """Flexible GMRES with right preconditioning.

    Stops when ``||b - A x|| <= tol * ||b||`` or after ``maxit`` iterations.
    ``M`` may change from one iteration to the next (e.g. an inner iterative
    solve); the preconditioned directions are stored explicitly.
    Returns ``(x, KrylovReport)``.
    """
    apply_A = _as_apply(A)
    apply_M = _as_apply(M)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    report = KrylovReport()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        report.residuals.append(0.0)
        report.converged = True
        return x, report
    restart = maxit if restart is None else max(1, int(restart))
    target = tol * bnorm

    r = b - apply_A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    report.residuals.append(beta / bnorm)
    if beta <= target:
        report.converged = True
        return x, report

    while report.iterations < maxit:
        m = min(restart, maxit - report.iterations)
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        happy = False
        for j in range(m):
            Z[j] = apply_M(V[j])
            w = apply_A(Z[j])
            # classical Gram-Schmidt with one reorthogonalization pass
            h = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h
            h2 = V[: j + 1] @ w
            w = w - V[: j + 1].T @ h2
            h = h + h2
            hnext = np.linalg.norm(w)
            H[: j + 1, j] = h
            H[j + 1, j] = hnext
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                report.breakdown = True
                break
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            report.iterations += 1
            j_done = j + 1
            est = abs(g[j + 1])
            report.residuals.append(est / bnorm)
            if callback is not None:
                callback(report)
            if est <= target:
                break
            if hnext <= 1e-14 * max(1.0, np.abs(h).max()):
                happy = True
                report.breakdown = True
                break
            V[j + 1] = w / hnext
        if j_done:
            y = scipy.linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
            x += Z[:j_done].T @ y
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
        if report.residuals[-1] * bnorm <= target or beta <= target:
            report.converged = True
            if beta > 10 * target:
                log.warning("fgmres: estimated residual %.3e but true residual %.3e",
                            report.residuals[-1], beta / bnorm)
            break
        if happy or j_done == 0:
            break
    return x, report


def jacobi(A) -> Callable[[np.ndarray], np.ndarray]:
    d = np.asarray(A.diagonal(), dtype=float)
    if np.any(d == 0):
        raise ValueError("zero diagonal entry; Jacobi preconditioner undefined")
    inv = 1.0 / d
    return lambda v: inv * v


def pcg(A, b: np.ndarray, M=None, tol: float = 1e-6, maxit: int = 1000, x0: np.ndarray | None = None):
    """Preconditioned conjugate gradients; stops on ``||r|| <= tol ||b||``.

    A non-positive curvature ``p^T A p <= 0`` ends the iteration with
    ``report.indefinite`` set.
    """
    apply_A = _as_apply(A)
    apply_M = _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = KrylovReport()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        report.residuals.append(0.0)
        report.converged = True
        return x, report
    r = b - apply_A(x) if x0 is not None else b.copy()
    report.residuals.append(np.linalg.norm(r) / bnorm)
    if report.residuals[-1] <= tol:
        report.converged = True
        return x, report
    z = apply_M(r)
    p = z.copy()
    rz = r @ z
    while report.iterations < maxit:
        Ap = apply_A(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            report.indefinite = True
            report.breakdown = True
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        report.iterations += 1
        rel = np.linalg.norm(r) / bnorm
        report.residuals.append(rel)
        if rel <= tol:
            report.converged = True
            break
        z = apply_M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, report


class SingularFactorError(RuntimeError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


def _find_bad_pivot(A: sp.spmatrix) -> int | None:
    A = sp.csr_matrix(A)
    empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(empty_rows):
        return int(empty_rows[0])
    empty_cols = np.flatnonzero(np.diff(sp.csc_matrix(A).indptr) == 0)
    if len(empty_cols):
        return int(empty_cols[0])
    if A.shape[0] <= 3000:
        _, _, U = scipy.linalg.lu(A.toarray())
        d = np.abs(np.diag(U))
        bad = np.flatnonzero(d <= 1e-13 * max(d.max(), 1.0))
        if len(bad):
            return int(bad[0])
    return None


def _load_pardiso():
    if "PYPARDISO_MKL_RT" not in os.environ:
        # pip installs mkl_rt under <prefix>/local/lib on Debian-style systems,
        # which pypardiso's own search does not cover
        for root in (sys.prefix, os.path.join(sys.prefix, "local"), "/usr/local"):
            hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")), key=len)
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        import pypardiso
    except (ImportError, OSError):
        return None
    return pypardiso


_PARDISO = _load_pardiso()
DEFAULT_BACKEND = "pardiso" if _PARDISO is not None else "superlu"


class DirectSolver:
    """Sparse LU factorization handle.

    ``backend="pardiso"`` (MKL PARDISO, nested-dissection ordering) is used
    when available; ``"superlu"`` is the portable fallback and the one that
    reports singular pivots.  Immutable once built.
    """

    def __init__(self, A, backend: str | None = None):
        A = sp.csr_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.backend = backend or DEFAULT_BACKEND
        if self.backend == "pardiso" and _PARDISO is None:
            raise RuntimeError("PARDISO backend requested but pypardiso/MKL is not available")
        empty = np.flatnonzero(np.diff(A.indptr) == 0)
        if len(empty):
            raise SingularFactorError("structurally singular matrix (empty row)", int(empty[0]))
        if self.backend == "pardiso":
            A.sort_indices()
            self._A = A
            self._ps = _PARDISO.PyPardisoSolver(mtype=11)
            self._ps.factorize(A)
            self._ps.set_phase(33)
            if self._ps.get_iparm(14) > 0:
                # perturbed pivots: accept only if a solve still meets the residual bound
                self._check_residual(A)
        elif self.backend == "superlu":
            A = sp.csc_matrix(A)
            try:
                self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SingularFactorError(f"factorization failed: {exc}", _find_bad_pivot(A)) from exc
            u = np.abs(self._lu.U.diagonal())
            if u.size and u.min() <= 1e-14 * u.max():
                raise SingularFactorError("numerically singular matrix", int(self._lu.perm_c[np.argmin(u)]))
        else:
            raise ValueError(f"unknown direct solver backend {self.backend!r}")

    def _check_residual(self, A: sp.csr_matrix) -> None:
        b = np.random.default_rng(0).standard_normal(A.shape[0])
        x = self.solve(b)
        # relative to b alone: the backward-error bound is blind to the huge x of a singular solve
        if not np.all(np.isfinite(x)) or np.abs(A @ x - b).max() > 1e-8 * np.abs(b).max():
            raise SingularFactorError("numerically singular matrix", _find_bad_pivot(A))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"dimension mismatch: {self.shape} vs {b.shape}")
        if self.backend == "pardiso":
            # phase 33 directly: skips pypardiso's per-call matrix hashing
            return self._ps._call_pardiso(self._A, np.asfortranarray(b))
        return self._lu.solve(b)

    __call__ = solve

    def __del__(self):
        ps = getattr(self, "_ps", None)
        if ps is not None:
            try:
                ps.free_memory(everything=True)
            except Exception:
                pass


def factorize(A, backend: str | None = None) -> DirectSolver:
    return DirectSolver(A, backend)


def solve(handle: DirectSolver, b: np.ndarray) -> np.ndarray:
    return handle.solve(b)


def incomplete_factorize(A, drop_tol: float = 1e-4, fill_factor: float = 10.0) -> Callable[[np.ndarray], np.ndarray]:
    """ILU(threshold) preconditioner as a callable."""
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=drop_tol, fill_factor=fill_factor)
    return ilu.solve


def write_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), field="real", symmetry="general")


def read_matrix_market(path) -> sp.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
