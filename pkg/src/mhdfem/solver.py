"""Picard iteration for the stationary incompressible MHD system."""
from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, TextIO

import numpy as np

from .assembly import Assembler, BlockSystem, MhdState, PhysParams, remove_constant_mode
from .mesh import build_box_mesh
from .precond import WITH_BUBV, SubSolverConfig, build_precond
from .space import MixedSpaces, boundary_lift
from .sparse import KrylovReport, fgmres

log = logging.getLogger(__name__)


class Problem(Protocol):
    """What :func:`picard_solve` needs from a problem description."""

    n: int
    f: Callable  # velocity forcing, (N, 3) -> (N, 3)
    g: Callable  # velocity boundary data
    B_s: Callable  # magnetic boundary data
    h_b: Callable | None  # optional magnetic source


class NonlinearDivergenceError(RuntimeError):
    """Raised when the nonlinear residual grows for three consecutive steps."""

    def __init__(self, message: str, report: "NonlinearReport"):
        super().__init__(message)
        self.report = report


@dataclass
class NonlinearReport:
    """Per-step record of a Picard run.

    ``residuals[k]`` is ``||b_k|| / ||b_0||`` after the ``k+1``-th linear solve.
    """

    picard_iterations: int = 0
    gmres_iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    linear_converged: list = field(default_factory=list)
    initial_residual: float = 0.0
    converged: bool = False
    timings: dict = field(default_factory=lambda: {"assembly": 0.0, "setup": 0.0, "solve": 0.0})

    @property
    def average_gmres(self) -> float:
        return float(np.mean(self.gmres_iterations)) if self.gmres_iterations else 0.0

    @property
    def gmres_capped(self) -> bool:
        return not all(self.linear_converged)

    def as_dict(self) -> dict:
        return {
            "picard_iterations": self.picard_iterations,
            "gmres_iterations": list(self.gmres_iterations),
            "average_gmres": self.average_gmres,
            "residuals": list(self.residuals),
            "linear_converged": list(self.linear_converged),
            "initial_residual": self.initial_residual,
            "converged": self.converged,
            "timings": dict(self.timings),
        }


def mean_project(xp: np.ndarray, Qp) -> np.ndarray:
    """Subtract the mass-weighted mean so that ``1^T Qp xp = 0``."""
    m = np.asarray(Qp.sum(axis=1)).ravel()
    return xp - (m @ xp) / m.sum()


def solve_linearized(system: BlockSystem, rhs: np.ndarray, ctx, tol: float = 1e-6, maxit: int = 200,
                     restart: int | None = None) -> tuple[np.ndarray, KrylovReport]:
    """Monolithic FGMRES on the interior block system with preconditioner ``ctx``.

    The pressure component of ``rhs`` is made orthogonal to constants first
    and the pressure correction is mean-projected afterwards.  Returns the
    interior correction vector and the Krylov report.
    """
    rhs = np.array(rhs, dtype=float)
    if rhs.shape != (system.size,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({system.size},)")
    o = system.offsets
    rhs[o[3]:] = remove_constant_mode(rhs[o[3]:], system.Qp)
    delta, report = fgmres(system.matvec, rhs, ctx, tol=tol, maxit=maxit, restart=restart)
    delta[o[3]:] = mean_project(delta[o[3]:], system.Qp)
    return delta, report


def update_state(state: MhdState, delta: MhdState, theta: float = 1.0) -> MhdState:
    """``x_{k+1} = x_k + theta * delta`` componentwise (returns a new state)."""
    if not 0 < theta <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    parts = []
    for x, d in zip(state.as_tuple(), delta.as_tuple()):
        if x.shape != d.shape:
            raise ValueError(f"dimension mismatch {x.shape} vs {d.shape}")
        parts.append(x + theta * d)
    return MhdState(*parts)


def expand_delta(spaces: MixedSpaces, system: BlockSystem, delta: np.ndarray) -> MhdState:
    """Embed an interior correction into full-length vectors (zero on the boundary)."""
    out = MhdState.zeros(spaces)
    for full, part, kind in zip(out.as_tuple(), system.split(delta), ("magnetic", "multiplier", "velocity", "pressure")):
        full[spaces[kind].interior_dofs] = part
    return out


def initial_state(spaces: MixedSpaces, problem: Problem) -> MhdState:
    """Boundary data extended by zero; pressure and multiplier zero."""
    state = MhdState.zeros(spaces)
    state.xu = boundary_lift(problem.g, spaces.velocity, spaces.mesh)
    state.xb = boundary_lift(problem.B_s, spaces.magnetic, spaces.mesh)
    return state


def _emit(stream: TextIO | None, record: dict) -> None:
    if stream is not None:
        stream.write(json.dumps(record) + "\n")
        stream.flush()


def picard_solve(problem: Problem, params: PhysParams, tol_nonlinear: float = 1e-4, tol_outer: float = 1e-6,
                 tol_inner: float = 1e-3, maxit: int = 30, variant: str = WITH_BUBV, sigma: float | None = None,
                 gmres_maxit: int = 200, restart: int | None = None, config: SubSolverConfig | None = None,
                 spaces: MixedSpaces | None = None, assembler: Assembler | None = None,
                 verbose: bool = False, stream: TextIO | None = None) -> tuple[MhdState, NonlinearReport]:
    """Picard iteration until ``||b_k|| <= tol_nonlinear * ||b_0||``.

    ``b_k`` is the interior residual vector at iterate ``k``; ``b_0`` is taken
    at the initial state.  A linear solve that hits ``gmres_maxit`` is recorded
    and the iteration continues with the best iterate.  Raises
    :class:`NonlinearDivergenceError` if the residual grows three steps in a row.
    """
    t0 = time.perf_counter()
    if spaces is None:
        spaces = assembler.spaces if assembler is not None else MixedSpaces(build_box_mesh(problem.n))
    asm = assembler or Assembler(spaces)
    config = config or SubSolverConfig(tol_inner=tol_inner, tol_schur=tol_inner)
    stream = (stream or sys.stdout) if verbose else None
    report = NonlinearReport()

    load_u = asm.velocity_load(problem.f)
    h_b = getattr(problem, "h_b", None)
    load_b = asm.magnetic_load(h_b) if h_b is not None else None
    state = initial_state(spaces, problem)

    system = asm.system(params, state, keep_full=True)
    b = asm.residual(params, state, load_u, load_b, full=system.full)
    b0 = float(np.linalg.norm(b))
    report.initial_residual = b0
    report.timings["assembly"] += time.perf_counter() - t0
    growth = 0
    prev = 1.0

    for k in range(1, maxit + 1):
        t = time.perf_counter()
        ctx = build_precond(system, params, variant=variant, sigma=sigma, config=config)
        report.timings["setup"] += time.perf_counter() - t
        t = time.perf_counter()
        delta, lin = solve_linearized(system, b, ctx, tol=tol_outer, maxit=gmres_maxit, restart=restart)
        solve_time = time.perf_counter() - t
        report.timings["solve"] += solve_time
        del ctx
        state = update_state(state, expand_delta(spaces, system, delta), params.theta)

        t = time.perf_counter()
        system = asm.system(params, state, keep_full=True)
        b = asm.residual(params, state, load_u, load_b, full=system.full)
        report.timings["assembly"] += time.perf_counter() - t
        rel = float(np.linalg.norm(b)) / b0 if b0 > 0 else 0.0

        report.picard_iterations = k
        report.gmres_iterations.append(lin.iterations)
        report.linear_converged.append(lin.converged)
        report.residuals.append(rel)
        _emit(stream, {"step": k, "residual": rel, "gmres": lin.iterations, "gmres_converged": lin.converged,
                       "solve_time": round(solve_time, 3)})
        if rel <= tol_nonlinear:
            report.converged = True
            break
        growth = growth + 1 if rel > prev else 0
        prev = rel
        if growth >= 3:
            raise NonlinearDivergenceError(
                f"nonlinear residual grew for 3 consecutive steps (step {k}, residual {rel:.3e})", report)
    if not report.converged:
        log.warning("Picard iteration did not reach %.1e in %d steps (residual %.3e)",
                    tol_nonlinear, maxit, report.residuals[-1])
    report.timings["total"] = time.perf_counter() - t0
    return state, report
