"""Problem catalog: manufactured solution, driven cavity, coupling-block study."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..assembly import PhysParams
from ..precond import WITH_BUBV

MANUFACTURED = "manufactured"
CAVITY = "cavity"
COUPLING_BLOCK = "coupling_block"
PROBLEMS = (MANUFACTURED, CAVITY, COUPLING_BLOCK)


@dataclass(frozen=True)
class Tolerances:
    nonlinear: float = 1e-4
    outer: float = 1e-6
    inner: float = 1e-3
    picard_maxit: int = 30
    gmres_maxit: int = 200


# error studies solve far past the discretization error; the cavity and coupling runs use the defaults
CONVERGENCE_TOLERANCES = Tolerances(nonlinear=1e-8, outer=1e-10)


@dataclass(frozen=True)
class ProblemSpec:
    """A fully resolved problem instance.

    ``f``, ``g``, ``B_s`` and ``h_b`` map points ``(N, 3)`` to ``(N, 3)``.
    ``exact`` holds ``(u, grad_u, p, B, curl_B)`` callables when known.
    ``u0``/``B0`` are the frozen fields of the coupling-block study.
    """

    name: str
    n: int
    params: PhysParams
    f: Callable
    g: Callable
    B_s: Callable
    h_b: Callable | None = None
    exact: dict | None = None
    u0: Callable | None = None
    B0: Callable | None = None
    tol: Tolerances = field(default_factory=Tolerances)
    variant: str = WITH_BUBV
    sigma: float | None = None
    extra: dict = field(default_factory=dict)

    def with_level(self, n: int) -> "ProblemSpec":
        return replace(self, n=n)


def _zero(x):
    return np.zeros((len(x), 3))


def _cols(*cs):
    return np.column_stack(cs)


# -- manufactured solution --------------------------------------------------

def manufactured(n: int = 4, params: PhysParams | None = None, **kw) -> ProblemSpec:
    """Smooth exact solution ``u = (sin z, 2 cos x, 0)``, ``p = sin y + cos 1 - 1``,
    ``B = (cos y, 0, 0)``, ``r = 0``.

    ``f`` and the magnetic source ``h_b`` are the strong-form residuals of the
    exact fields, so the discrete problem is consistent for every parameter set.
    """
    params = params or PhysParams(Re=1.0, Rm=1.0, S=1.0, gamma=1.0)
    Re, Rm, S = params.Re, params.Rm, params.S

    def u(x):
        return _cols(np.sin(x[:, 2]), 2.0 * np.cos(x[:, 0]), 0.0 * x[:, 0])

    def grad_u(x):
        out = np.zeros((len(x), 3, 3))
        out[:, 0, 2] = np.cos(x[:, 2])
        out[:, 1, 0] = -2.0 * np.sin(x[:, 0])
        return out

    def p(x):
        return np.sin(x[:, 1]) + np.cos(1.0) - 1.0

    def B(x):
        return _cols(np.cos(x[:, 1]), 0.0 * x[:, 0], 0.0 * x[:, 0])

    def curl_B(x):
        return _cols(0.0 * x[:, 0], 0.0 * x[:, 0], np.sin(x[:, 1]))

    def f(x):
        # -Re^-1 lap u + (u . grad) u + grad p - S curl B x B
        sx, cx, sy, cy, sz = np.sin(x[:, 0]), np.cos(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 1]), np.sin(x[:, 2])
        return _cols(sz / Re, -2.0 * sx * sz + cy + 2.0 * cx / Re - S * sy * cy, 0.0 * sx)

    def h_b(x):
        # S curl(B x u + Rm^-1 curl B) + grad r, with r = 0
        sx, cx, sy, cy = np.sin(x[:, 0]), np.cos(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 1])
        return S * _cols(-2.0 * cx * sy + cy / Rm, 2.0 * sx * cy, 0.0 * sx)

    exact = {"u": u, "grad_u": grad_u, "p": p, "B": B, "curl_B": curl_B}
    return ProblemSpec(MANUFACTURED, n, params, f=f, g=u, B_s=B, h_b=h_b, exact=exact, **kw)


# -- driven cavity ------------------------------------------------------------

def lid_profile(z: np.ndarray, width: float) -> np.ndarray:
    """Continuous lid ramp ``clamp((z - (1 - width)) / width, 0, 1)``."""
    # written as 1 - (1 - z)/w so the lid itself gets exactly 1
    return np.clip(1.0 - (1.0 - np.asarray(z, dtype=float)) / width, 0.0, 1.0)


def cavity(n: int = 8, params: PhysParams | None = None, lid_width: float | None = None, **kw) -> ProblemSpec:
    """Lid-driven cavity with ``f = 0``, ``u = (g1(z), 0, 0)`` on the boundary
    and ``B x n = B_s x n`` with ``B_s = (1, 0, 0)``.

    ``lid_width`` defaults to one mesh layer, ``1 / n``.
    """
    params = params or PhysParams(Re=100.0, Rm=1.0, S=100.0, gamma=1.5)
    w = 1.0 / n if lid_width is None else float(lid_width)
    if not 0 < w <= 1:
        raise ValueError("lid_width must lie in (0, 1]")

    def g(x):
        return _cols(lid_profile(x[:, 2], w), 0.0 * x[:, 0], 0.0 * x[:, 0])

    def B_s(x):
        return _cols(np.ones(len(x)), 0.0 * x[:, 0], 0.0 * x[:, 0])

    extra = {"lid_width": w}
    extra.update(kw.pop("extra", {}))
    return ProblemSpec(CAVITY, n, params, f=_zero, g=g, B_s=B_s, extra=extra, **kw)


# -- coupling-block study ----------------------------------------------------

def coupling_block(n: int = 8, S: float = 1.0, Rm: float | None = None, sigma: float = 1.0, **kw) -> ProblemSpec:
    """Frozen-coefficient magnetic/velocity block with ``Re = 1``, ``gamma = 1.2``."""
    params = PhysParams(Re=1.0, Rm=S if Rm is None else Rm, S=S, gamma=1.2, sigma=sigma)

    def f(x):
        return _cols(np.ones(len(x)), np.sin(x[:, 0]), 0.0 * x[:, 0])

    def u0(x):
        return _cols(x[:, 1], np.sin(x[:, 0] + x[:, 2]), np.ones(len(x)))

    def B0(x):
        return _cols(np.sin(x[:, 1]) + np.cos(x[:, 2]), 1.0 - np.sin(x[:, 0]), np.ones(len(x)))

    return ProblemSpec(COUPLING_BLOCK, n, params, f=f, g=_zero, B_s=_zero, u0=u0, B0=B0, sigma=sigma, **kw)


def make_problem(name: str, n: int, **kw) -> ProblemSpec:
    if name == MANUFACTURED:
        return manufactured(n, **kw)
    if name == CAVITY:
        return cavity(n, **kw)
    if name == COUPLING_BLOCK:
        return coupling_block(n, **kw)
    raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEMS}")
