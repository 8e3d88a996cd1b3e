"""Acceptance criteria, one PASS/FAIL line each.

The lines are printed as they are produced and repeated in the terminal
summary under "acceptance criteria".  Criteria 2 to 5 run the full mesh
levels and take tens of minutes on one core.
"""
import functools
import time

import numpy as np
import pytest

import oracle
from conftest import ACCEPTANCE_LINES, assembler_for, cavity_run, spaces_for
from mhdfem.app.experiments import run_convergence
from mhdfem.app.problems import coupling_block, manufactured
from mhdfem.assembly import PhysParams
from mhdfem.mesh import build_box_mesh
from mhdfem.precond import WITH_BUBV, WITHOUT_BUBV, build_precond, apply_precond, coupling_block_solve
from mhdfem.solver import picard_solve
from mhdfem.sparse import fgmres
from mhdfem.space import MixedSpaces
from mhdfem import element as el

SIGMAS = (1.0, 1e-2, 1e-4)
COUPLINGS = (1.0, 10.0, 100.0)


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} [{criterion}] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@functools.lru_cache(maxsize=None)
def coupling_count(n: int, S: float, sigma: float, variant: str) -> int | None:
    """FGMRES count for one coupling-block cell (S = Rm); ``None`` if the solve did not converge."""
    prob = coupling_block(n, S=S, Rm=S, sigma=sigma)
    kr = coupling_block_solve(spaces_for(n), prob.params, sigma, prob.f, prob.u0, prob.B0, tol=1e-6,
                              sub_tol=1e-3, variant=variant, maxit=200, assembler=assembler_for(n))
    return kr.iterations if kr.converged else None


# -- 1 ------------------------------------------------------------------------------

def test_1_dof_counts():
    t0 = time.perf_counter()
    got = {}
    for n in (8, 16):
        s = MixedSpaces(build_box_mesh(n))
        got[n] = (s.magnetic.n_dofs + s.multiplier.n_dofs, s.velocity.n_dofs + s.pressure.n_dofs)
    dt = time.perf_counter() - t0
    ok = got == {8: (13281, 15468), 16: (97985, 112724)} and dt < 5.0
    assert record("1 DOF counts", ok, f"(B,r),(u,p): n=8 {got[8]}, n=16 {got[16]}; {dt:.2f} s")


# -- 2 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_2_convergence_orders():
    rep = run_convergence([4, 8, 16])
    rows = rep.rows
    assert rep.converged and len(rows) == 3
    bands = {"u": (1.85, 2.2), "p": (1.85, 2.3), "B": (0.9, 1.1)}
    ok = True
    parts = []
    for key, (lo, hi) in bands.items():
        orders = [r[f"order_{key}"] for r in rows[1:]]
        ok &= all(lo <= o <= hi for o in orders)
        parts.append(f"{key}: " + "/".join(f"{o:.3f}" for o in orders))
    ref = {"err_u_H1": 2.893e-3, "err_p_L2": 1.848e-3, "err_B_Hcurl": 4.811e-2}
    for k, v in ref.items():
        dev = rows[0][k] / v - 1
        ok &= abs(dev) <= 0.2
        parts.append(f"{k}(n=4)={rows[0][k]:.3e} ({dev:+.1%})")
    assert record("2 convergence orders", ok, "; ".join(parts))


# -- 3 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_3_coupling_sigma_robustness():
    counts = {(n, S, sig): coupling_count(n, S, sig, WITH_BUBV) for n in (8, 16) for S in COUPLINGS for sig in SIGMAS}
    ok = all(c is not None for c in counts.values())
    if ok:
        ok &= all(3 <= counts[n, 1.0, s] <= 8 for n in (8, 16) for s in SIGMAS)
        ok &= all(10 <= counts[n, 10.0, s] <= 20 for n in (8, 16) for s in SIGMAS)
        ok &= all(counts[16, 100.0, s] <= counts[8, 100.0, s] for s in SIGMAS)
        ok &= all(max(counts[n, S, s] for s in SIGMAS) - min(counts[n, S, s] for s in SIGMAS) <= 2
                  for n in (8, 16) for S in COUPLINGS)
    detail = "; ".join(f"n={n} S=Rm={S:g}: " + "/".join(str(counts[n, S, s]) for s in SIGMAS)
                       for n in (8, 16) for S in COUPLINGS)
    assert record("3 coupling sigma-robustness", ok, detail + " (sigma = 1/1e-2/1e-4)")


# -- 4 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_4_schur_variant_superiority():
    _, w = cavity_run(8, WITH_BUBV)
    _, wo = cavity_run(8, WITHOUT_BUBV)
    ok = w.converged and not w.gmres_capped and w.average_gmres <= 70 and w.picard_iterations <= 8
    ok &= wo.gmres_capped or wo.average_gmres >= 1.8 * w.average_gmres
    detail = (f"with_bubv {w.picard_iterations}x{w.average_gmres:.1f}, "
              f"without_bubv {'>' if wo.gmres_capped else ''}{wo.picard_iterations}x{wo.average_gmres:.1f} "
              f"(ratio {wo.average_gmres / w.average_gmres:.2f})")
    assert record("4 Schur-variant superiority", ok, detail)


# -- 5 ------------------------------------------------------------------------------

@pytest.mark.slow
def test_5_degraded_preconditioner_trend():
    f8, f16 = (coupling_count(n, 100.0, 1e-4, WITHOUT_BUBV) for n in (8, 16))
    s8, s16 = (coupling_count(n, 100.0, 1e-4, WITH_BUBV) for n in (8, 16))
    ok = None not in (f8, f16, s8, s16) and f16 >= f8 and s16 <= s8
    assert record("5 degraded-preconditioner trend", ok,
                  f"S=F: n=8 {f8} -> n=16 {f16}; S-hat: n=8 {s8} -> n=16 {s16}")


# -- optional spot check --------------------------------------------------------------

@pytest.mark.slow
def test_scalability_proxy_spot_check():
    params = PhysParams(Re=1.0, S=1.0, Rm=1.0, gamma=0.1)
    prob = manufactured(8, params)
    _, rep = picard_solve(prob, params, spaces=spaces_for(8), assembler=assembler_for(8))
    ok = rep.converged and rep.average_gmres <= 25
    assert record("optional n=8 gamma=0.1 spot check", ok,
                  f"{rep.picard_iterations} Picard steps, average GMRES {rep.average_gmres:.1f}")


# -- 6 ------------------------------------------------------------------------------

def _curl_grad():
    from test_assembly import p2_gradient_moments
    asm = assembler_for(2)
    C = asm._constant("curlcurl")
    D = p2_gradient_moments(asm.spaces.mesh)
    g = D @ np.random.default_rng(1).normal(size=D.shape[1])
    return np.abs(C @ g).max() / (abs(C).max() * np.abs(g).max())


def _edge_duality():
    from test_element import edge_moment_matrix
    D = edge_moment_matrix(lambda p: el.eval_basis("N2", p).values, el.REF_VERTICES)
    return np.abs(D - np.eye(12)).max()


def _oracle_match():
    s = spaces_for(1)
    rng = np.random.default_rng(0)
    xu, xb = rng.normal(size=s.velocity.n_dofs), rng.normal(size=s.magnetic.n_dofs)
    ref = oracle.assemble(s.mesh, xu, xb)
    asm = assembler_for(1)
    got = {k: asm._constant(k) for k in ("M", "curlcurl", "G", "Lr", "Qp", "B", "veclap", "graddiv")}
    got["convection"] = asm.convection(xu)
    got["coupling"] = asm.coupling(xb)
    got["bubv"] = type(asm)(s, order=6).bubv(xb)
    return max(np.abs(A.toarray() - ref[k]).max() / np.abs(ref[k]).max() for k, A in got.items())


def _fgmres_monotone():
    worst = -np.inf
    for seed in range(10):
        rng = np.random.default_rng(seed)
        A = np.eye(40) * 3 + rng.normal(size=(40, 40)) / np.sqrt(40)
        _, rep = fgmres(A, rng.normal(size=40), tol=1e-10, maxit=200, restart=7)
        worst = max(worst, np.diff(rep.residuals).max())
    return worst


def _back_substitution():
    from test_precond import EXACT, coupled_system
    worst = 0.0
    for variant in (WITH_BUBV, WITHOUT_BUBV):
        sysm = coupled_system(PhysParams(Re=1.0, S=2.0, Rm=3.0, gamma=1.0))
        ctx = build_precond(sysm, variant=variant, config=EXACT)
        U = ctx.upper_triangular()
        r = np.random.default_rng(2).normal(size=sysm.size)
        worst = max(worst, np.abs(U @ apply_precond(ctx, r) - r).max() / np.abs(r).max())
    return worst


def _trivial_fixed_point():
    from test_solver import ZeroProblem
    st, rep = picard_solve(ZeroProblem(), PhysParams(), spaces=spaces_for(2), assembler=assembler_for(2))
    return rep.picard_iterations if rep.converged and all(np.all(v == 0) for v in st.as_tuple()) else None


def test_6_property_suite():
    t0 = time.perf_counter()
    cg, dual, orc, mono, back, picard = (_curl_grad(), _edge_duality(), _oracle_match(), _fgmres_monotone(),
                                         _back_substitution(), _trivial_fixed_point())
    dt = time.perf_counter() - t0
    ok = cg <= 1e-12 and dual <= 1e-10 and orc <= 1e-12 and mono <= 1e-12 and back <= 1e-8 and picard == 1 and dt < 60
    detail = (f"curl.grad {cg:.1e}; edge duality {dual:.1e}; oracle {orc:.1e}; max residual increase {mono:.1e}; "
              f"back-substitution {back:.1e}; zero data Picard steps {picard}; {dt:.1f} s")
    assert record("6 property suite", ok, detail)
