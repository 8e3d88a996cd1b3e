"""Command-line entry point.

Subcommands ``convergence``, ``cavity``, ``coupling`` and ``solve``.
Settings resolve as built-in defaults, then a ``key = value`` config file
(``--config``), then command-line flags.  The exit code is 0 only if every
requested cell converged.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..assembly import Assembler, PhysParams
from ..mesh import build_box_mesh
from ..precond import VARIANTS, WITH_BUBV, SubSolverConfig, coupling_block_solve
from ..solver import NonlinearDivergenceError, picard_solve
from ..space import MixedSpaces, error_norms
from .experiments import ExperimentReport, coupling_tables, run_cavity, run_convergence, run_coupling_study
from .problems import CAVITY, COUPLING_BLOCK, MANUFACTURED, PROBLEMS, Tolerances, make_problem
from .vtk import export_vtk

log = logging.getLogger("mhdfem")

# per-command defaults; None means "use the problem's own default"
DEFAULTS = {
    # tight solver tolerances so the algebraic error stays below the discretization error
    "convergence": dict(n=[4, 8, 16], re=1.0, rm=1.0, s=1.0, gamma=1.0, tol_nonlinear=1e-8, tol_outer=1e-10),
    "cavity": dict(n=[4, 8], re=100.0, rm=1.0, s=100.0, gamma=1.5, variant="both"),
    "coupling": dict(n=[8, 16], s=[1.0, 10.0, 100.0], rm=None, sigma=[1.0, 1e-2, 1e-4], re=1.0, gamma=1.2),
    "solve": dict(problem=MANUFACTURED, n=[4], re=None, rm=None, s=None, gamma=None),
}
COMMON = dict(theta=1.0, sigma="auto", variant=WITH_BUBV, tol_nonlinear=1e-4, tol_outer=1e-6, tol_inner=1e-3,
              picard_maxit=30, gmres_maxit=200, subsolver="direct", backend=None, lid_width=None,
              out="results", vtk=False, verbose=False)
LIST_KEYS = {"n", "s", "sigma"}

# config-file key aliases
ALIASES = {"precond.variant": "variant", "precond.sigma": "sigma", "mesh.n": "n", "n_levels": "n"}


def read_config(path: str | Path) -> dict:
    """Parse a line-oriented ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key).replace("-", "_").replace(".", "_")
        out[key] = value
    return out


def _coerce(key: str, value, command: str):
    """Convert config-file strings to the types the flags produce."""
    if not isinstance(value, str):
        return value
    if key in LIST_KEYS and (command in ("convergence", "cavity", "coupling") or key == "n"):
        items = value.replace(",", " ").split()
        if key == "n":
            return [int(v) for v in items]
        if key == "sigma" and command != "coupling":
            return value
        return [float(v) for v in items]
    if key in ("vtk", "verbose"):
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("picard_maxit", "gmres_maxit"):
        return int(value)
    if key in ("variant", "subsolver", "backend", "out", "problem", "sigma"):
        return value
    if value.lower() in ("none", "auto", ""):
        return None
    return float(value)


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if args.config:
        for k, v in read_config(args.config).items():
            if k not in cfg:
                raise ValueError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v, command)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _sigma(value) -> float | None:
    if value is None or (isinstance(value, str) and value.lower() == "auto"):
        return None
    if isinstance(value, list):
        if len(value) != 1:
            raise ValueError("a single sigma is expected here")
        return float(value[0])
    return float(value)


def _params(cfg: dict, **fallback) -> PhysParams:
    def pick(key, name):
        v = cfg.get(key)
        if isinstance(v, list):
            v = v[0]
        return fallback[name] if v is None else float(v)
    return PhysParams(Re=pick("re", "Re"), Rm=pick("rm", "Rm"), S=pick("s", "S"), gamma=pick("gamma", "gamma"),
                      sigma=_sigma(cfg.get("sigma")), theta=float(cfg["theta"]))


def _tol(cfg: dict) -> Tolerances:
    return Tolerances(nonlinear=cfg["tol_nonlinear"], outer=cfg["tol_outer"], inner=cfg["tol_inner"],
                      picard_maxit=int(cfg["picard_maxit"]), gmres_maxit=int(cfg["gmres_maxit"]))


def _subsolver(cfg: dict) -> SubSolverConfig:
    return SubSolverConfig(kind=cfg["subsolver"], tol_inner=cfg["tol_inner"], tol_schur=cfg["tol_inner"],
                           backend=cfg["backend"])


def _report(rep: ExperimentReport, out: str, stem: str | None = None) -> None:
    path = rep.write(out, stem)
    print(path.read_text(), end="")
    log.info("wrote %s", path)


def cmd_convergence(cfg: dict) -> int:
    params = _params(cfg, Re=1.0, Rm=1.0, S=1.0, gamma=1.0)
    rep = run_convergence(sorted(cfg["n"]), params, _tol(cfg), variant=cfg["variant"], config=_subsolver(cfg),
                          verbose=cfg["verbose"])
    _report(rep, cfg["out"])
    return 0 if rep.converged else 1


def cmd_cavity(cfg: dict) -> int:
    params = _params(cfg, Re=100.0, Rm=1.0, S=100.0, gamma=1.5)
    variants = list(VARIANTS) if cfg["variant"] == "both" else [cfg["variant"]]
    rep = run_cavity(cfg["n"], params, variants, _tol(cfg), lid_width=cfg["lid_width"], config=_subsolver(cfg),
                     vtk_dir=cfg["out"] if cfg["vtk"] else None, verbose=cfg["verbose"])
    _report(rep, cfg["out"])
    return 0 if rep.converged else 1


def cmd_coupling(cfg: dict) -> int:
    sigmas = cfg["sigma"] if isinstance(cfg["sigma"], list) else [float(cfg["sigma"])]
    rms = cfg["rm"] if isinstance(cfg["rm"], list) else [cfg["rm"]] * len(cfg["s"])
    couplings = [(s, s if rm is None else rm) for s, rm in zip(cfg["s"], rms)]
    variant = WITH_BUBV if cfg["variant"] == "both" else cfg["variant"]
    rep = run_coupling_study(sigmas, couplings, cfg["n"], variant=variant, tol=cfg["tol_outer"],
                             sub_tol=cfg["tol_inner"], maxit=int(cfg["gmres_maxit"]), config=_subsolver(cfg))
    _report(rep, cfg["out"], f"coupling_{variant}")
    for sig, table in coupling_tables(rep).items():
        table.write(cfg["out"], f"coupling_{variant}_sigma={sig:g}")
    return 0 if rep.converged else 1


def cmd_solve(cfg: dict) -> int:
    name = cfg["problem"]
    n = cfg["n"][0] if isinstance(cfg["n"], list) else int(cfg["n"])
    base = make_problem(name, n)
    p0 = base.params
    params = _params(cfg, Re=p0.Re, Rm=p0.Rm, S=p0.S, gamma=p0.gamma)
    spaces = MixedSpaces(build_box_mesh(n))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if name == COUPLING_BLOCK:
        sig = params.shift
        prob = make_problem(name, n, S=params.S, Rm=params.Rm, sigma=sig)
        kr = coupling_block_solve(spaces, prob.params, sig, prob.f, prob.u0, prob.B0, tol=cfg["tol_outer"],
                                  sub_tol=cfg["tol_inner"], variant=cfg["variant"], maxit=int(cfg["gmres_maxit"]),
                                  config=_subsolver(cfg))
        result = {"problem": name, "n": n, "iterations": kr.iterations, "converged": kr.converged,
                  "final_residual": kr.final_residual}
        ok = kr.converged
    else:
        kw = {"lid_width": cfg["lid_width"]} if name == CAVITY else {}
        prob = make_problem(name, n, params=params, **kw)
        tol = _tol(cfg)
        try:
            state, nl = picard_solve(prob, params, tol.nonlinear, tol.outer, tol.inner, tol.picard_maxit,
                                     cfg["variant"], gmres_maxit=tol.gmres_maxit, config=_subsolver(cfg),
                                     spaces=spaces, assembler=Assembler(spaces), verbose=cfg["verbose"])
        except NonlinearDivergenceError as exc:
            print(json.dumps({"problem": name, "n": n, "error": str(exc), **exc.report.as_dict()}))
            return 1
        result = {"problem": name, "n": n, **nl.as_dict()}
        if prob.exact is not None:
            ex = prob.exact
            result["errors"] = {
                "u_H1": error_norms(spaces, "velocity", state.xu, ex["u"], ex["grad_u"])["H1"],
                "p_L2": error_norms(spaces, "pressure", state.xp, ex["p"])["L2"],
                "B_Hcurl": error_norms(spaces, "magnetic", state.xb, ex["B"], ex["curl_B"])["Hcurl"],
            }
        if cfg["vtk"]:
            export_vtk(state, spaces, out / f"{name}_n{n}.vtk")
        ok = nl.converged
    result["config"] = {k: v for k, v in cfg.items()}
    (out / f"solve_{name}_n{n}.json").write_text(json.dumps(result, indent=2, default=str) + "\n")
    print(json.dumps({k: v for k, v in result.items() if k != "config"}))
    return 0 if ok else 1


COMMANDS = {"convergence": cmd_convergence, "cavity": cmd_cavity, "coupling": cmd_coupling, "solve": cmd_solve}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mhdfem", description="Stationary incompressible MHD finite element solver.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--n", type=int, nargs="+", help="mesh level(s): cells per cube edge")
        p.add_argument("--re", type=float)
        p.add_argument("--rm", type=float, nargs="+" if name == "coupling" else None)
        p.add_argument("--s", type=float, nargs="+" if name == "coupling" else None)
        p.add_argument("--gamma", type=float)
        p.add_argument("--theta", type=float)
        if name == "coupling":
            p.add_argument("--sigma", type=float, nargs="+")
        else:
            p.add_argument("--sigma", help="'auto' (S/Rm) or a positive number")
        p.add_argument("--variant", choices=list(VARIANTS) + (["both"] if name == "cavity" else []))
        p.add_argument("--tol-nonlinear", type=float)
        p.add_argument("--tol-outer", type=float)
        p.add_argument("--tol-inner", type=float)
        p.add_argument("--picard-maxit", type=int)
        p.add_argument("--gmres-maxit", type=int)
        p.add_argument("--subsolver", choices=["direct", "krylov"])
        p.add_argument("--backend", choices=["pardiso", "superlu"])
        p.add_argument("--out", help="output directory")
        p.add_argument("--vtk", action="store_true", default=None, help="also export fields as legacy VTK")
        p.add_argument("--verbose", action="store_true", default=None, help="JSON-lines progress on stdout")
        if name == "cavity" or name == "solve":
            p.add_argument("--lid-width", type=float, help="lid ramp width (default 1/n)")
        if name == "solve":
            p.add_argument("--problem", choices=PROBLEMS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args)
    except (OSError, ValueError) as exc:
        print(f"mhdfem: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
