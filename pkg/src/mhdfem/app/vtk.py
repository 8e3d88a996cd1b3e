"""Legacy ASCII VTK export of a discrete MHD state."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import element as el
from ..assembly import MhdState
from ..space import MixedSpaces, evaluate, physical_tables

VTK_TETRA = 10


def point_fields(state: MhdState, spaces: MixedSpaces) -> dict:
    """Vertex values of ``velocity``, ``pressure``, ``B`` and ``Bmag``.

    Velocity and pressure are read off their vertex DOFs.  ``B`` is the
    Nedelec field at each cell centroid (its cell average), averaged onto
    vertices with volume weights.
    """
    mesh = spaces.mesh
    nv = mesh.n_vertices
    nodes = nv + mesh.n_edges
    vel = state.xu.reshape(3, nodes)[:, :nv].T.copy()
    pres = np.asarray(state.xp[:nv], dtype=float).copy()

    rule = el.quad_rule(1)
    acc = np.zeros((nv, 3))
    wsum = np.zeros(nv)
    for sl, geom in spaces.chunks():
        tab = physical_tables(spaces.magnetic, geom, rule)
        bq, _ = evaluate(spaces.magnetic, state.xb, tab, sl)
        vol = np.abs(geom.det) / 6.0
        tets = mesh.tets[sl]
        for a in range(4):
            np.add.at(acc, tets[:, a], vol[:, None] * bq[:, 0, :])
            np.add.at(wsum, tets[:, a], vol)
    bpt = acc / wsum[:, None]
    return {"velocity": vel, "pressure": pres, "B": bpt, "Bmag": np.linalg.norm(bpt, axis=1)}


def export_vtk(state: MhdState, spaces: MixedSpaces, path: str | Path, title: str = "mhdfem state") -> Path:
    """Write the mesh and point fields as a legacy ASCII unstructured grid."""
    path = Path(path)
    mesh = spaces.mesh
    fields = point_fields(state, spaces)
    nt = mesh.n_tets
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in mesh.vertices]
    lines.append(f"CELLS {nt} {5 * nt}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tets]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TETRA)] * nt
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name in ("velocity", "B"):
        lines.append(f"VECTORS {name} double")
        lines += [f"{a:.10g} {b:.10g} {c:.10g}" for a, b, c in fields[name]]
    for name in ("pressure", "Bmag"):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.10g}" for v in fields[name]]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_point_count(path: str | Path) -> int:
    """Number of points declared in a legacy VTK file."""
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                return int(line.split()[1])
    raise ValueError(f"no POINTS section in {path}")
