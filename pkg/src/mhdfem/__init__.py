"""Mixed finite element solver for 3D stationary incompressible MHD.

Taylor-Hood P2-P1 for velocity and pressure, second-family Nedelec edge
elements for the magnetic field and P2 for the divergence multiplier,
with Picard linearization and a block triangular preconditioner inside
flexible GMRES.
"""
from .assembly import Assembler, BlockSystem, MhdState, PhysParams
from .mesh import TetMesh, build_box_mesh
from .precond import PrecondContext, apply_precond, build_precond, coupling_block_solve
from .solver import NonlinearReport, picard_solve, solve_linearized, update_state
from .space import MixedSpaces, build_dofmap, error_norms, interpolate

__version__ = "0.1.0"

__all__ = [
    "Assembler", "BlockSystem", "MhdState", "MixedSpaces", "NonlinearReport", "PhysParams", "PrecondContext",
    "TetMesh", "apply_precond", "build_box_mesh", "build_dofmap", "build_precond", "coupling_block_solve",
    "error_norms", "interpolate", "picard_solve", "solve_linearized", "update_state",
]
