"""Problem catalog, experiment runners, VTK export and the command-line interface."""
from .experiments import ExperimentReport, run_cavity, run_convergence, run_coupling_study
from .problems import ProblemSpec, cavity, coupling_block, make_problem, manufactured
from .vtk import export_vtk

__all__ = [
    "ExperimentReport", "ProblemSpec", "cavity", "coupling_block", "export_vtk", "make_problem", "manufactured",
    "run_cavity", "run_convergence", "run_coupling_study",
]
