"""Parallel Newton power flow for balanced transmission and unbalanced three-phase feeders."""
from .caseio import CaseFile, bundled_case, load_case, parse_case, write_case, write_solution
from .cim import CimOptions, solve_cim
from .linsolve import LinearSolver, LinearSolverConfig, bicgstab, lu_factorize, lu_solve
from .network import Branch, Bus, SinglePhaseNetwork, build_ybus
from .newton import NewtonOptions, PowerFlowSolution, solve_nr
from .sparse import Permutation, SparseMatrix, matrix_from_triplets, spmv
from .threephase import Branch3, Bus3, ThreePhaseNetwork, ZipLoad, build_ybus3

__version__ = "0.1.0"
