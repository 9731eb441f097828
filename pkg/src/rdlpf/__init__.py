"""Robust data-driven linear power flow (RD-LPF) models.

Data-driven linear power flow models are fit from historical operating
points; the robust variants here bound their linearization error with
distributionally robust chance constraints, either over a moment ambiguity
set (an SDP per output row, method ``M1``) or over a KL ball around the
empirical distribution (a budgeted-violation regression, method ``M2``).
"""
from .acpf import PFSolution, injections, solve_newton
from .datagen import Dataset, gen_eval_set, gen_history, load_dataset, save_dataset
from .drcc import (ChanceSpec, InfeasibleRowError, KLAmbiguity, MomentAmbiguity, SolverFailure, TrainingConfig,
                   assemble_m1, assemble_m2, empirical_moments, kl_adjusted_eps, train_rdlpf)
from .evalreport import ErrorReport, evaluate, render_table
from .lpfcore import LinearPFModel, VariableMap, predict, residuals, train_ls
from .netmodel import Network, build_ybus, load_case, read_case

__version__ = "0.1.0"

__all__ = [
    "ChanceSpec", "Dataset", "ErrorReport", "InfeasibleRowError", "KLAmbiguity", "LinearPFModel",
    "MomentAmbiguity", "Network", "PFSolution", "SolverFailure", "TrainingConfig", "VariableMap",
    "assemble_m1", "assemble_m2", "build_ybus", "empirical_moments", "evaluate", "gen_eval_set",
    "gen_history", "injections", "kl_adjusted_eps", "load_case", "load_dataset", "predict", "read_case",
    "render_table", "residuals", "save_dataset", "solve_newton", "train_ls", "train_rdlpf",
]
