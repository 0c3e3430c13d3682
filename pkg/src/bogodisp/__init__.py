"""Spectral Hartree solver, Bogoliubov pair-kernel flow and a few-mode Fock-space oracle."""

from .fitting import DecayFit, bound_certificate, fit_decay, wrap_time
from .flow import BogoliubovState, evolve_theta, flow_step, init_theta, matrix_ode_oracle, symplectic_defect
from .fock import (
    FockBasis,
    FockState,
    QuadraticGenerator,
    build_generator_matrix,
    check_wick_quartic,
    enumerate_basis,
    evolve_fock,
    number_moments,
    two_point_functions,
)
from .grid import Field, GridSpec, fourier_transform, gaussian, make_grid
from .hartree import Potential, build_bump_potential, hartree_evolve, hartree_step
from .harness import ExperimentConfig, load_config, parse_config, run_experiment
from .kernels import KernelMatrix, build_k1, build_k2, project_orthogonal, verify_kernel_bounds

__version__ = "0.1.0"
