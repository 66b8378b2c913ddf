"""Continuous-measurement filtering: linear and normalized quantum filters, toy-Fock
oracle, Gaussian (quantum Kalman-Bucy) filters and classical cross-checks."""

__version__ = "0.1.0"

from .errors import ConfigError, DimensionError, NumericError, QFilterError
from .hilbert import (QuadratureRep, StateVector, build_quadrature_rep, ccr_residual,
                      expectation_and_covariance, gaussian_state, trace_distance,
                      weyl_expectation)
from .stochastic import (TimeGrid, WienerEnsemble, WienerPath, estimate_strong_order,
                         integrate_ode, integrate_sde, sample_wiener_ensemble, sample_wiener_path)
from .belavkin import (MarkovModel, PosteriorState, belavkin_step, run_filter, simulate_record,
                       structure_residuals, verify_duality_mc, zakai_step)
from .toyfock import (ToyFockLattice, compare_with_filter, condition_on_quadrature_record,
                      ito_table_check, nondemolition_commutators, repeated_interaction_evolve)
from .gaussian import (GaussianBelief, GaussianModel, free_particle_model, mean_step,
                       riccati_step, run_gaussian_filter, solve_riccati)
from .classical import (Diffusion1D, GridDensity, ParticleEnsemble, kalman_bucy_classical,
                        particle_filter_step, quantum_to_classical_generator, zakai_pde_step)

__all__ = [
    "ConfigError", "DimensionError", "NumericError", "QFilterError",
    "QuadratureRep", "StateVector", "build_quadrature_rep", "ccr_residual",
    "expectation_and_covariance", "gaussian_state", "trace_distance", "weyl_expectation",
    "TimeGrid", "WienerEnsemble", "WienerPath", "estimate_strong_order", "integrate_ode",
    "integrate_sde", "sample_wiener_ensemble", "sample_wiener_path",
    "MarkovModel", "PosteriorState", "belavkin_step", "run_filter", "simulate_record",
    "structure_residuals", "verify_duality_mc", "zakai_step",
    "ToyFockLattice", "compare_with_filter", "condition_on_quadrature_record",
    "ito_table_check", "nondemolition_commutators", "repeated_interaction_evolve",
    "GaussianBelief", "GaussianModel", "free_particle_model", "mean_step", "riccati_step",
    "run_gaussian_filter", "solve_riccati",
    "Diffusion1D", "GridDensity", "ParticleEnsemble", "kalman_bucy_classical",
    "particle_filter_step", "quantum_to_classical_generator", "zakai_pde_step",
]
