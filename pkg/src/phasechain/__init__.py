"""Linear Schrodinger chain with conservative phase noise.

Monte-Carlo integration, an exact second-moment oracle, symbolic generator
algebra on quadratic observables and a periodic heat-equation reference.
"""
from importlib.metadata import PackageNotFoundError, version

from .chain import (OPEN, PERIODIC, ChainConfig, ChainState, Deterministic, Equilibrium, Profile, ProfileInit,
                    bulk_current, density, empirical_pairing, exchange_term, new_state, total_mass)
from .generator import (E, F, G, J, Rho, QuadCombination, QuadObservable, apply_generator,
                        apply_phase_derivative, fit_decomposition, verify_identity)
from .heat import HeatParams, heat_solve, profile_distance
from .moments import (MomentMatrix, evolve_moments, moment_rhs, stationary_moments, stationary_observables)
from .sde import (StepScheme, TrajectoryStats, ensemble_average, hamiltonian_flow, phase_noise_step,
                  run_trajectory, step, thermostat_step)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
