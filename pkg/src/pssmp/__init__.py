"""Simulation and verification of positive self-similar Markov processes.

Two constructions are provided: the Lamperti time change of a killed
spectrally negative Levy process, and direct solution of the index-one jump
SDE driven by xi/a.  ``stats`` compares them in law.
"""

from .errors import (ConfigError, ContractError, DomainError, DriverError,
                     EscalationLimitError, NumericalError, PreconditionError, SolverError)
from .lamperti import (Path, TimeChange, exp_functional, inverse_time_change,
                       lamperti_transform, power_map, simulate_lamperti)
from .levy import (JumpSpec, LevyPath, LevyTriplet, NegExponential, PointMass, SmallJumps,
                   Trichotomy, Uniform, bessel_triplet, classify_trichotomy, cramer_root,
                   drift_coefficient, laplace_exponent, simulate_levy_path)
from .oracles import (BesqSpec, besq_absorbed_sampler, besq_laplace, besq_mean, besq_sampler,
                      deterministic_descent)
from .sde import (Drivers, SolverParams, cap_escalation, generator_apply,
                  pathwise_scaling_check, simulate_sde, simulate_truncated, solve_sde,
                  solve_truncated)
from .stats import (Sample, TestResult, ks_two_sample, law_equality_test,
                    leave_zero_continuity_check, scaling_law_test, zero_start_convergence)

__version__ = "0.1.0"
