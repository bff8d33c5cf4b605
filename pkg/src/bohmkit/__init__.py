"""Bohmian conditional-wavefunction dynamics and quantum-trajectory tools.

Desk-scale numerical engine for pilot-wave analyses: hard-wall grid
propagation (Crank-Nicolson), trajectory ensembles in quantum equilibrium,
conditional slices driven by the complex correlation potential, local
expectation values and the estimators built on them, explicit pointer
measurements (strong, weak, generalized) and collision-model environments
with exact oracles.  Natural units hbar = m = 1 unless configured otherwise.
"""

from .errors import (BohmkitError, ConfigurationError, RangeError,
                     NumericalError, EvaluationError, RegimeError,
                     ResourceError)
from .wavefield import (Grid, GridAxis, Wavefunction, PotentialSpec,
                        HamiltonianSpec, Hamiltonian, build_hamiltonian,
                        CrankNicolson, evolve_step, propagate,
                        WavefunctionHistory, HybridState, hybrid_product,
                        evolve_hybrid, gaussian_packet,
                        resolution_diagnostic)
from .trajectories import (VelocityField, QuantumPotentialField, Ensemble,
                           velocity_field, quantum_potential, sample_initial,
                           integrate)
from .conditional import (ConditionalWavefunction, CorrelationPotential,
                          slice_cwf, correlation_potential, evolve_cwf,
                          ewf_diagnostic, EwfDiagnostic, conditional_pipeline)
from .observables import (OperatorRep, LocalExpectationField, EstimateRecord,
                          RegionSpec, position_operator, momentum_operator,
                          kinetic_operator, hamiltonian_operator,
                          level_operator, local_expectation,
                          ensemble_expectation, quadrature_expectation,
                          local_field_integral, two_time_correlation,
                          trajectory_work, dwell_time, total_current,
                          gauss_law_current)
from .measurement import (PointerConfig, MeasurementRecord, KrausFamily,
                          strong_measure, strong_measure_batch,
                          weak_value_protocol, generalized_measure)
from .openquantum import (CollisionSpec, UnravelResult, kraus_from_collision,
                          unravel, reduced_density, partial_trace_oracle,
                          recycled_oracle, trace_distance,
                          markovianity_diagnostic, damping_collision,
                          partial_swap_collision, check_density)
from .fileio import (write_table, read_table, write_snapshot, read_snapshot,
                     write_report, config_hash_of)
from .scenarios import (ScenarioConfig, parse_config, validate_text,
                        describe_schema)

__version__ = "0.1.0"
