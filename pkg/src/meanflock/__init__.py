"""Mean-field stochastic particle systems with common and individual noise.

Simulation (Ito and Stratonovich discretizations), exact Wasserstein
metrics, frozen-field characteristics, and Monte-Carlo diagnostics for
flocking decay, weak-form martingale structure, Cauchy-in-N convergence,
and conditional propagation of chaos.
"""

__version__ = "0.1.0"

from .characteristics import (
    FrozenField,
    comparison_experiment,
    evolve_transport,
    pushforward,
    solve_characteristics,
    transport_residual,
)
from .diagnostics import (
    DiagnosticsReport,
    cauchy_convergence,
    chaos_test,
    flocking_energy,
    flocking_rate,
    weakform_residual,
)
from .dynamics import (
    NoisePath,
    ParticleEnsemble,
    SimConfig,
    TrajectoryRecord,
    coupled_pair,
    simulate,
    step_euler_ito,
    step_heun_stratonovich,
)
from .kernels import (
    CuckerSmaleParams,
    KernelSet,
    Truncation,
    cucker_smale_kernels,
    eval_S2,
    eval_s1,
    mean_field_B,
    mean_field_C,
    mean_field_S,
)
from .testfunctions import CylinderFunction, TestFunction
from .transport import (
    EmpiricalMeasure,
    MeasurePath,
    exp_moment,
    moments,
    support_radius,
    wasserstein,
    wasserstein_path,
)

__all__ = [
    "__version__",
    "CuckerSmaleParams",
    "CylinderFunction",
    "DiagnosticsReport",
    "EmpiricalMeasure",
    "FrozenField",
    "KernelSet",
    "MeasurePath",
    "NoisePath",
    "ParticleEnsemble",
    "SimConfig",
    "TestFunction",
    "TrajectoryRecord",
    "Truncation",
    "cauchy_convergence",
    "chaos_test",
    "comparison_experiment",
    "coupled_pair",
    "cucker_smale_kernels",
    "eval_S2",
    "eval_s1",
    "evolve_transport",
    "exp_moment",
    "flocking_energy",
    "flocking_rate",
    "mean_field_B",
    "mean_field_C",
    "mean_field_S",
    "moments",
    "pushforward",
    "simulate",
    "solve_characteristics",
    "step_euler_ito",
    "step_heun_stratonovich",
    "support_radius",
    "transport_residual",
    "wasserstein",
    "wasserstein_path",
    "weakform_residual",
]
