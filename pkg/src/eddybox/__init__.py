"""Slow-fast stochastic two-box ocean model with non-Gaussian eddy forcing.

Simulation of the full five-dimensional system and of its averaged and
Gaussian-homogenized reductions, backward Euler integration, parallel
reproducible Monte Carlo ensembles, and the climatological, rare-event, and
regime-transition statistics used to compare the three model variants.
"""

from .model import (
    BifurcationResult,
    DimensionalScales,
    Equilibrium,
    LyapunovReport,
    ModelParams,
    ModelVariant,
    Stability,
    VariantKind,
    bifurcation_scan,
    diffusion,
    drift,
    drift_jacobian,
    find_equilibria,
    lyapunov_certificate,
    make_variant,
    slow_drift,
    standard_params,
    suggest_alpha,
)
from .integrator import (
    IntegratorConfig,
    ProbeRow,
    StepFailureError,
    Trajectory,
    be_step,
    be_step_with_residual,
    load_trajectory,
    save_trajectory,
    save_trajectory_csv,
    simulate_trajectory,
    weak_convergence_probe,
)
from .homogenization import (
    DiffusionCorrection,
    FastStationaryCov,
    OracleEstimate,
    diffusion_correction,
    fast_stationary_covariance,
    fast_system_matrices,
    mean_eddy_flux,
    oracle_estimate,
    sample_stationary,
    sqrt_psd,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleDataset,
    ForecastResult,
    MemberFailure,
    TransitionCurves,
    forecast_experiment,
    member_rng,
    run_ensemble,
    transition_experiment,
)
from .stats import (
    AcfResult,
    DensityEstimate,
    DensityTable,
    EnsembleStats,
    EventProbability,
    EventSpec,
    autocorrelation,
    density_estimate,
    event_probability,
    merge,
)

__version__ = "0.1.0"
