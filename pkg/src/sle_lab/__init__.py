"""Numerical laboratory for Loewner evolutions and tip ergodicity.

Modules
-------
loewner    deterministic forward/backward Loewner engine, traces, welding,
           driving extraction from curves
processes  random driving generators for one-force-point evolutions
bessel     radial Bessel transition densities and the Monte Carlo sampler
ergodics   stationary averages, time averages, tip experiments
io         CSV/JSON artifact schemas
cli        command-line entry point
"""

from . import bessel, ergodics, io, loewner, processes
from .errors import (
    BadAnchorError,
    FlowTerminatedError,
    InsideHullError,
    NoStationaryLawError,
    NotConvergedError,
    NotUnzippableError,
    NumericalBlowupError,
    SleLabError,
    StatGateError,
    TruncationOrderError,
    ValidationError,
)
from .loewner import (
    DrivingPath,
    MapStack,
    Trace,
    WeldingTable,
    backward_flow_eval,
    backward_trace,
    compute_trace,
    compute_welding,
    evolve_forward,
    extract_wholeplane_driving,
    normalized_backward_trace,
)
from .processes import (
    DiffusionPath,
    SleParams,
    delta_of,
    reverse_driving,
    sample_brownian_driving,
    sample_kappa_rho,
    sample_stationary,
    sample_wholeplane_driving,
)
from .bessel import (
    BesselLaw,
    SamplePathY,
    gegenbauer,
    gegenbauer_norm,
    gegenbauer_supnorm,
    killed_density,
    sample_y_path,
    scale_function,
    stationary_density,
    survival_probability,
    transition_density_x,
    transition_density_y,
)
from .ergodics import (
    ErgodicReport,
    analytic_average,
    chordal_tip_experiment,
    diffusion_time_average,
    radial_tip_experiment,
    reversibility_check,
)

__version__ = "0.1.0"
