"""taperkit: adaptive dose-tapering protocols with verifiable guarantees."""

from .kernels import (
    GeneralizedResponse,
    ImpulseResponse,
    KernelError,
    LpopCertificate,
    Mode,
    OpponentCertificate,
    Violation,
    build_impulse_response,
    certify_g_lpop,
    certify_lpop,
    certify_opponent,
    coarsen,
)
from .policies import (
    ConstraintPath,
    ExponentialPolicy,
    FixedPolicy,
    IntegralPolicy,
    LinearPolicy,
    MedPolicy,
    TaperPolicy,
    baseline_dose,
    gains_from_g0_range,
    generalized_med_dose,
    integral_dose,
    med_dose,
    nat_lower_bound,
)
from .simulate import (
    NaturalProgression,
    NoiseSpec,
    ProtocolError,
    SimulationTrace,
    TraceMetrics,
    compute_metrics,
    recover_natural_progression,
    run_closed_loop,
    simulate_step,
)

__version__ = "0.1.0"
