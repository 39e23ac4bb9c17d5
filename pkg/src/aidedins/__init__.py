"""Aided-INS error-state machinery, observability analysis and Monte-Carlo
consistency studies for point, line and plane features."""

from .estimators import EkfSlam, HybridState, Msckf
from .features import Feature, ModelSet
from .geometry import (
    CpPlane,
    HessePlane,
    PluckerLine,
    PointSpherical,
)
from .measurements import GlobalMeasModel, LineObservation, PointSensorModel
from .observability import (
    NullBasis,
    ObservabilityMatrix,
    analytic_nullspace,
    build_observability_matrix,
    numeric_nullspace,
    rank_over_time,
    verify_nullspace,
)
from .propagation import (
    ImuSample,
    ImuState,
    NoiseParams,
    StateHistory,
    StateTransition,
    compute_phi,
    compute_qk,
    propagate_mean,
)
from .simulation import (
    FeatureSceneSpec,
    McConfig,
    McReport,
    NoiseLevels,
    PriorSigmas,
    TrajectorySpec,
    generate_trajectory,
    run_monte_carlo,
    sample_scene,
    simulate_measurements,
)

__version__ = "0.1.0"
