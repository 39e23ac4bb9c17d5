"""Named observability scenarios: scene + trajectory + models + expectations.

Used by the CLI and the acceptance suite so that both drive the exact same
setups.  The numeric null dimension expected for each case follows the
summary table of unobservable directions; degenerate cases record the extra
directions gained relative to a generic trajectory with the same features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import Feature, ModelSet
from .geometry import line_from_endpoints, normalized, spherical_from_euclidean
from .measurements import GlobalMeasModel, PointSensorModel
from .simulation import (
    FeatureSceneSpec,
    TrajectorySpec,
    TrueTrajectory,
    generate_trajectory,
    sample_scene,
)

ORIENTATION_REF = np.array([1.0, 0.2, 0.3])


def default_camera(f: float = 460.0) -> PointSensorModel:
    return PointSensorModel(variant="mono", f1=f, f2=f, c1=320.0, c2=240.0)


@dataclass(frozen=True)
class StandardCase:
    name: str
    scene: FeatureSceneSpec
    expected_dim: int
    analytic: str | None
    line_variant: str = "projective"
    globals: tuple = ()
    analytic_kwargs: dict = field(default_factory=dict)


_PLP = FeatureSceneSpec(points=1, lines=1, planes=1)

STANDARD_CASES = {
    c.name: c for c in [
        StandardCase("point", FeatureSceneSpec(points=1), 4, "point"),
        StandardCase("points", FeatureSceneSpec(points=3), 4, "points"),
        StandardCase("point_spherical",
                     FeatureSceneSpec(points=1, point_param="spherical"),
                     4, "point_spherical"),
        StandardCase("single_line", FeatureSceneSpec(lines=1), 5, "single_line"),
        StandardCase("single_line_direct", FeatureSceneSpec(lines=1), 5,
                     "single_line", line_variant="direct"),
        StandardCase("lines", FeatureSceneSpec(lines=2), 4, "lines"),
        StandardCase("single_plane", FeatureSceneSpec(planes=1), 7,
                     "single_plane"),
        StandardCase("single_plane_hesse",
                     FeatureSceneSpec(planes=1, plane_param="hesse"), 7,
                     "single_plane_hesse"),
        StandardCase("two_planes", FeatureSceneSpec(planes=2), 5, "two_planes"),
        StandardCase("planes", FeatureSceneSpec(planes=3), 4, "planes"),
        StandardCase("point_line", FeatureSceneSpec(points=1, lines=1), 4,
                     "point_line"),
        StandardCase("point_plane", FeatureSceneSpec(points=1, planes=1), 4,
                     "point_plane"),
        StandardCase("line_plane", FeatureSceneSpec(lines=1, planes=1), 4,
                     "line_plane"),
        StandardCase("line_plane_parallel",
                     FeatureSceneSpec(lines=1, planes=1,
                                      line_parallel_plane=True),
                     5, "line_plane_parallel"),
        StandardCase("point_line_plane", _PLP, 4, "point_line_plane"),
        StandardCase("global_pos_x", _PLP, 2, "global_pos_x",
                     globals=("pos_x",)),
        StandardCase("global_pos_y", _PLP, 2, "global_pos_y",
                     globals=("pos_y",)),
        StandardCase("global_pos_z", _PLP, 3, "global_pos_z",
                     globals=("pos_z",)),
        StandardCase("global_orientation", _PLP, 3, "global_orientation",
                     globals=("orientation",),
                     analytic_kwargs={"direction": ORIENTATION_REF}),
        StandardCase("global_pos_xyz", _PLP, 0, None,
                     globals=("pos_x", "pos_y", "pos_z")),
    ]
}


def build_standard_case(name: str, seed: int = 11, duration: float = 30.0,
                        imu_rate: float = 200.0, cam_rate: float = 1.0,
                        focal: float = 460.0):
    """Instantiate trajectory, scene and models for a named case."""
    case = STANDARD_CASES[name]
    gms = tuple(GlobalMeasModel(v) if v != "orientation"
                else GlobalMeasModel(v, ORIENTATION_REF) for v in case.globals)
    models = ModelSet(point=default_camera(focal),
                      line_variant=case.line_variant, globals=gms)
    traj = generate_trajectory(TrajectorySpec(
        duration=duration, imu_rate=imu_rate, cam_rate=cam_rate))
    rng = np.random.default_rng(seed)
    features = sample_scene(case.scene, rng, traj=traj)
    return case, traj, features, models


@dataclass(frozen=True)
class DegenerateCase:
    name: str
    expected_delta: int
    delta_is_lower_bound: bool
    duration: float
    cam_rate: float


DEGENERATE_CASES = {
    c.name: c for c in [
        DegenerateCase("pure_translation", 2, True, 30.0, 1.0),
        DegenerateCase("constant_accel", 1, False, 12.0, 2.0),
        DegenerateCase("pure_rotation", 2, False, 12.0, 2.0),
        DegenerateCase("toward_point", 1, False, 12.0, 2.0),
        DegenerateCase("parallel_to_line", 1, False, 12.0, 2.0),
    ]
}

_CA_ACCEL = (0.02, 0.015, -0.05)


def build_degenerate_case(name: str, seed: int = 11, imu_rate: float = 200.0,
                          focal: float = 460.0):
    """Degenerate trajectory plus a matched generic baseline and scene.

    Returns (case, base_traj, degen_traj, features, models, analytic_kwargs).
    """
    case = DEGENERATE_CASES[name]
    models = ModelSet(point=default_camera(focal))
    rng = np.random.default_rng(seed)
    base_spec = TrajectorySpec(duration=case.duration, imu_rate=imu_rate,
                               cam_rate=case.cam_rate)
    base = generate_trajectory(base_spec)
    kwargs: dict = {}

    if name == "pure_translation":
        scene = FeatureSceneSpec(points=1, lines=1, planes=1,
                                 point_param="spherical")
        features = sample_scene(scene, rng, traj=base)
        degen = generate_trajectory(TrajectorySpec(
            variant="pure_translation", duration=case.duration,
            imu_rate=imu_rate, cam_rate=case.cam_rate))
    elif name == "constant_accel":
        scene = FeatureSceneSpec(points=1, lines=1, point_param="spherical")
        features = sample_scene(scene, rng, traj=base)
        degen = generate_trajectory(TrajectorySpec(
            variant="constant_local_accel", duration=case.duration,
            imu_rate=imu_rate, cam_rate=case.cam_rate, accel=_CA_ACCEL,
            base_vel=(0.04, -0.03, -0.02), spin_rate=0.0, spin_amp=0.4,
            spin_freq=0.2))
        kwargs["a_body"] = np.asarray(_CA_ACCEL)
    elif name == "pure_rotation":
        scene = FeatureSceneSpec(points=1, lines=1, point_param="spherical")
        features = sample_scene(scene, rng, traj=base)
        degen = generate_trajectory(TrajectorySpec(
            variant="pure_rotation", duration=case.duration,
            imu_rate=imu_rate, cam_rate=case.cam_rate))
    elif name == "toward_point":
        target = np.array([0.6, 0.4, 5.0])
        u = normalized(target)
        point = Feature("point_spherical", spherical_from_euclidean(6.0 * u))
        scene = FeatureSceneSpec(lines=1)
        line = sample_scene(scene, rng, traj=base)[0]
        features = [point, line]
        degen = generate_trajectory(TrajectorySpec(
            variant="toward_point", duration=case.duration, imu_rate=imu_rate,
            cam_rate=case.cam_rate, target=tuple(6.0 * u)))
    elif name == "parallel_to_line":
        u = normalized(np.array([0.4, 0.25, 0.5]))
        center = np.array([0.5, -0.3, 6.0])
        line = Feature("line", line_from_endpoints(center - u, center + u))
        scene = FeatureSceneSpec(points=1, point_param="spherical")
        point = sample_scene(scene, rng, traj=base)[0]
        features = [point, line]
        degen = generate_trajectory(TrajectorySpec(
            variant="parallel_to_line", duration=case.duration,
            imu_rate=imu_rate, cam_rate=case.cam_rate, along=tuple(u)))
    else:
        raise KeyError(name)
    return case, base, degen, features, models, kwargs
