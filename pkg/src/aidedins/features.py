"""Tagged geometric features and the dispatch glue shared by the
observability builder, the filters and the simulator.

A feature is a (kind, value) pair; kinds and error-state dimensions:

    point            Euclidean 3-vector            3
    point_spherical  PointSpherical (r, theta, phi) 3
    line             PluckerLine                    4 (dtheta_L, dphi_L)
    plane_cp         CpPlane                        3
    plane_hesse      HessePlane                     3
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import measurements as meas
from .geometry import (
    CpPlane,
    HessePlane,
    PluckerLine,
    PointSpherical,
    euclidean_from_spherical,
    hesse_from_angles,
    line_boxplus,
)
from .measurements import (
    GlobalMeasModel,
    LineObservation,
    PointSensorModel,
    line_projection_matrix,
    project_point_pixels,
)
from .propagation import ImuState

FEATURE_DIMS = {
    "point": 3,
    "point_spherical": 3,
    "line": 4,
    "plane_cp": 3,
    "plane_hesse": 3,
}


@dataclass(frozen=True)
class Feature:
    kind: str
    value: object

    def __post_init__(self):
        if self.kind not in FEATURE_DIMS:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return FEATURE_DIMS[self.kind]

    def boxplus(self, dx) -> "Feature":
        dx = np.asarray(dx, dtype=float)
        if self.kind == "point":
            return Feature("point", np.asarray(self.value) + dx)
        if self.kind == "point_spherical":
            p = self.value
            return Feature("point_spherical",
                           PointSpherical(p.r + dx[0], p.theta + dx[1],
                                          p.phi + dx[2]))
        if self.kind == "line":
            return Feature("line", line_boxplus(self.value, dx[:3], dx[3]))
        if self.kind == "plane_cp":
            return Feature("plane_cp", CpPlane(self.value.pi + dx))
        p = self.value
        return Feature("plane_hesse",
                       hesse_from_angles(p.theta + dx[0], p.phi + dx[1],
                                         p.d + dx[2]))

    def position_like(self):
        """A representative 3D position (for visibility / scene checks)."""
        if self.kind == "point":
            return np.asarray(self.value, dtype=float)
        if self.kind == "point_spherical":
            return euclidean_from_spherical(self.value)
        if self.kind == "line":
            return self.value.closest_point()
        if self.kind == "plane_cp":
            return self.value.pi
        return self.value.d * self.value.n


def total_feature_dim(features) -> int:
    return sum(f.dim for f in features)


def feature_offsets(features):
    offsets = []
    acc = 0
    for f in features:
        offsets.append(acc)
        acc += f.dim
    return offsets


@dataclass(frozen=True)
class ModelSet:
    """Sensor models used to observe each feature kind."""

    point: PointSensorModel = field(default_factory=PointSensorModel)
    line_variant: str = "projective"
    line_halfspan: float = 1.0
    globals: tuple = ()

    def __post_init__(self):
        if self.line_variant not in ("projective", "direct"):
            raise ValueError(f"unknown line variant {self.line_variant!r}")

    @property
    def K(self):
        p = self.point
        return line_projection_matrix(p.f1, p.f2, p.c1, p.c2)


def line_endpoints(line: PluckerLine, halfspan: float):
    p0 = line.closest_point()
    return p0 - halfspan * line.v_e, p0 + halfspan * line.v_e


def analysis_payload(feature: Feature, models: ModelSet, state: ImuState):
    """Noise-free auxiliary observation data at the given true pose.

    Projective lines need the two observed image endpoints; direct lines
    need the measured local direction.  Other kinds carry no payload.
    """
    if feature.kind != "line":
        return None
    if models.line_variant == "projective":
        p1, p2 = line_endpoints(feature.value, models.line_halfspan)
        xs = project_point_pixels(models.point, meas.point_transform(state, p1))
        xe = project_point_pixels(models.point, meas.point_transform(state, p2))
        return LineObservation(xs=xs, xe=xe)
    local = meas.line_transform_to_local(state, feature.value)
    return local.v_e


def feature_blocks(feature: Feature, models: ModelSet, R, p_I, payload=None):
    """Measurement Jacobian blocks of one feature at pose (R, p_I)."""
    if feature.kind == "point":
        return meas.point_blocks(models.point, R, p_I, feature.value)
    if feature.kind == "point_spherical":
        p_g = euclidean_from_spherical(feature.value)
        return meas.point_blocks(models.point, R, p_I, p_g,
                                 spherical=feature.value)
    if feature.kind == "line":
        if models.line_variant == "projective":
            return meas.line_blocks_projective(models.K, R, p_I,
                                               feature.value, payload)
        return meas.line_blocks_direct(R, p_I, feature.value, payload)
    if feature.kind == "plane_cp":
        return meas.plane_blocks_cp(R, p_I, feature.value)
    return meas.plane_blocks_hesse(R, p_I, feature.value)


def feature_predict(feature: Feature, models: ModelSet, state: ImuState,
                    payload=None):
    """Predicted measurement of one feature from a state estimate."""
    if feature.kind == "point":
        return meas.point_measure(models.point,
                                  meas.point_transform(state, feature.value))
    if feature.kind == "point_spherical":
        p_g = euclidean_from_spherical(feature.value)
        return meas.point_measure(models.point,
                                  meas.point_transform(state, p_g))
    if feature.kind == "line":
        if models.line_variant == "projective":
            local = meas.line_transform_to_local(state, feature.value)
            return meas.line_project_and_measure(models.K, local, payload)
        return meas.line_direct_measure(state, feature.value, payload)
    if feature.kind == "plane_cp":
        return meas.plane_measure_cp(state, feature.value)
    return meas.plane_measure_hesse(state, feature.value)


def wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi
