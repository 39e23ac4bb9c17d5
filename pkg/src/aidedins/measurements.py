"""Measurement functions and analytic Jacobians for all supported sensors.

Every model exposes two things: a measurement function (used both to
simulate data and to predict residuals) and Jacobian *blocks* with respect
to the pose error (dtheta, p~) and the feature error state.  The gyro-bias,
velocity and accel-bias columns of every measurement row are exactly zero;
assembling a full row against a (15 + m)-dim error state is just placing
the blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CpPlane,
    HessePlane,
    PluckerLine,
    PointSpherical,
    bearing_perp_basis,
    plane_normal_angles,
    skew,
    spherical_point_jacobian,
    DegeneratePlane,
    SingularElevation,
)
from .propagation import IMU_DIM, TH, POS, ImuState


class BehindCamera(ValueError):
    """Projective model evaluated at a point with non-positive depth."""


class ZeroRange(ValueError):
    """Range model evaluated at the sensor origin."""


class DegenerateProjection(ValueError):
    """Projected line has no image direction (l1 = l2 = 0)."""


class DimensionMismatch(ValueError):
    """Operands with incompatible error-state dimensions."""


@dataclass(frozen=True)
class MeasurementBlocks:
    """Nonzero Jacobian blocks of a measurement w.r.t. one pose and one feature."""

    theta: np.ndarray
    pos: np.ndarray
    feat: np.ndarray

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    def full_row(self, m_feat: int, feat_offset: int):
        """Place the blocks into rows against a (15 + m_feat) error state."""
        H = np.zeros((self.rows, IMU_DIM + m_feat))
        H[:, TH] = self.theta
        H[:, POS] = self.pos
        d = self.feat.shape[1]
        H[:, IMU_DIM + feat_offset:IMU_DIM + feat_offset + d] = self.feat
        return H


# ---------------------------------------------------------------------------
# point measurements

POINT_VARIANTS = ("range_only", "mono", "range_bearing", "stereo")


@dataclass(frozen=True)
class PointSensorModel:
    variant: str = "mono"
    f1: float = 1.0
    f2: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    baseline: float = 0.1

    def __post_init__(self):
        if self.variant not in POINT_VARIANTS:
            raise ValueError(f"unknown point sensor variant {self.variant!r}")
        if self.f1 <= 0 or self.f2 <= 0:
            raise ValueError("focal lengths must be positive")
        if self.variant == "stereo" and self.baseline <= 0:
            raise ValueError("stereo baseline must be positive")

    @property
    def dim(self) -> int:
        return {"range_only": 1, "mono": 2, "range_bearing": 3, "stereo": 3}[self.variant]


def point_transform(state: ImuState, p_global):
    """Global point into the sensor frame: R (p_f - p_I)."""
    return state.R @ (np.asarray(p_global, dtype=float) - state.p)


def _check_point_domain(model: PointSensorModel, p):
    if model.variant == "range_only":
        if np.linalg.norm(p) < 1e-9:
            raise ZeroRange("range undefined at the origin")
    elif p[2] <= 1e-9:
        raise BehindCamera("point has non-positive depth")


def point_measure(model: PointSensorModel, p_local, sigma=None, rng=None):
    """Noise-free measurement of a local point, plus optional residual noise."""
    p = np.asarray(p_local, dtype=float)
    _check_point_domain(model, p)
    x, y, z = p
    if model.variant == "range_only":
        z_m = np.array([np.linalg.norm(p)])
    elif model.variant == "mono":
        z_m = np.array([x / z, y / z])
    elif model.variant == "range_bearing":
        z_m = np.array([np.linalg.norm(p), x / z, y / z])
    else:
        b = model.baseline
        z_m = np.array([x / z, (x - b) / z, y / z])
    if sigma is not None:
        z_m = z_m + np.asarray(sigma) * rng.standard_normal(z_m.shape)
    return z_m


def point_projection_jacobian(model: PointSensorModel, p_local):
    """Exact d(measurement)/d(local point), rows annihilate the bearing."""
    p = np.asarray(p_local, dtype=float)
    _check_point_domain(model, p)
    x, y, z = p
    r = np.linalg.norm(p)
    H_r = p[None, :] / r
    if model.variant == "range_only":
        return H_r
    H_b = np.array([[1.0 / z, 0.0, -x / z ** 2],
                    [0.0, 1.0 / z, -y / z ** 2]])
    if model.variant == "mono":
        return H_b
    if model.variant == "range_bearing":
        return np.vstack([H_r, H_b])
    b = model.baseline
    return np.array([[1.0 / z, 0.0, -x / z ** 2],
                     [1.0 / z, 0.0, -(x - b) / z ** 2],
                     [0.0, 1.0 / z, -y / z ** 2]])


def bearing_noise_shaping(p_local):
    """Appendix-style noise Jacobian of the universal bearing model.

    H_n = z_f [b_perp1 b_perp2]^T [I2; 0] for a point with depth z_f.
    """
    p = np.asarray(p_local, dtype=float)
    b1, b2 = bearing_perp_basis(p)
    B = np.vstack([b1, b2])
    return p[2] * B @ np.vstack([np.eye(2), np.zeros((1, 2))])


def point_blocks(model: PointSensorModel, R, p_I, p_global,
                 spherical: PointSpherical | None = None) -> MeasurementBlocks:
    """Jacobian blocks of a point measurement at pose (R, p_I).

    The feature block is w.r.t. the Euclidean point error, or the
    (r~, theta~, phi~) error when ``spherical`` is given.
    """
    p_global = np.asarray(p_global, dtype=float)
    p_local = R @ (p_global - p_I)
    H_proj = point_projection_jacobian(model, p_local)
    theta = H_proj @ skew(p_local)
    pos = -H_proj @ R
    feat = H_proj @ R
    if spherical is not None:
        feat = feat @ spherical_point_jacobian(spherical)
    return MeasurementBlocks(theta=theta, pos=pos, feat=feat)


def point_jacobian(model: PointSensorModel, state: ImuState, p_global,
                   spherical: PointSpherical | None = None):
    """Full measurement Jacobian for a single-point state (15 + 3 columns)."""
    blocks = point_blocks(model, state.R, state.p, p_global, spherical)
    return blocks.full_row(blocks.feat.shape[1], 0)


# ---------------------------------------------------------------------------
# projective line measurements

@dataclass(frozen=True)
class LineObservation:
    """Two homogeneous image points expected to lie on the projected line."""

    xs: np.ndarray
    xe: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        xe = np.asarray(self.xe, dtype=float)
        if xs[2] != 1.0 or xe[2] != 1.0:
            raise ValueError("homogeneous image points must end with 1")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "xe", xe)


def line_projection_matrix(f1: float, f2: float, c1: float, c2: float):
    """Projection matrix mapping the local line moment to image line coords."""
    return np.array([
        [f2, 0.0, 0.0],
        [0.0, f1, 0.0],
        [-f2 * c1, -f1 * c2, f1 * f2],
    ])


def project_point_pixels(model: PointSensorModel, p_local):
    """Pinhole projection to a homogeneous pixel point [u, v, 1]."""
    p = np.asarray(p_local, dtype=float)
    if p[2] <= 1e-9:
        raise BehindCamera("point has non-positive depth")
    return np.array([model.f1 * p[0] / p[2] + model.c1,
                     model.f2 * p[1] / p[2] + model.c2, 1.0])


def line_transform_to_local(state: ImuState, line: PluckerLine) -> PluckerLine:
    """Global Plucker line into the sensor frame."""
    R = state.R
    n_local = R @ (line.n - skew(state.p) @ line.v)
    v_local = R @ line.v
    return PluckerLine(n=n_local, v=v_local)


def line_project_and_measure(K, line_local: PluckerLine, obs: LineObservation):
    """Point-to-line distances of the two observed endpoints, z = [ds, de]."""
    l_prime = K @ line_local.n
    ln = np.hypot(l_prime[0], l_prime[1])
    if ln < 1e-12:
        raise DegenerateProjection("projected line has no image direction")
    return np.array([obs.xs @ l_prime, obs.xe @ l_prime]) / ln


def _h_l(l_prime, obs: LineObservation):
    """2x3 Jacobian of the distances w.r.t. the image line l'; H_l l' = 0."""
    l1, l2, _ = l_prime
    ln2 = l1 * l1 + l2 * l2
    if ln2 < 1e-24:
        raise DegenerateProjection("projected line has no image direction")
    ln = np.sqrt(ln2)
    e1 = obs.xs @ l_prime
    e2 = obs.xe @ l_prime
    u1, v1, _ = obs.xs
    u2, v2, _ = obs.xe
    return np.array([
        [u1 - l1 * e1 / ln2, v1 - l2 * e1 / ln2, 1.0],
        [u2 - l1 * e2 / ln2, v2 - l2 * e2 / ln2, 1.0],
    ]) / ln


def _line_local_blocks(R, p_I, line: PluckerLine):
    """Blocks of the local moment m = n - [p x] v (before rotation by R)."""
    h_l1 = (skew(line.n) - skew(skew(p_I) @ line.v)) @ R.T
    h_l2 = skew(line.n) - skew(p_I) @ skew(line.v)
    h_l3 = -((line.w2 / line.w1) * line.n
             + (line.w1 / line.w2) * skew(p_I) @ line.v)
    return h_l1, h_l2, h_l3


def line_blocks_projective(K, R, p_I, line: PluckerLine,
                           obs: LineObservation) -> MeasurementBlocks:
    m = line.n - skew(p_I) @ line.v
    l_prime = K @ (R @ m)
    H_l = _h_l(l_prime, obs)
    HK = H_l @ K @ R
    h_l1, h_l2, h_l3 = _line_local_blocks(R, p_I, line)
    return MeasurementBlocks(
        theta=HK @ h_l1,
        pos=HK @ skew(line.v),
        feat=np.column_stack([HK @ h_l2, HK @ h_l3]),
    )


def line_jacobian(state: ImuState, line: PluckerLine, K, obs: LineObservation):
    """Full 2 x (15 + 4) Jacobian for a single-line state."""
    blocks = line_blocks_projective(K, state.R, state.p, line, obs)
    return blocks.full_row(4, 0)


# ---------------------------------------------------------------------------
# direct line measurements (point-cloud line extraction)

def line_direct_measure(state: ImuState, line: PluckerLine, v_m):
    """z = [v_m x v_local ; d_local] against a measured unit direction."""
    local = line_transform_to_local(state, line)
    v_m = np.asarray(v_m, dtype=float)
    return np.concatenate([np.cross(v_m, local.v), [local.distance]])


def line_blocks_direct(R, p_I, line: PluckerLine, v_m) -> MeasurementBlocks:
    local_n = R @ (line.n - skew(p_I) @ line.v)
    local_v = R @ line.v
    nn, nv = np.linalg.norm(local_n), np.linalg.norm(local_v)

    dz_dL = np.zeros((4, 6))
    dz_dL[:3, 3:] = skew(np.asarray(v_m, dtype=float))
    dz_dL[3, :3] = local_n / (nn * nv)
    dz_dL[3, 3:] = -(nn / nv ** 3) * local_v

    h_l1, h_l2, h_l3 = _line_local_blocks(R, p_I, line)
    dn = {
        "theta": R @ h_l1,
        "pos": R @ skew(line.v),
        "feat": np.column_stack([R @ h_l2, R @ h_l3]),
    }
    dv = {
        "theta": R @ skew(line.v) @ R.T,
        "pos": np.zeros((3, 3)),
        "feat": np.column_stack([R @ skew(line.v),
                                 (line.w1 / line.w2) * (R @ line.v)]),
    }
    return MeasurementBlocks(
        theta=dz_dL @ np.vstack([dn["theta"], dv["theta"]]),
        pos=dz_dL @ np.vstack([dn["pos"], dv["pos"]]),
        feat=dz_dL @ np.vstack([dn["feat"], dv["feat"]]),
    )


def line_direct_measure_and_jacobian(state: ImuState, line: PluckerLine, v_m):
    z = line_direct_measure(state, line, v_m)
    H = line_blocks_direct(state.R, state.p, line, v_m).full_row(4, 0)
    return z, H


# ---------------------------------------------------------------------------
# plane measurements

def plane_transform_to_local(state: ImuState, plane: CpPlane) -> CpPlane:
    """Closest point of the plane in the sensor frame; rejects crossings."""
    n, d = plane.normal, plane.d
    d_local = d - state.p @ n
    if abs(d_local) <= 1e-6:
        raise DegeneratePlane("sensor lies on the plane")
    return CpPlane(pi=d_local * (state.R @ n))


def plane_measure_cp(state: ImuState, plane: CpPlane, sigma=None, rng=None):
    z = plane_transform_to_local(state, plane).pi
    if sigma is not None:
        z = z + sigma * rng.standard_normal(3)
    return z


def plane_blocks_cp(R, p_I, plane: CpPlane) -> MeasurementBlocks:
    n, d = plane.normal, plane.d
    nnT = np.outer(n, n)
    d_local = d - p_I @ n
    h_pi1 = d_local * skew(n) @ R.T
    h_pi2 = (d_local * np.eye(3) - np.outer(n, p_I) + 2.0 * (p_I @ n) * nnT) / d
    return MeasurementBlocks(theta=R @ h_pi1, pos=-R @ nnT, feat=R @ h_pi2)


def plane_jacobian_cp(state: ImuState, plane: CpPlane):
    """Full 3 x (15 + 3) Jacobian for a single CP-plane state."""
    return plane_blocks_cp(state.R, state.p, plane).full_row(3, 0)


def plane_measure_hesse(state: ImuState, plane: HessePlane,
                        sigma=None, rng=None):
    """Local (theta, phi, d) of a Hesse plane."""
    n_local = state.R @ plane.n
    theta, phi = plane_normal_angles(n_local)
    d_local = plane.d - state.p @ plane.n
    z = np.array([theta, phi, d_local])
    if sigma is not None:
        z = z + np.asarray(sigma) * rng.standard_normal(3)
    return z


def plane_blocks_hesse(R, p_I, plane: HessePlane) -> MeasurementBlocks:
    n_local = R @ plane.n
    n1, n2, n3 = n_local
    rho2 = n1 * n1 + n2 * n2
    if rho2 <= 1e-12:
        raise SingularElevation("local plane normal along the vertical axis")
    rho = np.sqrt(rho2)
    H_pi = np.array([
        [-n2 / rho2, n1 / rho2, 0.0, 0.0],
        [-n1 * n3 / rho, -n2 * n3 / rho, rho, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])

    theta_g, phi_g = plane.theta, plane.phi
    perp1 = np.array([-np.sin(theta_g), np.cos(theta_g), 0.0])
    perp2 = np.array([-np.cos(theta_g) * np.sin(phi_g),
                      -np.sin(theta_g) * np.sin(phi_g), np.cos(phi_g)])
    cphi = np.cos(phi_g)

    chain_theta = np.vstack([skew(n_local), np.zeros((1, 3))])
    chain_pos = np.vstack([np.zeros((3, 3)), -plane.n[None, :]])
    chain_feat = np.zeros((4, 3))
    chain_feat[:3, 0] = R @ (cphi * perp1)
    chain_feat[:3, 1] = R @ perp2
    chain_feat[3, 0] = -p_I @ (cphi * perp1)
    chain_feat[3, 1] = -p_I @ perp2
    chain_feat[3, 2] = 1.0
    return MeasurementBlocks(theta=H_pi @ chain_theta, pos=H_pi @ chain_pos,
                             feat=H_pi @ chain_feat)


def plane_jacobian_hesse(state: ImuState, plane: HessePlane):
    z = plane_measure_hesse(state, plane)
    H = plane_blocks_hesse(state.R, state.p, plane).full_row(3, 0)
    return z, H


# ---------------------------------------------------------------------------
# global measurements

GLOBAL_VARIANTS = ("pos_x", "pos_y", "pos_z", "orientation")


@dataclass(frozen=True)
class GlobalMeasModel:
    variant: str
    direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        if self.variant not in GLOBAL_VARIANTS:
            raise ValueError(f"unknown global measurement {self.variant!r}")
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", d / np.linalg.norm(d))

    @property
    def dim(self) -> int:
        return 3 if self.variant == "orientation" else 1


def global_measure(model: GlobalMeasModel, state: ImuState,
                   sigma=None, rng=None):
    if model.variant == "orientation":
        z = state.R @ model.direction
    else:
        axis = {"pos_x": 0, "pos_y": 1, "pos_z": 2}[model.variant]
        z = np.array([state.p[axis]])
    if sigma is not None:
        z = z + sigma * rng.standard_normal(z.shape)
    return z


def global_blocks(model: GlobalMeasModel, R) -> MeasurementBlocks:
    if model.variant == "orientation":
        theta = skew(R @ model.direction)
        pos = np.zeros((3, 3))
        feat = np.zeros((3, 0))
    else:
        axis = {"pos_x": 0, "pos_y": 1, "pos_z": 2}[model.variant]
        theta = np.zeros((1, 3))
        pos = np.zeros((1, 3))
        pos[0, axis] = 1.0
        feat = np.zeros((1, 0))
    return MeasurementBlocks(theta=theta, pos=pos, feat=feat)


def global_measure_and_jacobian(model: GlobalMeasModel, state: ImuState,
                                m_feat: int = 0):
    z = global_measure(model, state)
    H = global_blocks(model, state.R).full_row(m_feat, 0)
    return z, H
