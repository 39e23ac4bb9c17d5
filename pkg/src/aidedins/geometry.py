"""Rotation algebra and feature parameterizations (points, lines, planes).

Conventions used throughout the package:

* Quaternions are JPL-style, scalar-last arrays ``[x, y, z, w]``.  For an
  attitude quaternion ``q`` the matrix ``quat_to_rot(q)`` maps global-frame
  vectors into the local (sensor) frame.
* The attitude error state ``dtheta`` is defined through
  ``R_true = so3_exp(-dtheta) @ R_est``; ``quat_boxplus`` applies exactly
  that perturbation.
* Plucker lines are stored un-normalized as ``(n, v)`` with ``n = P1 x P2``
  and ``v = P2 - P1``.  Their 4-dof error state is ``(dtheta_L, dphi_L)``:
  a rotation of the orthonormal frame ``R_L`` plus a rotation of the
  2-vector ``(w1, w2) = (|n|, |v|)``.  The overall norm of ``(w1, w2)`` is
  not part of the error state (the coordinates are homogeneous).
* Planes come either as the closest point ``Pi = d * n`` (3-dof, vector
  error state) or in Hesse form ``(n, d)`` with minimal error state
  ``(theta~, phi~, d~)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateLine(ValueError):
    """Line with vanishing direction or moment (passes through the origin)."""


class DegeneratePlane(ValueError):
    """Plane through the origin; the closest-point parameterization fails."""


class SingularElevation(ValueError):
    """Spherical / Hesse angles undefined (elevation at +-pi/2 or zero range)."""


def skew(v):
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi):
    """Rodrigues formula, exp of the cross-product matrix of ``phi``."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return np.eye(3) + skew(phi)
    axis = phi / angle
    s, c = np.sin(angle), np.cos(angle)
    return c * np.eye(3) + (1.0 - c) * np.outer(axis, axis) + s * skew(axis)


def normalized(v):
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return np.asarray(v, dtype=float) / n


# ---------------------------------------------------------------------------
# quaternions (JPL, scalar last)

QUAT_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q):
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_multiply(q, p):
    """JPL product: quat_to_rot(q (*) p) == quat_to_rot(q) @ quat_to_rot(p)."""
    qv, qw = np.asarray(q[:3]), q[3]
    pv, pw = np.asarray(p[:3]), p[3]
    vec = qw * pv + pw * qv - np.cross(qv, pv)
    w = qw * pw - qv @ pv
    return np.concatenate([vec, [w]])


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_rot(q):
    """Rotation matrix of a JPL quaternion (global -> local for attitude)."""
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy + wz), 2.0 * (xz - wy)],
        [2.0 * (xy - wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz + wx)],
        [2.0 * (xz + wy), 2.0 * (yz - wx), 1.0 - 2.0 * (xx + yy)],
    ])


def rot_to_quat(R):
    """Inverse of quat_to_rot (Shepperd's method), scalar-last output."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    # Note the JPL sign pattern: off-diagonal differences are negated
    # relative to the Hamilton version.
    if tr > 0.0:
        w = 0.5 * np.sqrt(1.0 + tr)
        s = 0.25 / w
        x = s * (R[1, 2] - R[2, 1])
        y = s * (R[2, 0] - R[0, 2])
        z = s * (R[0, 1] - R[1, 0])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        vec = np.zeros(3)
        vec[i] = 0.5 * s
        vec[j] = 0.5 * (R[i, j] + R[j, i]) / s
        vec[k] = 0.5 * (R[i, k] + R[k, i]) / s
        w = 0.5 * (R[j, k] - R[k, j]) / s
        x, y, z = vec
    q = quat_normalize(np.array([x, y, z, w]))
    if q[3] < 0.0:
        q = -q
    return q


def quat_from_rotvec(dtheta):
    """Error quaternion with quat_to_rot(q) == so3_exp(-dtheta)."""
    dtheta = np.asarray(dtheta, dtype=float)
    angle = np.linalg.norm(dtheta)
    if angle < 1e-12:
        return quat_normalize(np.concatenate([0.5 * dtheta, [1.0]]))
    axis = dtheta / angle
    return np.concatenate([np.sin(0.5 * angle) * axis, [np.cos(0.5 * angle)]])


def quat_boxplus(q, dtheta):
    """Apply the attitude error: result rotation = so3_exp(-dtheta) @ R(q)."""
    return quat_normalize(quat_multiply(quat_from_rotvec(dtheta), q))


def quat_boxminus(q, q_ref):
    """Rotation vector with q == quat_boxplus(q_ref, result), exactly."""
    dq = quat_multiply(q, quat_conjugate(q_ref))
    if dq[3] < 0.0:
        dq = -dq
    nv = np.linalg.norm(dq[:3])
    if nv < 1e-12:
        return 2.0 * dq[:3] / dq[3]
    return 2.0 * np.arctan2(nv, dq[3]) * dq[:3] / nv


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, in radians."""
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def bearing_perp_basis(b):
    """Two unit vectors orthogonal to ``b`` and to each other.

    Deterministic construction: b_perp1 along b x e_i with i the smallest
    component of b, b_perp2 = b x b_perp1.
    """
    b = normalized(b)
    i = int(np.argmin(np.abs(b)))
    e = np.zeros(3)
    e[i] = 1.0
    b1 = normalized(np.cross(b, e))
    b2 = normalized(np.cross(b, b1))
    return b1, b2


# ---------------------------------------------------------------------------
# spherical points

@dataclass(frozen=True)
class PointSpherical:
    """Range/bearing point parameterization: r > 0, phi in (-pi/2, pi/2)."""

    r: float
    theta: float
    phi: float

    def as_array(self):
        return np.array([self.r, self.theta, self.phi])


def spherical_bearing(theta, phi):
    return np.array([
        np.cos(theta) * np.cos(phi),
        np.sin(theta) * np.cos(phi),
        np.sin(phi),
    ])


def spherical_tangents(theta, phi):
    """Unit vectors along increasing theta (scaled by 1/cos(phi)) and phi."""
    b1 = np.array([-np.sin(theta), np.cos(theta), 0.0])
    b2 = np.array([
        -np.cos(theta) * np.sin(phi),
        -np.sin(theta) * np.sin(phi),
        np.cos(phi),
    ])
    return b1, b2


def spherical_point_jacobian(p: PointSpherical):
    """d(euclidean)/d(r, theta, phi), columns [b, r cos(phi) b1, r b2]."""
    b = spherical_bearing(p.theta, p.phi)
    b1, b2 = spherical_tangents(p.theta, p.phi)
    return np.column_stack([b, p.r * np.cos(p.phi) * b1, p.r * b2])


def spherical_from_euclidean(p) -> PointSpherical:
    x, y, z = np.asarray(p, dtype=float)
    r = float(np.sqrt(x * x + y * y + z * z))
    rho = np.sqrt(x * x + y * y)
    if r <= 0.0 or rho / max(r, 1e-300) < 1e-9:
        raise SingularElevation("elevation at +-pi/2 (or zero range)")
    return PointSpherical(r=r, theta=float(np.arctan2(y, x)),
                          phi=float(np.arctan2(z, rho)))


def euclidean_from_spherical(p: PointSpherical):
    return p.r * spherical_bearing(p.theta, p.phi)


# ---------------------------------------------------------------------------
# Plucker lines

@dataclass(frozen=True)
class PluckerLine:
    """Un-normalized Plucker coordinates (n, v) with n . v == 0."""

    n: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if np.linalg.norm(self.n) < 1e-9 or np.linalg.norm(self.v) < 1e-9:
            raise DegenerateLine("zero direction or line through the origin")

    @property
    def w1(self) -> float:
        return float(np.linalg.norm(self.n))

    @property
    def w2(self) -> float:
        return float(np.linalg.norm(self.v))

    @property
    def n_e(self):
        return self.n / self.w1

    @property
    def v_e(self):
        return self.v / self.w2

    @property
    def distance(self) -> float:
        """Shortest distance from the origin to the line."""
        return self.w1 / self.w2

    def closest_point(self):
        """Point on the line closest to the origin."""
        return np.cross(self.v, self.n) / (self.v @ self.v)

    def as_array(self):
        return np.concatenate([self.n, self.v])


@dataclass(frozen=True)
class LineOrthonormal:
    """Minimal 4-dof factorization: R_L in SO(3), W_L in SO(2), norms w1, w2."""

    R_L: np.ndarray
    w1: float
    w2: float

    @property
    def W_L(self):
        eta = self.eta
        return eta * np.array([[self.w1, -self.w2], [self.w2, self.w1]])

    @property
    def eta(self) -> float:
        return 1.0 / np.sqrt(self.w1 ** 2 + self.w2 ** 2)


def line_from_endpoints(p1, p2) -> PluckerLine:
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return PluckerLine(n=np.cross(p1, p2), v=p2 - p1)


def line_orthonormal(line: PluckerLine) -> LineOrthonormal:
    u = np.cross(line.n, line.v)
    R_L = np.column_stack([line.n_e, line.v_e, u / np.linalg.norm(u)])
    return LineOrthonormal(R_L=R_L, w1=line.w1, w2=line.w2)


def line_from_orthonormal(o: LineOrthonormal) -> PluckerLine:
    return PluckerLine(n=o.w1 * o.R_L[:, 0], v=o.w2 * o.R_L[:, 1])


def line_boxplus(line: PluckerLine, dtheta, dphi: float) -> PluckerLine:
    """Apply the 4-dof error: R_L <- so3_exp(-dtheta) R_L, (w1, w2) rotated
    by dphi.  Zero perturbation is an exact identity; the Plucker constraint
    is preserved by construction.
    """
    o = line_orthonormal(line)
    R_L = so3_exp(-np.asarray(dtheta, dtype=float)) @ o.R_L
    c, s = np.cos(dphi), np.sin(dphi)
    w1 = c * o.w1 - s * o.w2
    w2 = s * o.w1 + c * o.w2
    return PluckerLine(n=w1 * R_L[:, 0], v=w2 * R_L[:, 1])


def line_error_jacobian(line: PluckerLine):
    """Analytic d[n; v]/d(dtheta_L, dphi_L), a 6x4 matrix.

    First-order expansion of line_boxplus: dn = skew(n) dtheta - (w2/w1) n dphi,
    dv = skew(v) dtheta + (w1/w2) v dphi.
    """
    J = np.zeros((6, 4))
    J[:3, :3] = skew(line.n)
    J[3:, :3] = skew(line.v)
    J[:3, 3] = -(line.w2 / line.w1) * line.n
    J[3:, 3] = (line.w1 / line.w2) * line.v
    return J


# ---------------------------------------------------------------------------
# planes

EPS_PLANE_D = 1e-6


@dataclass(frozen=True)
class CpPlane:
    """Plane stored as its closest point to the origin, Pi = d * n."""

    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        if np.linalg.norm(self.pi) <= EPS_PLANE_D:
            raise DegeneratePlane("plane through the origin")

    @property
    def d(self) -> float:
        return float(np.linalg.norm(self.pi))

    @property
    def normal(self):
        return self.pi / self.d


@dataclass(frozen=True)
class HessePlane:
    """Plane as unit normal plus distance; error state (theta~, phi~, d~)."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "n", normalized(self.n))
        if self.d <= EPS_PLANE_D:
            raise DegeneratePlane("plane through the origin")

    @property
    def theta(self) -> float:
        return float(np.arctan2(self.n[1], self.n[0]))

    @property
    def phi(self) -> float:
        return float(np.arcsin(np.clip(self.n[2], -1.0, 1.0)))


def cp_from_hesse(n, d: float) -> CpPlane:
    if d <= EPS_PLANE_D:
        raise DegeneratePlane("plane through the origin")
    return CpPlane(pi=d * normalized(n))


def hesse_from_cp(plane: CpPlane) -> HessePlane:
    return HessePlane(n=plane.normal, d=plane.d)


def hesse_from_angles(theta: float, phi: float, d: float) -> HessePlane:
    return HessePlane(n=spherical_bearing(theta, phi), d=d)


def plane_normal_angles(n):
    """(theta, phi) of a unit normal; raises near vertical normals."""
    n = normalized(n)
    rho = np.hypot(n[0], n[1])
    if rho ** 2 <= 1e-12:
        raise SingularElevation("plane normal along the vertical axis")
    return float(np.arctan2(n[1], n[0])), float(np.arctan2(n[2], rho))
