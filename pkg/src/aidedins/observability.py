"""Observability matrix construction, numeric null spaces, and the closed-form
unobservable-direction bases for every supported feature combination.

The observability matrix stacks H_k Phi(k, 1) block rows over the
exteroceptive steps, always linearized at the true states.  Numeric null
spaces come from an SVD; the analytic bases are assembled column by column
from the world transformations they encode (rotation about gravity,
translations, motions along feature-invariant directions, plus the extra
directions gained under degenerate motion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (
    Feature,
    ModelSet,
    analysis_payload,
    feature_blocks,
    feature_offsets,
    total_feature_dim,
)
from .geometry import (
    line_orthonormal,
    normalized,
    skew,
    spherical_point_jacobian,
)
from .measurements import BehindCamera, DimensionMismatch, global_blocks
from .propagation import GRAVITY_VEC, IMU_DIM, BA, BG, POS, TH, VEL, ImuState, StateHistory


class CaseMismatch(ValueError):
    """Scene does not satisfy the geometric preconditions of the case."""


@dataclass
class ObservabilityMatrix:
    M: np.ndarray
    features: list
    rows_meta: list

    @property
    def cols(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class NullBasis:
    N: np.ndarray
    label: str

    @property
    def cols(self) -> int:
        return self.N.shape[1]


def _h_imu(blocks):
    H = np.zeros((blocks.rows, IMU_DIM))
    H[:, TH] = blocks.theta
    H[:, POS] = blocks.pos
    return H


def _step_rows(hist: StateHistory, idx0: int, idx: int, features,
               models: ModelSet, offsets, m_feat: int):
    """All measurement rows H_k Phi(k, 1) for one exteroceptive step."""
    phi = hist.phi_imu(idx0, idx)
    state = hist.state_at(idx)
    rows = []
    meta = []
    for fi, feat in enumerate(features):
        try:
            payload = analysis_payload(feat, models, state)
        except BehindCamera:
            continue
        blocks = feature_blocks(feat, models, state.R, state.p, payload)
        row = np.zeros((blocks.rows, IMU_DIM + m_feat))
        row[:, :IMU_DIM] = _h_imu(blocks) @ phi
        off = IMU_DIM + offsets[fi]
        row[:, off:off + feat.dim] = blocks.feat
        rows.append(row)
        meta.append((hist.t[idx], fi, feat.kind))
    for gm in models.globals:
        blocks = global_blocks(gm, state.R)
        row = np.zeros((blocks.rows, IMU_DIM + m_feat))
        row[:, :IMU_DIM] = _h_imu(blocks) @ phi
        rows.append(row)
        meta.append((hist.t[idx], None, gm.variant))
    return rows, meta


def build_observability_matrix(hist: StateHistory, cam_indices, features,
                               models: ModelSet) -> ObservabilityMatrix:
    """Stack H_k Phi(k, 1) for all features and steps, true-state linearized."""
    cam_indices = list(cam_indices)
    if len(cam_indices) < 2:
        raise ValueError("need at least two exteroceptive steps")
    offsets = feature_offsets(features)
    m_feat = total_feature_dim(features)
    idx0 = cam_indices[0]
    rows, meta = [], []
    for idx in cam_indices:
        r, m = _step_rows(hist, idx0, idx, features, models, offsets, m_feat)
        rows.extend(r)
        meta.extend(m)
    return ObservabilityMatrix(M=np.vstack(rows), features=list(features),
                               rows_meta=meta)


def numeric_nullspace(M, rel_tol: float = 1e-8):
    """SVD null space: singular values below rel_tol * sigma_max count.

    Rows are normalized to unit length first (row scaling cannot change the
    null space, but it removes the spread between pixel-scale and
    metric-scale rows that would otherwise mask weakly observed
    directions).
    """
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    _, s, vt = np.linalg.svd(M / norms, full_matrices=True)
    smax = s[0] if len(s) else 0.0
    n_null = M.shape[1] - int(np.sum(s > rel_tol * smax))
    basis = vt[M.shape[1] - n_null:].T if n_null > 0 else np.zeros((M.shape[1], 0))
    return n_null, basis


def verify_nullspace(M, N) -> float:
    """Relative residual ||M N||_F / (||M||_F ||N||_F)."""
    M = np.asarray(M, dtype=float)
    N = np.asarray(N, dtype=float)
    if M.shape[1] != N.shape[0]:
        raise DimensionMismatch(
            f"M has {M.shape[1]} columns but N has {N.shape[0]} rows")
    return float(np.linalg.norm(M @ N)
                 / (np.linalg.norm(M) * np.linalg.norm(N)))


def span_residual(numeric_basis, N) -> float:
    """How far the analytic columns fall outside the numeric null space."""
    q, _ = np.linalg.qr(numeric_basis)
    resid = N - q @ (q.T @ N)
    return float(np.linalg.norm(resid) / np.linalg.norm(N))


def rank_over_time(hist: StateHistory, cam_indices, features,
                   models: ModelSet, rel_tol: float = 1e-8):
    """Null-space dimension after each appended block row."""
    cam_indices = list(cam_indices)
    offsets = feature_offsets(features)
    m_feat = total_feature_dim(features)
    idx0 = cam_indices[0]
    rows = []
    out = []
    for idx in cam_indices:
        r, _ = _step_rows(hist, idx0, idx, features, models, offsets, m_feat)
        rows.extend(r)
        dim, _ = numeric_nullspace(np.vstack(rows), rel_tol)
        out.append((float(hist.t[idx]), dim))
    return out


# ---------------------------------------------------------------------------
# analytic null-space columns
#
# Each column of a basis is the first-order state change under a world
# transformation that leaves every measurement invariant.  The helpers below
# produce the feature rows for world rotations (about an axis through the
# origin), world translations, and the scale/extra directions of the
# degenerate motions.

def _spherical_inv_jacobian(p):
    return np.linalg.inv(spherical_point_jacobian(p))


def _hesse_angle_jacobian(n):
    """d(theta, phi)/dn for a unit normal (norm-preserving perturbations)."""
    n1, n2, n3 = n
    rho2 = n1 * n1 + n2 * n2
    rho = np.sqrt(rho2)
    return np.array([
        [-n2 / rho2, n1 / rho2, 0.0],
        [-n1 * n3 / rho, -n2 * n3 / rho, rho],
    ])


def _feature_rows_rotation(feat: Feature, axis):
    """Feature error under a small world rotation about ``axis`` (origin)."""
    if feat.kind == "point":
        return -skew(feat.value) @ axis
    if feat.kind == "point_spherical":
        p_g = feat.position_like()
        return -_spherical_inv_jacobian(feat.value) @ skew(p_g) @ axis
    if feat.kind == "line":
        return np.concatenate([-np.asarray(axis, dtype=float), [0.0]])
    if feat.kind == "plane_cp":
        return -skew(feat.value.pi) @ axis
    A = _hesse_angle_jacobian(feat.value.n)
    return np.concatenate([-A @ skew(feat.value.n) @ axis, [0.0]])


def _feature_rows_translation(feat: Feature, t):
    """Feature error under a small world translation ``t``."""
    t = np.asarray(t, dtype=float)
    if feat.kind == "point":
        return t
    if feat.kind == "point_spherical":
        return _spherical_inv_jacobian(feat.value) @ t
    if feat.kind == "line":
        line = feat.value
        o = line_orthonormal(line)
        u = o.R_L[:, 2]
        dtheta_l = (line.w2 / line.w1) * line.v_e * (line.n_e @ t)
        dphi = o.eta ** 2 * line.w2 ** 2 * (u @ t)
        return np.concatenate([dtheta_l, [dphi]])
    n = feat.value.normal if feat.kind == "plane_cp" else feat.value.n
    if feat.kind == "plane_cp":
        return n * (n @ t)
    return np.array([0.0, 0.0, n @ t])


def _column_rotation(state1: ImuState, features, axis, compensate_gravity):
    """Full-state column for a world rotation about ``axis``.

    ``compensate_gravity`` adds the accel-bias shift needed when the
    rotation axis is not aligned with gravity (possible only under pure
    translation, where the attitude is constant).
    """
    axis = np.asarray(axis, dtype=float)
    col = np.zeros(IMU_DIM + total_feature_dim(features))
    col[TH] = state1.R @ axis
    col[VEL] = -skew(state1.v) @ axis
    col[POS] = -skew(state1.p) @ axis
    if compensate_gravity:
        col[BA] = state1.R @ skew(GRAVITY_VEC) @ axis
    off = IMU_DIM
    for feat in features:
        col[off:off + feat.dim] = _feature_rows_rotation(feat, axis)
        off += feat.dim
    return col


def _column_translation(features, t):
    t = np.asarray(t, dtype=float)
    col = np.zeros(IMU_DIM + total_feature_dim(features))
    col[POS] = t
    off = IMU_DIM
    for feat in features:
        col[off:off + feat.dim] = _feature_rows_translation(feat, t)
        off += feat.dim
    return col


def _column_velocity(features, u):
    col = np.zeros(IMU_DIM + total_feature_dim(features))
    col[VEL] = np.asarray(u, dtype=float)
    return col


def _yaw_column(state1, features):
    return _column_rotation(state1, features, GRAVITY_VEC,
                            compensate_gravity=False)


def _first(features, kind):
    for i, f in enumerate(features):
        if f.kind == kind:
            return i, f
    raise CaseMismatch(f"case needs a {kind!r} feature")


def _kinds(features):
    return [f.kind for f in features]


def _line_frame(line):
    return line_orthonormal(line).R_L


def _plane_frame(plane):
    n = plane.normal
    # Any orthonormal completion spans the same null space; use the same
    # deterministic rule as the bearing basis.
    from .geometry import bearing_perp_basis
    p1, p2 = bearing_perp_basis(n)
    return np.column_stack([p1, p2, n])


def analytic_nullspace(case: str, state1: ImuState, features,
                       **kwargs) -> NullBasis:
    """Closed-form unobservable directions for a named case.

    The basis is evaluated at the initial true state and the true features.
    Degenerate-motion cases return only the extra directions gained by the
    motion; all other cases return the full basis.
    """
    builder = _CASE_BUILDERS.get(case)
    if builder is None:
        raise CaseMismatch(f"unknown analytic case {case!r}")
    N = builder(state1, list(features), **kwargs)
    basis = NullBasis(N=N, label=case)
    if np.linalg.matrix_rank(N, tol=1e-10 * max(1.0, np.linalg.norm(N))) \
            != basis.cols:
        raise CaseMismatch(f"analytic basis for {case!r} lost rank")
    return basis


def _base_translations(state1, features, frame):
    cols = [_yaw_column(state1, features)]
    cols += [_column_translation(features, frame[:, j]) for j in range(3)]
    return cols


def _build_points(state1, features):
    if not all(k in ("point", "point_spherical") for k in _kinds(features)):
        raise CaseMismatch("points case expects only point features")
    return np.column_stack(_base_translations(state1, features, np.eye(3)))


def _build_single_line(state1, features):
    _, lf = _first(features, "line")
    frame = _line_frame(lf.value)
    cols = _base_translations(state1, features, frame)
    cols.append(_column_velocity(features, lf.value.v_e))
    return np.column_stack(cols)


def _build_lines(state1, features):
    lines = [f.value for f in features if f.kind == "line"]
    if len(lines) < 2:
        raise CaseMismatch("multi-line case needs at least two lines")
    dirs = [l.v_e for l in lines]
    if all(abs(dirs[0] @ d) > 1.0 - 1e-9 for d in dirs[1:]):
        raise CaseMismatch("all lines are parallel")
    frame = _line_frame(lines[0])
    return np.column_stack(_base_translations(state1, features, frame))


def _build_single_plane(state1, features):
    _, pf = _first(features, "plane_cp")
    plane = pf.value
    frame = _plane_frame(plane)
    cols = _base_translations(state1, features, frame)
    cols.append(_column_velocity(features, frame[:, 0]))
    cols.append(_column_velocity(features, frame[:, 1]))
    rot = np.zeros(IMU_DIM + total_feature_dim(features))
    rot[TH] = state1.R @ plane.normal
    cols.append(rot)
    return np.column_stack(cols)


def _build_single_plane_hesse(state1, features):
    _, pf = _first(features, "plane_hesse")
    plane = pf.value
    from .geometry import bearing_perp_basis
    p1, p2 = bearing_perp_basis(plane.n)
    frame = np.column_stack([p1, p2, plane.n])
    cols = _base_translations(state1, features, frame)
    cols.append(_column_velocity(features, p1))
    cols.append(_column_velocity(features, p2))
    rot = np.zeros(IMU_DIM + total_feature_dim(features))
    rot[TH] = state1.R @ plane.n
    cols.append(rot)
    return np.column_stack(cols)


def _plane_normals(features):
    out = []
    for f in features:
        if f.kind == "plane_cp":
            out.append(f.value.normal)
        elif f.kind == "plane_hesse":
            out.append(f.value.n)
    return out


def _build_two_planes(state1, features):
    normals = _plane_normals(features)
    if len(normals) != 2:
        raise CaseMismatch("case expects exactly two planes")
    inter = np.cross(normals[0], normals[1])
    if np.linalg.norm(inter) < 1e-9:
        raise CaseMismatch("planes are parallel")
    frame = _plane_frame(Feature("plane_cp", features[0].value).value) \
        if features[0].kind == "plane_cp" else np.eye(3)
    cols = _base_translations(state1, features, frame)
    cols.append(_column_velocity(features, normalized(inter)))
    return np.column_stack(cols)


def _build_planes(state1, features):
    normals = _plane_normals(features)
    if len(normals) < 3:
        raise CaseMismatch("case expects at least three planes")
    inters = [np.cross(normals[i], normals[j])
              for i in range(len(normals)) for j in range(i + 1, len(normals))]
    inters = [v for v in inters if np.linalg.norm(v) > 1e-9]
    if not inters:
        raise CaseMismatch("all planes are parallel")
    base = normalized(inters[0])
    if all(abs(base @ normalized(v)) > 1.0 - 1e-9 for v in inters):
        raise CaseMismatch("all plane intersections are parallel")
    return np.column_stack(_base_translations(state1, features, np.eye(3)))


def _build_combo(state1, features):
    return np.column_stack(_base_translations(state1, features, np.eye(3)))


def _build_line_plane(state1, features, parallel: bool):
    _, lf = _first(features, "line")
    normals = _plane_normals(features)
    if not normals:
        raise CaseMismatch("case needs a plane feature")
    dot = abs(lf.value.v_e @ normals[0])
    if parallel and dot > 1e-9:
        raise CaseMismatch("line is not parallel to the plane")
    if not parallel and dot < 1e-9:
        raise CaseMismatch("line is parallel to the plane")
    cols = _base_translations(state1, features, np.eye(3))
    if parallel:
        cols.append(_column_velocity(features, lf.value.v_e))
    return np.column_stack(cols)


def _build_spherical_point(state1, features):
    _first(features, "point_spherical")
    return np.column_stack(_base_translations(state1, features, np.eye(3)))


def _build_global(state1, features, keep_axes, keep_yaw):
    cols = []
    if keep_yaw:
        cols.append(_yaw_column(state1, features))
    cols += [_column_translation(features, np.eye(3)[:, j]) for j in keep_axes]
    if not cols:
        raise CaseMismatch("fully observable case has no null basis")
    return np.column_stack(cols)


def _build_global_orientation(state1, features, direction):
    if np.linalg.norm(np.cross(direction, GRAVITY_VEC)) < 1e-9:
        raise CaseMismatch("reference direction parallel to gravity")
    return _build_global(state1, features, keep_axes=(0, 1, 2),
                         keep_yaw=False)


# -- degenerate-motion extras ------------------------------------------------

def _build_pure_translation(state1, features):
    cols = [_column_rotation(state1, features, ax, compensate_gravity=True)
            for ax in np.eye(3)]
    return np.column_stack(cols)


def _build_constant_accel(state1, features, a_body):
    """Scale direction under constant local (kinematic) acceleration."""
    col = np.zeros(IMU_DIM + total_feature_dim(features))
    col[VEL] = state1.v
    col[BA] = -np.asarray(a_body, dtype=float)
    col[POS] = state1.p
    off = IMU_DIM
    for feat in features:
        if feat.kind == "point_spherical":
            col[off] = feat.value.r
        elif feat.kind == "point":
            col[off:off + 3] = np.asarray(feat.value, dtype=float)
        elif feat.kind == "line":
            line = feat.value
            eta2 = 1.0 / (line.w1 ** 2 + line.w2 ** 2)
            col[off + 3] = -eta2 * line.w1 * line.w2
        elif feat.kind == "plane_cp":
            col[off:off + 3] = feat.value.pi
        else:
            col[off + 2] = feat.value.d
        off += feat.dim
    return col[:, None]


def _scale_column(features, kind):
    col = np.zeros(IMU_DIM + total_feature_dim(features))
    off = IMU_DIM
    done = False
    for feat in features:
        if not done and kind == "point" and feat.kind == "point_spherical":
            col[off] = 1.0
            done = True
        if not done and kind == "line" and feat.kind == "line":
            col[off + 3] = 1.0
            done = True
        off += feat.dim
    if not done:
        raise CaseMismatch(f"no {kind!r} feature to carry the scale direction")
    return col


def _build_pure_rotation(state1, features):
    return np.column_stack([_scale_column(features, "point"),
                            _scale_column(features, "line")])


def _build_toward_point(state1, features):
    return _scale_column(features, "point")[:, None]


def _build_parallel_line(state1, features):
    return _scale_column(features, "line")[:, None]


_CASE_BUILDERS = {
    "point": _build_points,
    "points": _build_points,
    "point_spherical": _build_spherical_point,
    "single_line": _build_single_line,
    "lines": _build_lines,
    "single_plane": _build_single_plane,
    "single_plane_hesse": _build_single_plane_hesse,
    "two_planes": _build_two_planes,
    "planes": _build_planes,
    "point_line": _build_combo,
    "point_plane": _build_combo,
    "point_line_plane": _build_combo,
    "line_plane": lambda s, f: _build_line_plane(s, f, parallel=False),
    "line_plane_parallel": lambda s, f: _build_line_plane(s, f, parallel=True),
    "global_pos_x": lambda s, f: _build_global(s, f, (1, 2), False),
    "global_pos_y": lambda s, f: _build_global(s, f, (0, 2), False),
    "global_pos_z": lambda s, f: _build_global(s, f, (0, 1), True),
    "global_orientation": _build_global_orientation,
    "pure_translation": _build_pure_translation,
    "constant_accel": _build_constant_accel,
    "pure_rotation": _build_pure_rotation,
    "toward_point": _build_toward_point,
    "parallel_to_line": _build_parallel_line,
}
