"""Synthetic trajectories, feature scenes, sensor data and the Monte-Carlo
consistency harness.

Trajectories are analytic: the stored IMU samples are the exact angular
rate and specific force of the closed-form motion, and the degenerate
variants satisfy their defining constraint exactly (constant attitude,
zero position, constant body acceleration, motion through the origin
toward a point / along a line direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import measurements as meas
from .estimators import EkfSlam, HybridState, Msckf
from .features import (
    Feature,
    ModelSet,
    line_endpoints,
    total_feature_dim,
)
from .geometry import (
    CpPlane,
    HessePlane,
    PluckerLine,
    line_from_endpoints,
    normalized,
    quat_boxminus,
    quat_boxplus,
    rot_to_quat,
    so3_exp,
    spherical_from_euclidean,
)
from .measurements import (
    BehindCamera,
    LineObservation,
    PointSensorModel,
    project_point_pixels,
)
from .propagation import (
    GRAVITY_VEC,
    ImuSample,
    ImuState,
    NoiseParams,
    StateHistory,
)


class InvalidSpec(ValueError):
    """Trajectory or scene specification out of its domain."""


class PlacementFailure(RuntimeError):
    """Could not place features satisfying the scene constraints."""


TRAJECTORY_VARIANTS = (
    "sinusoid3d",
    "pure_translation",
    "constant_local_accel",
    "pure_rotation",
    "toward_point",
    "parallel_to_line",
)


@dataclass(frozen=True)
class TrajectorySpec:
    variant: str = "sinusoid3d"
    duration: float = 30.0
    imu_rate: float = 200.0
    cam_rate: float = 10.0
    pos_amp: tuple = (1.6, 1.2, 0.7)
    pos_freq: tuple = (0.19, 0.23, 0.29)
    ang_amp: tuple = (0.22, 0.28, 0.35)
    ang_freq: tuple = (0.23, 0.17, 0.13)
    base_vel: tuple = (0.25, -0.2, 0.15)
    accel: tuple = (0.25, 0.1, 0.2)
    spin_rate: float = 0.4
    spin_amp: float = 0.5
    spin_freq: float = 0.2
    target: tuple = (0.8, 0.5, 5.0)
    along: tuple = (0.4, 0.25, 0.5)
    range_amp: float = 1.2
    range_freq: float = 0.2

    def __post_init__(self):
        if self.variant not in TRAJECTORY_VARIANTS:
            raise InvalidSpec(f"unknown trajectory variant {self.variant!r}")
        if self.duration <= 0 or self.imu_rate <= 0 or self.cam_rate <= 0:
            raise InvalidSpec("duration and rates must be positive")
        if self.cam_rate > self.imu_rate:
            raise InvalidSpec("exteroceptive rate above the IMU rate")


@dataclass
class TrueTrajectory:
    hist: StateHistory
    omega: np.ndarray
    cam_indices: np.ndarray
    spec: TrajectorySpec

    @property
    def accel(self):
        return self.hist.a_body

    def state(self, idx: int) -> ImuState:
        return self.hist.state_at(idx)

    def samples(self, i0: int, i1: int, omega=None, accel=None):
        """ImuSample list over grid indices [i0, i1], optionally noisy data."""
        om = self.omega if omega is None else omega
        ac = self.hist.a_body if accel is None else accel
        return [ImuSample(t=float(self.hist.t[i]), omega=om[i], accel=ac[i])
                for i in range(i0, i1 + 1)]


def _euler_rotations(t, amp, freq):
    """ZYX Euler-angle attitude path and exact body rates."""
    amp = np.asarray(amp, dtype=float)
    w = 2.0 * np.pi * np.asarray(freq, dtype=float)
    ang = amp * np.sin(np.outer(t, w))
    rate = amp * w * np.cos(np.outer(t, w))
    roll, pitch, yaw = ang[:, 0], ang[:, 1], ang[:, 2]
    droll, dpitch, dyaw = rate[:, 0], rate[:, 1], rate[:, 2]

    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    n = len(t)
    R_gi = np.empty((n, 3, 3))
    R_gi[:, 0, 0] = cy * cp
    R_gi[:, 0, 1] = cy * sp * sr - sy * cr
    R_gi[:, 0, 2] = cy * sp * cr + sy * sr
    R_gi[:, 1, 0] = sy * cp
    R_gi[:, 1, 1] = sy * sp * sr + cy * cr
    R_gi[:, 1, 2] = sy * sp * cr - cy * sr
    R_gi[:, 2, 0] = -sp
    R_gi[:, 2, 1] = cp * sr
    R_gi[:, 2, 2] = cp * cr

    omega = np.empty((n, 3))
    omega[:, 0] = droll - dyaw * sp
    omega[:, 1] = dpitch * cr + dyaw * cp * sr
    omega[:, 2] = -dpitch * sr + dyaw * cp * cr
    return np.transpose(R_gi, (0, 2, 1)), omega


def _sinusoid_position(t, amp, freq):
    amp = np.asarray(amp, dtype=float)
    w = 2.0 * np.pi * np.asarray(freq, dtype=float)
    arg = np.outer(t, w)
    p = amp * (np.cos(arg) - 1.0)
    v = -amp * w * np.sin(arg)
    a = -amp * w * w * np.cos(arg)
    return p, v, a


def generate_trajectory(spec: TrajectorySpec) -> TrueTrajectory:
    n = int(round(spec.duration * spec.imu_rate)) + 1
    t = np.arange(n) / spec.imu_rate
    stride = spec.imu_rate / spec.cam_rate
    cam = np.round(np.arange(0.0, n - 0.5, stride)).astype(int)
    cam = cam[cam < n]

    if spec.variant in ("sinusoid3d", "pure_rotation", "toward_point",
                        "parallel_to_line"):
        if spec.variant == "sinusoid3d":
            R, omega = _euler_rotations(t, spec.ang_amp, spec.ang_freq)
            p, v, a_world = _sinusoid_position(t, spec.pos_amp, spec.pos_freq)
        elif spec.variant == "pure_rotation":
            R, omega = _euler_rotations(t, spec.ang_amp, spec.ang_freq)
            p = np.zeros((n, 3))
            v = np.zeros((n, 3))
            a_world = np.zeros((n, 3))
        else:
            R, omega = _euler_rotations(t, spec.ang_amp, spec.ang_freq)
            u = normalized(np.asarray(
                spec.target if spec.variant == "toward_point" else spec.along,
                dtype=float))
            w = 2.0 * np.pi * spec.range_freq
            alpha = spec.range_amp * np.sin(w * t)
            p = np.outer(alpha, u)
            v = np.outer(spec.range_amp * w * np.cos(w * t), u)
            a_world = np.outer(-spec.range_amp * w * w * np.sin(w * t), u)
    elif spec.variant == "pure_translation":
        p, v, a_world = _sinusoid_position(t, spec.pos_amp, spec.pos_freq)
        R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        omega = np.zeros((n, 3))
    else:  # constant_local_accel
        c = np.asarray(spec.accel, dtype=float)
        if np.linalg.norm(c) < 1e-9:
            raise InvalidSpec("constant-acceleration variant needs accel != 0")
        axis = normalized(c)
        psi = spec.spin_rate * t + spec.spin_amp * np.sin(
            2.0 * np.pi * spec.spin_freq * t)
        dpsi = spec.spin_rate + spec.spin_amp * 2.0 * np.pi * spec.spin_freq \
            * np.cos(2.0 * np.pi * spec.spin_freq * t)
        R = np.array([so3_exp(-axis * s) for s in psi])
        omega = np.outer(dpsi, axis)
        v0 = np.asarray(spec.base_vel, dtype=float)
        p = np.outer(t, v0) + 0.5 * np.outer(t * t, c)
        v = np.broadcast_to(v0, (n, 3)) + np.outer(t, c)
        a_world = np.broadcast_to(c, (n, 3)).copy()

    a_body = np.einsum("nij,nj->ni", R, a_world - GRAVITY_VEC)
    q = np.array([rot_to_quat(Ri) for Ri in R])
    hist = StateHistory(t=t, R=R, v=v, p=p, a_body=a_body, q=q)
    return TrueTrajectory(hist=hist, omega=omega, cam_indices=cam, spec=spec)


# ---------------------------------------------------------------------------
# feature scenes

@dataclass(frozen=True)
class FeatureSceneSpec:
    points: int = 0
    lines: int = 0
    planes: int = 0
    point_param: str = "euclidean"
    plane_param: str = "cp"
    parallel_lines: bool = False
    line_parallel_plane: bool = False
    lateral: float = 2.5
    depth_min: float = 4.0
    depth_max: float = 8.0
    min_line_angle_deg: float = 1.0

    def __post_init__(self):
        if min(self.points, self.lines, self.planes) < 0:
            raise InvalidSpec("feature counts must be non-negative")
        if self.point_param not in ("euclidean", "spherical"):
            raise InvalidSpec(f"unknown point_param {self.point_param!r}")
        if self.plane_param not in ("cp", "hesse"):
            raise InvalidSpec(f"unknown plane_param {self.plane_param!r}")
        if self.parallel_lines and self.lines < 2:
            raise InvalidSpec("parallel_lines needs at least two lines")
        if self.line_parallel_plane and (self.lines < 1 or self.planes < 1):
            raise InvalidSpec("line_parallel_plane needs a line and a plane")


def _visible_everywhere(traj: TrueTrajectory, points, margin=0.3):
    for idx in traj.cam_indices:
        st = traj.state(idx)
        for p in points:
            if (st.R @ (p - st.p))[2] <= margin:
                return False
    return True


def _sample_forward_point(rng, spec: FeatureSceneSpec):
    return np.array([
        rng.uniform(-spec.lateral, spec.lateral),
        rng.uniform(-spec.lateral, spec.lateral),
        rng.uniform(spec.depth_min, spec.depth_max),
    ])


def _random_unit(rng):
    v = rng.standard_normal(3)
    return normalized(v)


def sample_scene(spec: FeatureSceneSpec, rng, traj: TrueTrajectory | None = None,
                 max_tries: int = 500):
    """Features satisfying the scene constraints, visible along ``traj``."""
    features: list[Feature] = []

    plane_normals = []
    max_radius = 0.0
    if traj is not None:
        max_radius = float(np.max(np.linalg.norm(traj.hist.p, axis=1)))
    for _ in range(spec.planes):
        for attempt in range(max_tries):
            nrm = _random_unit(rng)
            if abs(nrm[2]) > 0.9 and spec.plane_param == "hesse":
                continue
            if any(abs(nrm @ other) > 0.95 for other in plane_normals):
                continue
            # Three coplanar normals would make all intersections parallel.
            if len(plane_normals) >= 2 and abs(np.linalg.det(np.column_stack(
                    [plane_normals[0], plane_normals[1], nrm]))) < 0.05:
                continue
            plane_normals.append(nrm)
            break
        else:
            raise PlacementFailure("could not place plane features")
    for nrm in plane_normals:
        d = rng.uniform(max_radius + spec.depth_min, max_radius + spec.depth_max)
        if spec.plane_param == "cp":
            features.append(Feature("plane_cp", CpPlane(pi=d * nrm)))
        else:
            features.append(Feature("plane_hesse", HessePlane(n=nrm, d=d)))

    line_dirs = []
    shared_dir = None
    for li in range(spec.lines):
        for attempt in range(max_tries):
            center = _sample_forward_point(rng, spec)
            if spec.parallel_lines:
                if shared_dir is None:
                    shared_dir = _random_unit(rng)
                direction = shared_dir
            elif spec.line_parallel_plane and li == 0 and plane_normals:
                raw = _random_unit(rng)
                direction = normalized(raw - (raw @ plane_normals[0])
                                       * plane_normals[0])
            else:
                direction = _random_unit(rng)
            if not spec.parallel_lines and any(
                    abs(direction @ d0) > np.cos(np.deg2rad(spec.min_line_angle_deg))
                    for d0 in line_dirs):
                continue
            line = line_from_endpoints(center - direction, center + direction)
            if traj is not None:
                eps = line_endpoints(line, 1.0)
                if not _visible_everywhere(traj, eps):
                    continue
            line_dirs.append(direction)
            features.append(Feature("line", line))
            break
        else:
            raise PlacementFailure("could not place line features")

    for _ in range(spec.points):
        for attempt in range(max_tries):
            p = _sample_forward_point(rng, spec)
            if traj is not None and not _visible_everywhere(traj, [p]):
                continue
            if spec.point_param == "spherical":
                features.append(Feature("point_spherical",
                                        spherical_from_euclidean(p)))
            else:
                features.append(Feature("point", p))
            break
        else:
            raise PlacementFailure("could not place point features")
    return features


# ---------------------------------------------------------------------------
# measurement synthesis

@dataclass(frozen=True)
class NoiseLevels:
    pixel_sigma: float = 1.0
    range_sigma: float = 0.02
    plane_sigma: float = 0.01
    hesse_angle_sigma: float = 0.002
    direction_sigma: float = 0.002
    global_pos_sigma: float = 0.02
    global_ori_sigma: float = 0.005

    def point_sigma(self, model: PointSensorModel):
        px1 = self.pixel_sigma / model.f1
        px2 = self.pixel_sigma / model.f2
        return {
            "range_only": np.array([self.range_sigma]),
            "mono": np.array([px1, px2]),
            "range_bearing": np.array([self.range_sigma, px1, px2]),
            "stereo": np.array([px1, px1, px2]),
        }[model.variant]


@dataclass(frozen=True)
class MeasRecord:
    step: int
    t: float
    feat_idx: int | None
    kind: str
    z: np.ndarray | None
    payload: object
    sigma: np.ndarray


def _noisy_line_observation(models: ModelSet, state, line: PluckerLine,
                            sigma_px, rng):
    p1, p2 = line_endpoints(line, models.line_halfspan)
    pts = []
    for p in (p1, p2):
        px = project_point_pixels(models.point, meas.point_transform(state, p))
        if rng is not None:
            px = px + np.array([sigma_px * rng.standard_normal(),
                                sigma_px * rng.standard_normal(), 0.0])
        pts.append(px)
    return LineObservation(xs=pts[0], xe=pts[1])


def simulate_measurements(traj: TrueTrajectory, features, models: ModelSet,
                          levels: NoiseLevels, rng=None):
    """Per-step measurement records; deterministic for a given generator."""
    steps = []
    for k, idx in enumerate(traj.cam_indices):
        state = traj.state(idx)
        records = []
        for fi, feat in enumerate(features):
            try:
                rec = _measure_feature(k, float(traj.hist.t[idx]), fi, feat,
                                       models, levels, state, rng)
            except (BehindCamera, meas.DegenerateProjection):
                continue
            records.append(rec)
        for gi, gm in enumerate(models.globals):
            sig = levels.global_ori_sigma if gm.variant == "orientation" \
                else levels.global_pos_sigma
            z = meas.global_measure(gm, state,
                                    sigma=sig if rng is not None else None,
                                    rng=rng)
            records.append(MeasRecord(step=k, t=float(traj.hist.t[idx]),
                                      feat_idx=None, kind=gm.variant, z=z,
                                      payload=gm, sigma=np.array([sig])))
        steps.append(records)
    return steps


def _measure_feature(k, t, fi, feat: Feature, models: ModelSet,
                     levels: NoiseLevels, state: ImuState, rng):
    if feat.kind in ("point", "point_spherical"):
        p_g = feat.position_like()
        sigma = levels.point_sigma(models.point)
        z = meas.point_measure(models.point, meas.point_transform(state, p_g),
                               sigma=sigma if rng is not None else None,
                               rng=rng)
        return MeasRecord(k, t, fi, feat.kind, z, None, sigma)
    if feat.kind == "line":
        if models.line_variant == "projective":
            obs = _noisy_line_observation(models, state, feat.value,
                                          levels.pixel_sigma, rng)
            sigma = np.full(2, levels.pixel_sigma)
            return MeasRecord(k, t, fi, "line", None, obs, sigma)
        local = meas.line_transform_to_local(state, feat.value)
        v_m = local.v_e
        d_m = local.distance
        if rng is not None:
            v_m = normalized(v_m + levels.direction_sigma
                             * rng.standard_normal(3))
            d_m = d_m + levels.range_sigma * rng.standard_normal()
        z = np.array([0.0, 0.0, 0.0, d_m])
        sigma = np.array([levels.direction_sigma * local.w2] * 3
                         + [levels.range_sigma])
        return MeasRecord(k, t, fi, "line", z, v_m, sigma)
    if feat.kind == "plane_cp":
        z = meas.plane_measure_cp(
            state, feat.value,
            sigma=levels.plane_sigma if rng is not None else None, rng=rng)
        return MeasRecord(k, t, fi, "plane_cp", z, None,
                          np.full(3, levels.plane_sigma))
    sigma = np.array([levels.hesse_angle_sigma, levels.hesse_angle_sigma,
                      levels.plane_sigma])
    z = meas.plane_measure_hesse(state, feat.value,
                                 sigma=sigma if rng is not None else None,
                                 rng=rng)
    return MeasRecord(k, t, fi, "plane_hesse", z, None, sigma)


def simulate_imu(traj: TrueTrajectory, noise: NoiseParams, rng):
    """Noisy IMU data and the true random-walk biases on the grid."""
    n = len(traj.hist.t)
    dt = float(np.mean(np.diff(traj.hist.t)))
    bg = np.cumsum(np.vstack([np.zeros(3),
                              noise.sigma_wg * np.sqrt(dt)
                              * rng.standard_normal((n - 1, 3))]), axis=0)
    ba = np.cumsum(np.vstack([np.zeros(3),
                              noise.sigma_wa * np.sqrt(dt)
                              * rng.standard_normal((n - 1, 3))]), axis=0)
    omega_m = traj.omega + bg + noise.sigma_g / np.sqrt(dt) \
        * rng.standard_normal((n, 3))
    accel_m = traj.hist.a_body + ba + noise.sigma_a / np.sqrt(dt) \
        * rng.standard_normal((n, 3))
    return omega_m, accel_m, bg, ba


# ---------------------------------------------------------------------------
# Monte-Carlo study

@dataclass(frozen=True)
class PriorSigmas:
    theta: float = 5e-3
    gyro_bias: float = 1e-4
    vel: float = 5e-3
    accel_bias: float = 1e-3
    pos: float = 5e-3
    feat_point: float = 0.08
    feat_line: float = 5e-3
    feat_plane: float = 0.03

    def imu_diag(self):
        return np.concatenate([
            np.full(3, self.theta ** 2),
            np.full(3, self.gyro_bias ** 2),
            np.full(3, self.vel ** 2),
            np.full(3, self.accel_bias ** 2),
            np.full(3, self.pos ** 2),
        ])

    def feature_diag(self, feat: Feature):
        if feat.kind in ("point", "point_spherical"):
            return np.full(3, self.feat_point ** 2)
        if feat.kind == "line":
            return np.full(4, self.feat_line ** 2)
        return np.full(3, self.feat_plane ** 2)


@dataclass(frozen=True)
class McConfig:
    traj: TrajectorySpec
    scene: FeatureSceneSpec
    models: ModelSet
    imu_noise: NoiseParams
    levels: NoiseLevels
    priors: PriorSigmas = field(default_factory=PriorSigmas)
    filter: str = "ekf_slam"
    modes: tuple = ("standard", "ideal")
    runs: int = 50
    seed: int = 0
    clone_window: int = 10

    def __post_init__(self):
        if self.filter not in ("ekf_slam", "msckf"):
            raise InvalidSpec(f"unknown filter {self.filter!r}")
        if self.runs < 1:
            raise InvalidSpec("need at least one run")


@dataclass
class McReport:
    t: np.ndarray
    ori_rmse_deg: dict
    pos_rmse_m: dict
    ori_nees: dict
    pos_nees: dict
    runs: int
    seeds: list
    failures: int


def _perturbed_initial(truth_state: ImuState, priors: PriorSigmas, rng):
    st = truth_state.copy()
    st.q = quat_boxplus(st.q, priors.theta * rng.standard_normal(3))
    st.bg = st.bg + priors.gyro_bias * rng.standard_normal(3)
    st.v = st.v + priors.vel * rng.standard_normal(3)
    st.ba = st.ba + priors.accel_bias * rng.standard_normal(3)
    st.p = st.p + priors.pos * rng.standard_normal(3)
    return st


def _perturbed_features(features, priors: PriorSigmas, rng):
    out = []
    for f in features:
        sig = np.sqrt(priors.feature_diag(f))
        out.append(f.boxplus(sig * rng.standard_normal(f.dim)))
    return out


def _pose_errors(state: HybridState, truth_state: ImuState):
    dth = quat_boxminus(truth_state.q, state.imu.q)
    dp = truth_state.p - state.imu.p
    return dth, dp


def run_single(config: McConfig, traj: TrueTrajectory, features, run_seed):
    """One Monte-Carlo run: both filter modes on identical data."""
    rng = np.random.default_rng(run_seed)
    omega_m, accel_m, bg_true, ba_true = simulate_imu(traj, config.imu_noise, rng)
    steps = simulate_measurements(traj, features, config.models, config.levels,
                                  rng)
    cam = traj.cam_indices
    truth0 = traj.state(cam[0])

    init_state = _perturbed_initial(truth0, config.priors, rng)
    init_feats = _perturbed_features(features, config.priors, rng)

    results = {}
    for mode in config.modes:
        filt = _build_filter(config, traj, features, init_state, init_feats)
        filt_obj, is_slam = filt
        filt_obj.mode = mode
        n_steps = len(cam)
        dim_err = np.zeros((n_steps, 4))
        if is_slam:
            filt_obj.update(steps[0], truth_idx=cam[0])
        else:
            filt_obj.augment(float(traj.hist.t[cam[0]]), truth_idx=cam[0])
            filt_obj.record_observations(steps[0])
        dim_err[0] = _step_metrics(filt_obj.state, truth0)
        for k in range(1, n_steps):
            i0, i1 = cam[k - 1], cam[k]
            samples = traj.samples(i0, i1, omega=omega_m, accel=accel_m)
            if is_slam:
                filt_obj.propagate(samples, truth_span=(i0, i1))
                filt_obj.update(steps[k], truth_idx=i1)
            else:
                filt_obj.process_camera_step(float(traj.hist.t[i1]), steps[k],
                                             samples=samples,
                                             truth_span=(i0, i1))
            dim_err[k] = _step_metrics(filt_obj.state, traj.state(i1))
        if not is_slam:
            filt_obj.update_tracks()
            dim_err[-1] = _step_metrics(filt_obj.state, traj.state(cam[-1]))
        results[mode] = dim_err
    return results


def _build_filter(config: McConfig, traj, features, init_state, init_feats):
    n_feat = total_feature_dim(features)
    if config.filter == "ekf_slam":
        dim = 15 + n_feat
        P = np.zeros((dim, dim))
        P[:15, :15] = np.diag(config.priors.imu_diag())
        off = 15
        for f in features:
            d = f.dim
            P[off:off + d, off:off + d] = np.diag(config.priors.feature_diag(f))
            off += d
        state = HybridState(imu=init_state.copy(), features=list(init_feats),
                            P=P)
        filt = EkfSlam(state, config.models, config.imu_noise,
                       mode="standard", truth=traj.hist,
                       true_features=features)
        return filt, True
    P = np.diag(config.priors.imu_diag())
    state = HybridState(imu=init_state.copy(), P=P)
    filt = Msckf(state, config.models, config.imu_noise, mode="standard",
                 truth=traj.hist, true_features=features,
                 window=config.clone_window, init_features=list(init_feats))
    return filt, False


def _step_metrics(state: HybridState, truth_state: ImuState):
    dth, dp = _pose_errors(state, truth_state)
    P = state.P
    Pth = P[0:3, 0:3]
    Pp = P[12:15, 12:15]
    nees_th = float(dth @ np.linalg.solve(Pth, dth))
    nees_p = float(dp @ np.linalg.solve(Pp, dp))
    return np.array([dth @ dth, dp @ dp, nees_th, nees_p])


def _run_single_safe(args):
    config, traj, features, rs = args
    try:
        return run_single(config, traj, features, rs)
    except (np.linalg.LinAlgError, ValueError):
        return None


def run_monte_carlo(config: McConfig, jobs: int = 1) -> McReport:
    """Independent runs with per-run RNG streams; deterministic reduction.

    Results are identical for any ``jobs`` value: every run draws from its
    own spawned seed and the reduction is done in run order.
    """
    root = np.random.SeedSequence(config.seed)
    scene_seed, *run_seeds = root.spawn(config.runs + 1)
    traj = generate_trajectory(config.traj)
    features = sample_scene(config.scene, np.random.default_rng(scene_seed),
                            traj=traj)
    n_steps = len(traj.cam_indices)
    sums = {m: np.zeros((n_steps, 4)) for m in config.modes}
    failures = 0
    work = [(config, traj, features, rs) for rs in run_seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_results = list(pool.map(_run_single_safe, work))
    else:
        all_results = [_run_single_safe(w) for w in work]
    for results in all_results:
        if results is None:
            failures += 1
            continue
        for m in config.modes:
            sums[m] += results[m]
    n_ok = config.runs - failures
    if n_ok == 0:
        raise RuntimeError("all Monte-Carlo runs failed")
    t = traj.hist.t[traj.cam_indices]
    report = McReport(
        t=t,
        ori_rmse_deg={m: np.degrees(np.sqrt(sums[m][:, 0] / n_ok))
                      for m in config.modes},
        pos_rmse_m={m: np.sqrt(sums[m][:, 1] / n_ok) for m in config.modes},
        ori_nees={m: sums[m][:, 2] / n_ok for m in config.modes},
        pos_nees={m: sums[m][:, 3] / n_ok for m in config.modes},
        runs=n_ok,
        seeds=[int(s.generate_state(1)[0]) for s in run_seeds],
        failures=failures,
    )
    return report
