"""EKF-based VI-SLAM and MSCKF-based VIO over heterogeneous features.

Both filters run in two linearization modes: ``standard`` evaluates all
Jacobians at the current estimates, ``ideal`` evaluates them at the true
states (the consistency benchmark).  The error-state layout is

    [ imu (15) | clone_0 (6) ... | feature_0 ... ]

with clone errors (dtheta_c, p~_c) and feature errors as in
:mod:`aidedins.features`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import (
    Feature,
    ModelSet,
    feature_blocks,
    feature_offsets,
    feature_predict,
    total_feature_dim,
    wrap_angle,
)
from .geometry import quat_boxplus, quat_to_rot
from .measurements import BehindCamera, point_projection_jacobian, point_transform
from .propagation import (
    IMU_DIM,
    POS,
    TH,
    ImuSample,
    ImuState,
    NoiseParams,
    StateHistory,
    propagate_mean_history,
)


class SingularInnovation(np.linalg.LinAlgError):
    """Innovation covariance could not be factorized."""


class CovarianceNotPSD(ValueError):
    """Covariance lost positive semidefiniteness beyond tolerance."""


class RankDeficientHf(ValueError):
    """Feature Jacobian of a track has deficient rank."""


@dataclass
class ClonePose:
    t: float
    q: np.ndarray
    p: np.ndarray
    truth_idx: int | None = None
    uid: int = 0

    @property
    def R(self):
        return quat_to_rot(self.q)


class HybridState:
    """IMU state plus ordered clones and features with covariance."""

    def __init__(self, imu: ImuState, features=(), clones=(), P=None):
        self.imu = imu
        self.features = list(features)
        self.clones = list(clones)
        if P is None:
            P = np.zeros((self.dim, self.dim))
        self.P = P

    @property
    def n_clones(self) -> int:
        return len(self.clones)

    @property
    def dim(self) -> int:
        return IMU_DIM + 6 * self.n_clones + total_feature_dim(self.features)

    def clone_slice(self, i: int) -> slice:
        start = IMU_DIM + 6 * i
        return slice(start, start + 6)

    def feature_slice(self, i: int) -> slice:
        start = IMU_DIM + 6 * self.n_clones + feature_offsets(self.features)[i]
        return slice(start, start + self.features[i].dim)

    def boxplus(self, dx):
        dx = np.asarray(dx, dtype=float)
        self.imu.q = quat_boxplus(self.imu.q, dx[TH])
        self.imu.bg = self.imu.bg + dx[3:6]
        self.imu.v = self.imu.v + dx[6:9]
        self.imu.ba = self.imu.ba + dx[9:12]
        self.imu.p = self.imu.p + dx[POS]
        for i, c in enumerate(self.clones):
            s = self.clone_slice(i)
            c.q = quat_boxplus(c.q, dx[s][:3])
            c.p = c.p + dx[s][3:]
        for i, f in enumerate(self.features):
            s = self.feature_slice(i)
            self.features[i] = f.boxplus(dx[s])

    def symmetrize(self, check: bool = True):
        self.P = 0.5 * (self.P + self.P.T)
        if check:
            lam = np.linalg.eigvalsh(self.P)
            if lam[0] < -1e-9:
                raise CovarianceNotPSD(f"min eigenvalue {lam[0]:.3e}")


def joseph_update(P, H, R, r):
    """Kalman update in Joseph form; returns (dx, P_new)."""
    S = H @ P @ H.T + R
    try:
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    dx = K @ r
    A = np.eye(P.shape[0]) - K @ H
    P_new = A @ P @ A.T + K @ R @ K.T
    return dx, P_new


@dataclass
class MeasurementPack:
    """Stacked residual/Jacobian/covariance ready for a Kalman update."""

    r: np.ndarray
    H: np.ndarray
    R: np.ndarray


def _residual(feature_est: Feature, models: ModelSet, state_est: ImuState,
              record) -> np.ndarray:
    pred = feature_predict(feature_est, models, state_est, record.payload)
    if record.kind == "line" and models.line_variant == "projective":
        return -pred
    r = record.z - pred
    if record.kind == "plane_hesse":
        r[0] = wrap_angle(r[0])
    return r


class _FilterBase:
    def __init__(self, state: HybridState, models: ModelSet,
                 noise: NoiseParams, mode: str = "standard",
                 truth: StateHistory | None = None,
                 true_features=None):
        if mode not in ("standard", "ideal"):
            raise ValueError(f"unknown linearization mode {mode!r}")
        if mode == "ideal" and truth is None:
            raise ValueError("ideal mode needs the true trajectory")
        self.state = state
        self.models = models
        self.noise = noise
        self.mode = mode
        self.truth = truth
        self.true_features = list(true_features) if true_features else None

    def _interval_phi_q(self, samples, truth_span):
        """IMU-block transition and noise over one exteroceptive interval."""
        imu_before = self.state.imu.copy()
        new_imu, est_hist = propagate_mean_history(imu_before, samples)
        if self.mode == "ideal":
            i0, i1 = truth_span
            phi = self.truth.phi_imu(i0, i1)
            Q = self.truth.qk_imu(i0, i1, self.noise)
        else:
            phi = est_hist.phi_imu(0, len(samples) - 1)
            Q = est_hist.qk_imu(0, len(samples) - 1, self.noise)
        return new_imu, phi, Q

    def _propagate_cov(self, phi_imu, Q_imu):
        n = self.state.dim
        phi = np.eye(n)
        phi[:IMU_DIM, :IMU_DIM] = phi_imu
        Q = np.zeros((n, n))
        Q[:IMU_DIM, :IMU_DIM] = Q_imu
        self.state.P = phi @ self.state.P @ phi.T + Q
        self._post_propagate(phi)
        self.state.symmetrize(check=False)

    def _post_propagate(self, phi):
        pass

    def _linearization_pose(self, truth_idx):
        if self.mode == "ideal":
            st = self.truth.state_at(truth_idx)
            return st.R, st.p
        return self.state.imu.R, self.state.imu.p

    def _linearization_feature(self, idx: int) -> Feature:
        if self.mode == "ideal":
            return self.true_features[idx]
        return self.state.features[idx]


class EkfSlam(_FilterBase):
    """EKF VI-SLAM: features live in the state vector."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # Running product of the applied transition matrices; lets tests
        # check that updates gain no information along unobservable
        # directions.
        self.phi_prod = np.eye(self.state.dim)

    def _post_propagate(self, phi):
        self.phi_prod = phi @ self.phi_prod

    def propagate(self, samples, truth_span=None):
        new_imu, phi, Q = self._interval_phi_q(samples, truth_span)
        self.state.imu = new_imu
        self._propagate_cov(phi, Q)

    def update(self, records, truth_idx=None):
        if not records:
            return
        R_lin, p_lin = self._linearization_pose(truth_idx)
        rows, resids, sigmas = [], [], []
        for rec in records:
            feat_lin = self._linearization_feature(rec.feat_idx)
            try:
                blocks = feature_blocks(feat_lin, self.models, R_lin, p_lin,
                                        rec.payload)
                r = _residual(self.state.features[rec.feat_idx], self.models,
                              self.state.imu, rec)
            except BehindCamera:
                continue
            H = np.zeros((blocks.rows, self.state.dim))
            H[:, TH] = blocks.theta
            H[:, POS] = blocks.pos
            H[:, self.state.feature_slice(rec.feat_idx)] = blocks.feat
            rows.append(H)
            resids.append(r)
            sigmas.append(np.broadcast_to(rec.sigma, (blocks.rows,)))
        if not rows:
            return
        H = np.vstack(rows)
        r = np.concatenate(resids)
        R = np.diag(np.concatenate(sigmas) ** 2)
        dx, P = joseph_update(self.state.P, H, R, r)
        self.state.P = P
        self.state.boxplus(dx)
        self.state.symmetrize(check=False)
        self.last_H = H


class Msckf(_FilterBase):
    """MSCKF VIO: stochastic clones plus null-space feature marginalization."""

    def __init__(self, *args, window: int = 10, min_track: int = 3,
                 init_features=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.window = window
        self.min_track = min_track
        # Linearization/prediction values for non-point features (points are
        # triangulated per track).
        self.init_features = list(init_features) if init_features else None
        self.tracks: dict[int, list] = {}
        self._uid = 0
        self.skipped_tracks = 0

    def propagate(self, samples, truth_span=None):
        new_imu, phi, Q = self._interval_phi_q(samples, truth_span)
        self.state.imu = new_imu
        self._propagate_cov(phi, Q)

    def augment(self, t: float, truth_idx=None):
        """Append a clone of the current pose (drop the oldest when full)."""
        if self.state.n_clones >= self.window:
            self.marginalize_oldest()
        imu = self.state.imu
        clone = ClonePose(t=t, q=imu.q.copy(), p=imu.p.copy(),
                          truth_idx=truth_idx, uid=self._uid)
        self._uid += 1
        n = self.state.dim
        J = np.zeros((6, n))
        J[0:3, TH] = np.eye(3)
        J[3:6, POS] = np.eye(3)
        P = self.state.P
        top = np.hstack([P, P @ J.T])
        bot = np.hstack([J @ P, J @ P @ J.T])
        self.state.clones.append(clone)
        self.state.P = np.vstack([top, bot])
        return clone

    def marginalize_oldest(self):
        dropped = self.state.clones.pop(0)
        s = slice(IMU_DIM, IMU_DIM + 6)
        keep = np.r_[np.arange(0, s.start), np.arange(s.stop, self.state.P.shape[0])]
        self.state.P = self.state.P[np.ix_(keep, keep)]
        for fid in list(self.tracks):
            self.tracks[fid] = [ob for ob in self.tracks[fid]
                                if ob[0] != dropped.uid]
            if not self.tracks[fid]:
                del self.tracks[fid]
        return dropped

    def record_observations(self, records):
        """Attach this step's measurements to the newest clone."""
        uid = self.state.clones[-1].uid
        for rec in records:
            self.tracks.setdefault(rec.feat_idx, []).append((uid, rec))

    def pending_update_needed(self) -> bool:
        if self.state.n_clones < self.window:
            return False
        oldest = self.state.clones[0].uid
        return any(ob[0] == oldest for obs in self.tracks.values() for ob in obs)

    def process_camera_step(self, t, records, samples=None, truth_span=None):
        """Propagate, slide the window (updating first if needed), observe."""
        if samples is not None:
            self.propagate(samples, truth_span)
        if self.pending_update_needed():
            self.update_tracks()
        truth_idx = truth_span[1] if truth_span is not None else None
        self.augment(t, truth_idx)
        self.record_observations(records)

    # -- track updates ----------------------------------------------------
    def _clone_by_uid(self, uid):
        for i, c in enumerate(self.state.clones):
            if c.uid == uid:
                return i, c
        return None, None

    def _triangulate(self, obs):
        """Gauss-Newton bearing triangulation from the clone estimates.

        Uses the leading mono bearing pair of each measurement; initialized
        by the linear closest-ray intersection.
        """
        poses, zs = [], []
        variant = self.models.point.variant
        for uid, rec in obs:
            _, clone = self._clone_by_uid(uid)
            if clone is None:
                continue
            poses.append((clone.R, clone.p))
            z = np.asarray(rec.z, dtype=float)
            zs.append(z[[0, 2]] if variant == "stereo" else z[-2:])
        A = np.zeros((3, 3))
        b = np.zeros(3)
        for (R, p), z in zip(poses, zs):
            d = R.T @ np.array([z[0], z[1], 1.0])
            d /= np.linalg.norm(d)
            Pi = np.eye(3) - np.outer(d, d)
            A += Pi
            b += Pi @ p
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientHf("triangulation normal matrix singular") from exc
        for _ in range(6):
            JTJ = np.zeros((3, 3))
            JTr = np.zeros(3)
            for (R, p), z in zip(poses, zs):
                local = R @ (x - p)
                if local[2] <= 1e-6:
                    raise RankDeficientHf("triangulated point behind camera")
                pred = local[:2] / local[2]
                J = np.array([[1.0 / local[2], 0.0, -local[0] / local[2] ** 2],
                              [0.0, 1.0 / local[2], -local[1] / local[2] ** 2]]) @ R
                r = z - pred
                JTJ += J.T @ J
                JTr += J.T @ r
            try:
                x = x + np.linalg.solve(JTJ, JTr)
            except np.linalg.LinAlgError as exc:
                raise RankDeficientHf("triangulation Hessian singular") from exc
        return x

    def _track_matrices(self, fid, obs):
        """Whitened stacked (r, H_x, H_f) for one feature track."""
        if self.mode == "ideal":
            # The benchmark filter linearizes and predicts at the truth;
            # the null-space projection still removes the feature
            # directions so its information content matches the standard
            # filter's structure.
            feat_est = feat_lin = self.true_features[fid]
        else:
            kind = obs[0][1].kind
            if kind in ("point", "point_spherical"):
                feat_est = Feature("point", self._triangulate(obs))
            else:
                feat_est = self.init_features[fid]
            feat_lin = feat_est

        rows_x, rows_f, resids = [], [], []
        for uid, rec in obs:
            ci, clone = self._clone_by_uid(uid)
            if clone is None:
                continue
            if self.mode == "ideal":
                tr = self.truth.state_at(clone.truth_idx)
                R_lin, p_lin = tr.R, tr.p
            else:
                R_lin, p_lin = clone.R, clone.p
            clone_state = ImuState(q=clone.q.copy(), p=clone.p.copy())
            try:
                blocks = feature_blocks(feat_lin, self.models, R_lin, p_lin,
                                        rec.payload)
                r = _residual(feat_est, self.models, clone_state, rec)
            except BehindCamera:
                continue
            sig = np.broadcast_to(rec.sigma, (blocks.rows,))
            Hx = np.zeros((blocks.rows, self.state.dim))
            s = self.state.clone_slice(ci)
            Hx[:, s.start:s.start + 3] = blocks.theta
            Hx[:, s.start + 3:s.stop] = blocks.pos
            rows_x.append(Hx / sig[:, None])
            rows_f.append(blocks.feat / sig[:, None])
            resids.append(r / sig)
        if len(resids) < self.min_track:
            raise RankDeficientHf("not enough usable observations")
        Hx = np.vstack(rows_x)
        Hf = np.vstack(rows_f)
        r = np.concatenate(resids)

        d = Hf.shape[1]
        if np.linalg.matrix_rank(Hf, tol=1e-10) < d:
            raise RankDeficientHf("feature Jacobian rank deficient")
        Q, _ = np.linalg.qr(Hf, mode="complete")
        A = Q[:, d:].T
        return A @ r, A @ Hx

    def update_tracks(self):
        """Consume all mature tracks with one projected EKF update."""
        rows, resids = [], []
        for fid in list(self.tracks):
            obs = self.tracks[fid]
            if len(obs) < self.min_track:
                continue
            try:
                r, Hx = self._track_matrices(fid, obs)
            except RankDeficientHf:
                self.skipped_tracks += 1
                del self.tracks[fid]
                continue
            rows.append(Hx)
            resids.append(r)
            del self.tracks[fid]
        if not rows:
            return
        H = np.vstack(rows)
        r = np.concatenate(resids)
        dx, P = joseph_update(self.state.P, H, np.eye(len(r)), r)
        self.state.P = P
        self.state.boxplus(dx)
        self.state.symmetrize(check=False)
        self.last_H = H
