"""IMU mean propagation and the discrete error-state transition machinery.

The 15-dim IMU error state is ordered (dtheta, bg~, v~, ba~, p~).  The
discrete transition matrix over [t1, tk] has closed-form blocks in the
first column (attitude, velocity, position vs. attitude) and quadrature
blocks elsewhere; all integrals are evaluated with the trapezoidal rule on
the IMU sample grid, via cumulative arrays so that any (t1, tk) pair costs
O(1) after an O(n) precompute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .geometry import (
    QUAT_IDENTITY,
    quat_multiply,
    quat_normalize,
    quat_to_rot,
    skew,
)

GRAVITY = 9.81
GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])

IMU_DIM = 15
TH = slice(0, 3)
BG = slice(3, 6)
VEL = slice(6, 9)
BA = slice(9, 12)
POS = slice(12, 15)


class EmptySampleSeq(ValueError):
    """Mean propagation called without IMU samples."""


class IntervalNotCovered(ValueError):
    """Requested times fall outside the stored trajectory grid."""


@dataclass
class ImuState:
    """Nominal IMU state: attitude (global->local), biases, velocity, position."""

    q: np.ndarray = field(default_factory=lambda: QUAT_IDENTITY.copy())
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def R(self):
        return quat_to_rot(self.q)

    def copy(self) -> "ImuState":
        return ImuState(self.q.copy(), self.bg.copy(), self.v.copy(),
                        self.ba.copy(), self.p.copy())


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities (gyro, gyro-bias, accel, accel-bias)."""

    sigma_g: float
    sigma_wg: float
    sigma_a: float
    sigma_wa: float

    def qc(self):
        return np.diag(np.concatenate([
            np.full(3, self.sigma_g ** 2),
            np.full(3, self.sigma_wg ** 2),
            np.full(3, self.sigma_a ** 2),
            np.full(3, self.sigma_wa ** 2),
        ]))


def _quat_rate(q, w):
    # 0.5 * Omega(w) @ q, unrolled
    qx, qy, qz, qw = q
    wx, wy, wz = w
    return 0.5 * np.array([
        wz * qy - wy * qz + wx * qw,
        -wz * qx + wx * qz + wy * qw,
        wy * qx - wx * qy + wz * qw,
        -wx * qx - wy * qy - wz * qz,
    ])


def _state_derivative(q, v, omega, accel_body):
    dq = _quat_rate(q, omega)
    dv = quat_to_rot(q).T @ accel_body + GRAVITY_VEC
    return dq, dv


def _rk4_step(q, v, p, dt, w0, w1, a0, a1):
    wm = 0.5 * (w0 + w1)
    am = 0.5 * (a0 + a1)

    dq1, dv1 = _state_derivative(q, v, w0, a0)
    dp1 = v
    q2 = quat_normalize(q + 0.5 * dt * dq1)
    dq2, dv2 = _state_derivative(q2, v, wm, am)
    dp2 = v + 0.5 * dt * dv1
    q3 = quat_normalize(q + 0.5 * dt * dq2)
    dq3, dv3 = _state_derivative(q3, v, wm, am)
    dp3 = v + 0.5 * dt * dv2
    q4 = quat_normalize(q + dt * dq3)
    dq4, dv4 = _state_derivative(q4, v, w1, a1)
    dp4 = v + dt * dv3

    q_new = quat_normalize(q + dt / 6.0 * (dq1 + 2 * dq2 + 2 * dq3 + dq4))
    v_new = v + dt / 6.0 * (dv1 + 2 * dv2 + 2 * dv3 + dv4)
    p_new = p + dt / 6.0 * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
    return q_new, v_new, p_new


def propagate_mean(state: ImuState, samples: Sequence[ImuSample]) -> ImuState:
    """RK4 integration of the IMU kinematics with piecewise-linear inputs.

    Biases are held constant and subtracted from the raw samples.
    """
    out, _ = propagate_mean_history(state, samples)
    return out


def propagate_mean_history(state: ImuState, samples: Sequence[ImuSample]):
    """Like propagate_mean but also returns the visited StateHistory."""
    if len(samples) == 0:
        raise EmptySampleSeq("need at least one IMU sample")
    n = len(samples)
    t = np.array([s.t for s in samples])
    omegas = np.array([s.omega for s in samples]) - state.bg
    accels = np.array([s.accel for s in samples]) - state.ba

    qs = np.empty((n, 4))
    vs = np.empty((n, 3))
    ps = np.empty((n, 3))
    q, v, p = state.q.copy(), state.v.copy(), state.p.copy()
    qs[0], vs[0], ps[0] = q, v, p
    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        if dt <= 0.0:
            raise ValueError("IMU timestamps must be strictly increasing")
        q, v, p = _rk4_step(q, v, p, dt, omegas[i], omegas[i + 1],
                            accels[i], accels[i + 1])
        qs[i + 1], vs[i + 1], ps[i + 1] = q, v, p

    Rs = np.array([quat_to_rot(qi) for qi in qs])
    hist = StateHistory(t=t, R=Rs, v=vs, p=ps, a_body=accels, q=qs)
    final = ImuState(q=q, bg=state.bg.copy(), v=v, ba=state.ba.copy(), p=p)
    return final, hist


def _cumtrapz(values, t):
    """Cumulative trapezoid along axis 0; values shape (n, ...)."""
    dt = np.diff(t)
    shape = (1,) * (values.ndim - 1)
    incr = 0.5 * dt.reshape((-1,) + shape) * (values[:-1] + values[1:])
    out = np.zeros_like(values)
    out[1:] = np.cumsum(incr, axis=0)
    return out


@dataclass
class StateHistory:
    """Trajectory snapshots on the IMU grid used to linearize propagation.

    ``R[i]`` maps global to local at t[i]; ``a_body`` is the bias-corrected
    specific force.  ``q`` is optional (kept when built by propagation).
    """

    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    a_body: np.ndarray
    q: np.ndarray | None = None

    @classmethod
    def from_triplets(cls, traj):
        """Build from a sequence of (t, ImuState, ImuSample) triplets."""
        t = np.array([item[0] for item in traj])
        R = np.array([item[1].R for item in traj])
        v = np.array([item[1].v for item in traj])
        p = np.array([item[1].p for item in traj])
        a = np.array([item[2].accel - item[1].ba for item in traj])
        q = np.array([item[1].q for item in traj])
        return cls(t=t, R=R, v=v, p=p, a_body=a, q=q)

    def index(self, time: float) -> int:
        i = int(np.searchsorted(self.t, time - 1e-9))
        if i >= len(self.t) or abs(self.t[i] - time) > 1e-6:
            raise IntervalNotCovered(f"t={time} not on the trajectory grid")
        return i

    def state_at(self, i: int) -> ImuState:
        q = self.q[i] if self.q is not None else None
        from .geometry import rot_to_quat
        if q is None:
            q = rot_to_quat(self.R[i])
        return ImuState(q=q.copy(), bg=np.zeros(3), v=self.v[i].copy(),
                        ba=np.zeros(3), p=self.p[i].copy())

    # -- cumulative quadrature tables ------------------------------------
    @cached_property
    def _RT(self):
        return np.transpose(self.R, (0, 2, 1))

    @cached_property
    def _T(self):
        # T(t) = int_{t0}^{t} R(tau)^T dtau
        return _cumtrapz(self._RT, self.t)

    @cached_property
    def _U(self):
        # U(t) = int int R^T
        return _cumtrapz(self._T, self.t)

    @cached_property
    def _C(self):
        # C(s) = R_s^T [a_s x] R_s  ==  [ (R_s^T a_s) x ]
        Ra = np.einsum("nij,nj->ni", self._RT, self.a_body)
        C = np.zeros((len(self.t), 3, 3))
        C[:, 0, 1] = -Ra[:, 2]
        C[:, 0, 2] = Ra[:, 1]
        C[:, 1, 0] = Ra[:, 2]
        C[:, 1, 2] = -Ra[:, 0]
        C[:, 2, 0] = -Ra[:, 1]
        C[:, 2, 1] = Ra[:, 0]
        return C

    @cached_property
    def _Ccum(self):
        return _cumtrapz(self._C, self.t)

    @cached_property
    def _CT(self):
        return _cumtrapz(np.einsum("nij,njk->nik", self._C, self._T), self.t)

    @cached_property
    def _Ccum2(self):
        return _cumtrapz(self._Ccum, self.t)

    @cached_property
    def _CT2(self):
        return _cumtrapz(self._CT, self.t)

    # -- transition blocks -------------------------------------------------
    def phi_imu(self, i: int, k: int):
        """15x15 transition matrix from grid index i to k (i <= k)."""
        if not (0 <= i <= k < len(self.t)):
            raise IntervalNotCovered("indices outside the stored grid")
        dt = self.t[k] - self.t[i]
        Ri, Rk = self.R[i], self.R[k]
        T = self._T[k] - self._T[i]
        U = self._U[k] - self._U[i] - dt * self._T[i]
        Ccum = self._Ccum[k] - self._Ccum[i]
        CT = self._CT[k] - self._CT[i]

        phi = np.eye(IMU_DIM)
        phi[TH, TH] = Rk @ Ri.T
        phi[TH, BG] = -Rk @ T
        phi[VEL, TH] = -skew(self.v[k] - self.v[i] - GRAVITY_VEC * dt) @ Ri.T
        phi[VEL, BG] = CT - Ccum @ self._T[i]
        phi[VEL, BA] = -T
        phi[POS, TH] = skew(self.p[i] + self.v[i] * dt
                            + 0.5 * GRAVITY_VEC * dt * dt - self.p[k]) @ Ri.T
        phi[POS, BG] = (self._CT2[k] - self._CT2[i] - dt * self._CT[i]
                        - (self._Ccum2[k] - self._Ccum2[i]
                           - dt * self._Ccum[i]) @ self._T[i])
        phi[POS, VEL] = dt * np.eye(3)
        phi[POS, BA] = -U
        return phi

    def qk_imu(self, i: int, k: int, noise: NoiseParams):
        """15x15 discrete noise covariance over grid indices [i, k]."""
        if not (0 <= i <= k < len(self.t)):
            raise IntervalNotCovered("indices outside the stored grid")
        qc = noise.qc()
        Q = np.zeros((IMU_DIM, IMU_DIM))

        def gqg(j):
            G = np.zeros((IMU_DIM, 12))
            G[TH, 0:3] = -np.eye(3)
            G[BG, 3:6] = np.eye(3)
            G[VEL, 6:9] = -self._RT[j]
            G[BA, 9:12] = np.eye(3)
            return G @ qc @ G.T

        for j in range(i, k):
            phi_step = self.phi_imu(j, j + 1)
            dt = self.t[j + 1] - self.t[j]
            Q = phi_step @ (Q + 0.5 * dt * gqg(j)) @ phi_step.T \
                + 0.5 * dt * gqg(j + 1)
        return 0.5 * (Q + Q.T)


@dataclass(frozen=True)
class StateTransition:
    """Discrete transition matrix with identity feature block."""

    phi: np.ndarray
    m_feat: int

    @property
    def phi11(self):
        return self.phi[TH, TH]

    @property
    def phi12(self):
        return self.phi[TH, BG]

    @property
    def phi31(self):
        return self.phi[VEL, TH]

    @property
    def phi32(self):
        return self.phi[VEL, BG]

    @property
    def phi34(self):
        return self.phi[VEL, BA]

    @property
    def phi51(self):
        return self.phi[POS, TH]

    @property
    def phi52(self):
        return self.phi[POS, BG]

    @property
    def phi53(self):
        return self.phi[POS, VEL]

    @property
    def phi54(self):
        return self.phi[POS, BA]


def _as_history(traj) -> StateHistory:
    if isinstance(traj, StateHistory):
        return traj
    return StateHistory.from_triplets(traj)


def compute_phi(traj, t1: float, tk: float, m_feat: int = 0) -> StateTransition:
    """Discrete error-state transition matrix over [t1, tk].

    ``traj`` is a StateHistory or a sequence of (t, ImuState, ImuSample)
    triplets providing the linearization trajectory.
    """
    hist = _as_history(traj)
    i, k = hist.index(t1), hist.index(tk)
    if k < i:
        raise IntervalNotCovered("tk must not precede t1")
    n = IMU_DIM + m_feat
    phi = np.eye(n)
    phi[:IMU_DIM, :IMU_DIM] = hist.phi_imu(i, k)
    return StateTransition(phi=phi, m_feat=m_feat)


def compute_qk(traj, t_a: float, t_b: float, noise: NoiseParams,
               m_feat: int = 0):
    """Discrete noise covariance over [t_a, t_b]; feature block is zero."""
    hist = _as_history(traj)
    i, k = hist.index(t_a), hist.index(t_b)
    if k < i:
        raise IntervalNotCovered("t_b must not precede t_a")
    n = IMU_DIM + m_feat
    Q = np.zeros((n, n))
    Q[:IMU_DIM, :IMU_DIM] = hist.qk_imu(i, k, noise)
    return Q
