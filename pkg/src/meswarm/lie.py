"""Group numerics for the 15-DoF vehicle state.

The state lives on the direct product of the extended pose group (a 5x5
matrix group packing rotation, position and velocity) with two additive
bias vectors.  Tangent vectors are ordered (rot, pos, vel, gyro_bias,
accel_bias), fifteen entries in total.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import skew, so3_exp, so3_left_jacobian

STATE_DOF = 15

# Frobenius drift beyond which a rotation gets re-orthonormalised.
ROT_DRIFT_TOL = 1e-9


def _vec3(v):
    a = np.asarray(v, dtype=float).reshape(3)
    return a


@dataclass(frozen=True)
class VehicleState:
    """One vehicle's rotation, position, velocity and IMU biases."""

    rot: np.ndarray          # 3x3 rotation matrix
    pos: np.ndarray          # m, inertial frame
    vel: np.ndarray          # m/s, inertial frame
    gyro_bias: np.ndarray    # rad/s
    accel_bias: np.ndarray   # m/s^2

    def pose_matrix(self):
        """5x5 homogeneous form of the extended pose."""
        m = np.zeros((5, 5))
        m[:3, :3] = self.rot
        m[:3, 3] = self.pos
        m[:3, 4] = self.vel
        m[3, 3] = 1.0
        m[4, 4] = 1.0
        return m


def make_state(rot, pos, vel, gyro_bias=None, accel_bias=None):
    rot = np.asarray(rot, dtype=float).reshape(3, 3)
    gyro_bias = np.zeros(3) if gyro_bias is None else _vec3(gyro_bias)
    accel_bias = np.zeros(3) if accel_bias is None else _vec3(accel_bias)
    return VehicleState(rot, _vec3(pos), _vec3(vel), gyro_bias, accel_bias)


def identity_state():
    return make_state(np.eye(3), np.zeros(3), np.zeros(3))


def project_rotation(r):
    """Nearest rotation matrix (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        out = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return out


def _renormalised(r):
    if np.linalg.norm(r.T @ r - np.eye(3)) > ROT_DRIFT_TOL:
        return project_rotation(r)
    return r


def compose(x, y):
    """Group product: poses multiply as 5x5 matrices, biases add."""
    rot = _renormalised(x.rot @ y.rot)
    return VehicleState(
        rot,
        x.pos + x.rot @ y.pos,
        x.vel + x.rot @ y.vel,
        x.gyro_bias + y.gyro_bias,
        x.accel_bias + y.accel_bias,
    )


def inverse(x):
    rt = x.rot.T
    return VehicleState(rt.copy(), -(rt @ x.pos), -(rt @ x.vel),
                        -x.gyro_bias, -x.accel_bias)


@dataclass(frozen=True)
class AlgebraElement:
    """Lie algebra element split into its five 3-vector slots."""

    rot: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    def pose_matrix(self):
        """5x5 matrix embedding of the extended-pose part."""
        m = np.zeros((5, 5))
        m[:3, :3] = skew(self.rot)
        m[:3, 3] = self.pos
        m[:3, 4] = self.vel
        return m


def wedge(q):
    q = np.asarray(q, dtype=float).reshape(STATE_DOF)
    return AlgebraElement(q[0:3].copy(), q[3:6].copy(), q[6:9].copy(),
                          q[9:12].copy(), q[12:15].copy())


def vee(psi):
    return np.concatenate([psi.rot, psi.pos, psi.vel,
                           psi.gyro_bias, psi.accel_bias])


def adjoint_matrix(psi):
    """15x15 matrix acting on tangent coordinates as the Lie bracket.

    The bracket only involves the extended-pose slots; both bias rows and
    columns are zero.
    """
    ad = np.zeros((STATE_DOF, STATE_DOF))
    rx = skew(psi.rot)
    ad[0:3, 0:3] = rx
    ad[3:6, 0:3] = skew(psi.pos)
    ad[3:6, 3:6] = rx
    ad[6:9, 0:3] = skew(psi.vel)
    ad[6:9, 6:9] = rx
    return ad


def adjoint_matrix_from_vector(q):
    return adjoint_matrix(wedge(q))


def group_exp(psi):
    """Exponential onto the group.

    Closed form: SO(3) exponential for the rotation slot, the shared SO(3)
    left Jacobian applied to the position and velocity columns, and the
    identity map on the (additive) bias slots.
    """
    if isinstance(psi, np.ndarray):
        psi = wedge(psi)
    r = so3_exp(psi.rot)
    j = so3_left_jacobian(psi.rot)
    return VehicleState(r, j @ psi.pos, j @ psi.vel,
                        psi.gyro_bias.copy(), psi.accel_bias.copy())


def rotation_error_angle(r_est, r_true):
    """Geodesic angle between two rotations, in [0, pi]."""
    c = 0.5 * (np.trace(r_est.T @ r_true) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# -- network helpers ---------------------------------------------------------

def network_compose_exp(states, q):
    """Right-multiply each vehicle state by exp of its 15-entry slice of q."""
    q = np.asarray(q, dtype=float).reshape(len(states) * STATE_DOF)
    return [compose(x, group_exp(q[i * STATE_DOF:(i + 1) * STATE_DOF]))
            for i, x in enumerate(states)]


def network_adjoint_from_vector(q, n):
    """Block-diagonal 15n x 15n adjoint of a stacked tangent vector."""
    out = np.zeros((n * STATE_DOF, n * STATE_DOF))
    for i in range(n):
        sl = slice(i * STATE_DOF, (i + 1) * STATE_DOF)
        out[sl, sl] = adjoint_matrix_from_vector(q[sl])
    return out
