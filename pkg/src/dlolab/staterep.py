"""End poses, end velocities, and the scale-normalized relative state.

The relative state stacks unit offset directions between consecutive
features (the first one taken from the left gripper position), the unit
end-to-end vector, and both gripper quaternions. It is invariant to
translations and, with the diagonal scale matrix applied to commanded
velocities, approximately invariant to uniform rescaling of the rod.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quatmath

QUAT_NORM_TOL = 1e-6
DEGENERATE_TOL = 1e-9


class DegenerateStateError(ValueError):
    """Raised when consecutive features (or grippers) coincide."""


@dataclass
class EndPose:
    """Poses of the two grippers: positions p1, p2 and unit quaternions q1, q2."""

    p1: np.ndarray
    q1: np.ndarray
    p2: np.ndarray
    q2: np.ndarray

    def validate(self) -> None:
        for name, q in (("q1", self.q1), ("q2", self.q2)):
            if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
                raise ValueError(f"{name} is not unit norm: {q}")

    def as_vector(self) -> np.ndarray:
        """Pack as r = [p1; q1; p2; q2] in R^14."""
        return np.concatenate([self.p1, self.q1, self.p2, self.q2])

    @classmethod
    def from_vector(cls, r: np.ndarray) -> "EndPose":
        r = np.asarray(r, dtype=float)
        if r.shape != (14,):
            raise ValueError(f"end pose vector must have shape (14,), got {r.shape}")
        return cls(p1=r[0:3].copy(), q1=r[3:7].copy(), p2=r[7:10].copy(), q2=r[10:14].copy())

    def copy(self) -> "EndPose":
        return EndPose(self.p1.copy(), self.q1.copy(), self.p2.copy(), self.q2.copy())


@dataclass
class EndVelocity:
    """Commanded end velocities: linear v1, v2 and world-frame angular w1, w2."""

    v1: np.ndarray
    w1: np.ndarray
    v2: np.ndarray
    w2: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Pack as nu = [v1; w1; v2; w2] in R^12."""
        return np.concatenate([self.v1, self.w1, self.v2, self.w2])

    @classmethod
    def from_vector(cls, nu: np.ndarray) -> "EndVelocity":
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (12,):
            raise ValueError(f"velocity vector must have shape (12,), got {nu.shape}")
        return cls(v1=nu[0:3].copy(), w1=nu[3:6].copy(), v2=nu[6:9].copy(), w2=nu[9:12].copy())


def relative_state(x: np.ndarray, r: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Relative state vector of features x (m,3) and end poses r (14,).

    Entries: the offset x_1 - p1, the offsets x_k - x_{k-1} for k >= 2,
    the offset p2 - p1, each normalized to unit length when ``normalize``
    is set, followed by q1 and q2. Output dimension is 3m + 11.

    Raises DegenerateStateError when any offset to normalize is shorter
    than DEGENERATE_TOL.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"features must have shape (m, 3), got {x.shape}")
    out = relative_state_batch(x[None], np.asarray(r, dtype=float)[None], normalize=normalize)
    return out[0]


def relative_state_batch(x: np.ndarray, r: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Vectorized relative_state over a batch: x (B,m,3), r (B,14) -> (B, 3m+11)."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    b, m, _ = x.shape
    p1 = r[:, 0:3]
    p2 = r[:, 7:10]
    offsets = np.empty((b, m + 1, 3))
    offsets[:, 0] = x[:, 0] - p1
    offsets[:, 1:m] = x[:, 1:] - x[:, :-1]
    offsets[:, m] = p2 - p1
    if normalize:
        norms = np.linalg.norm(offsets, axis=2)
        if np.any(norms < DEGENERATE_TOL):
            raise DegenerateStateError("coincident consecutive features or grippers")
        offsets = offsets / norms[:, :, None]
    return np.concatenate([offsets.reshape(b, -1), r[:, 3:7], r[:, 10:14]], axis=1)


def relative_state_dim(m: int) -> int:
    return 3 * m + 11


def scale_matrix(length: float) -> np.ndarray:
    """Diagonal 12x12 matrix pairing angular components with the rod length."""
    return np.diag(scale_diagonal(length))


def scale_diagonal(length: float) -> np.ndarray:
    if length <= 0.0:
        raise ValueError("length must be positive")
    d = np.ones(12)
    d[3:6] = length
    d[9:12] = length
    return d


def quat_rate_and_c(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quaternion rate maps M(q1), M(q2) and the 14x12 map C with rdot = C nu."""
    r = np.asarray(r, dtype=float)
    m1 = quatmath.rate_matrix(r[3:7])
    m2 = quatmath.rate_matrix(r[10:14])
    c = np.zeros((14, 12))
    c[0:3, 0:3] = np.eye(3)
    c[3:7, 3:6] = m1
    c[7:10, 6:9] = np.eye(3)
    c[10:14, 9:12] = m2
    return m1, m2, c


def rotate_about_vertical_batch(
    x: np.ndarray,
    xdot: np.ndarray,
    r: np.ndarray,
    nu: np.ndarray,
    angles: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Rotate a batch of samples about the world z axis by per-sample angles.

    Features, feature velocities, gripper positions, linear and angular
    velocities rotate as vectors; gripper quaternions are left-multiplied
    by the rotation. Shapes: x (B,m,3), xdot (B,m,3), r (B,14), nu (B,12).
    """
    c = np.cos(angles)
    s = np.sin(angles)

    def rot_vec(v: np.ndarray) -> np.ndarray:
        # v: (..., 3) with leading batch axis matching angles
        shape = (v.shape[0],) + (1,) * (v.ndim - 2)
        cc = c.reshape(shape)
        ss = s.reshape(shape)
        out = np.empty_like(v)
        out[..., 0] = cc * v[..., 0] - ss * v[..., 1]
        out[..., 1] = ss * v[..., 0] + cc * v[..., 1]
        out[..., 2] = v[..., 2]
        return out

    def rot_quat(q: np.ndarray) -> np.ndarray:
        # left-multiply by (cos(a/2), 0, 0, sin(a/2))
        ch = np.cos(0.5 * angles)
        sh = np.sin(0.5 * angles)
        w, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        return np.stack([
            ch * w - sh * qz,
            ch * qx - sh * qy,
            ch * qy + sh * qx,
            ch * qz + sh * w,
        ], axis=1)

    r_out = np.empty_like(r)
    r_out[:, 0:3] = rot_vec(r[:, 0:3])
    r_out[:, 3:7] = rot_quat(r[:, 3:7])
    r_out[:, 7:10] = rot_vec(r[:, 7:10])
    r_out[:, 10:14] = rot_quat(r[:, 10:14])

    nu_out = np.concatenate([
        rot_vec(nu[:, 0:3]), rot_vec(nu[:, 3:6]),
        rot_vec(nu[:, 6:9]), rot_vec(nu[:, 9:12]),
    ], axis=1)
    return rot_vec(x), rot_vec(xdot), r_out, nu_out


def rotate_relative_inputs(
    s: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    angles: np.ndarray,
    m: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotate precomputed relative states about the vertical axis.

    Equivalent to rotating the raw sample and recomputing, because offset
    norms are rotation invariant: the m+1 direction blocks of s rotate as
    vectors, the two quaternion blocks are left-multiplied, and the
    velocity blocks of u (B,12) and the stacked targets y (B,3m) rotate
    as vectors. Used for on-the-fly training augmentation.
    """
    c = np.cos(angles)[:, None, None]
    sn = np.sin(angles)[:, None, None]

    def rot3(v: np.ndarray) -> np.ndarray:
        # v: (B, nblocks, 3)
        out = np.empty_like(v)
        out[:, :, 0] = c[:, :, 0] * v[:, :, 0] - sn[:, :, 0] * v[:, :, 1]
        out[:, :, 1] = sn[:, :, 0] * v[:, :, 0] + c[:, :, 0] * v[:, :, 1]
        out[:, :, 2] = v[:, :, 2]
        return out

    def rotq(q: np.ndarray) -> np.ndarray:
        ch = np.cos(0.5 * angles)
        sh = np.sin(0.5 * angles)
        w, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        return np.stack([
            ch * w - sh * qz,
            ch * qx - sh * qy,
            ch * qy + sh * qx,
            ch * qz + sh * w,
        ], axis=1)

    nd = 3 * (m + 1)
    s_out = np.empty_like(s)
    s_out[:, :nd] = rot3(s[:, :nd].reshape(-1, m + 1, 3)).reshape(s.shape[0], nd)
    s_out[:, nd : nd + 4] = rotq(s[:, nd : nd + 4])
    s_out[:, nd + 4 :] = rotq(s[:, nd + 4 :])
    u_out = rot3(u.reshape(-1, 4, 3)).reshape(u.shape)
    y_out = rot3(y.reshape(-1, m, 3)).reshape(y.shape)
    return s_out, u_out, y_out
