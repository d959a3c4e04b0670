"""Quaternion helpers, scalar-first convention q = (w, x, y, z).

World-frame angular velocities throughout: qdot = 0.5 * (0, omega) x q,
where x is the Hamilton product.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm."""
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a x b, both scalar-first."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q.

    v may be shape (3,) or (..., 3); the rotation is applied along the
    last axis using R(q) v = v + 2w (u x v) + 2 u x (u x v), u = q[1:].
    """
    u = q[1:]
    w = q[0]
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of unit quaternion q."""
    return rotate(q, np.eye(3)).T


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) / n * axis))


def from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion for extrinsic x-y-z (roll, pitch, yaw) rotations."""
    qx = from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return multiply(qz, multiply(qy, qx))


def rate_matrix(q: np.ndarray) -> np.ndarray:
    """4x3 map M(q) with qdot = M(q) omega for world-frame omega.

    Rows follow from 0.5 * (0, omega) x q expanded in omega.
    """
    w, x, y, z = q
    return 0.5 * np.array([
        [-x, -y, -z],
        [w, z, -y],
        [-z, w, x],
        [y, -x, w],
    ])


def rotated_vector_jacobian(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """3x4 derivative of R(q) v with respect to the raw quaternion entries.

    Taken without the unit-norm constraint; contracting against tangent
    directions (such as M(q) omega) gives the constrained derivative.
    """
    u = q[1:]
    w = q[0]
    col_w = 2.0 * np.cross(u, v)
    d_u = -2.0 * w * skew(v) + 2.0 * (
        np.outer(u, v) + np.dot(u, v) * np.eye(3) - 2.0 * np.outer(v, u)
    )
    return np.column_stack([col_w, d_u])


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def axis_angle_between(q_from: np.ndarray, q_to: np.ndarray) -> tuple[np.ndarray, float]:
    """World-frame rotation axis and angle taking q_from to q_to.

    Returns (axis, angle) with angle in [0, pi]; axis is arbitrary unit
    when angle is zero.
    """
    rel = multiply(q_to, conjugate(q_from))
    if rel[0] < 0.0:
        rel = -rel
    w = min(1.0, max(-1.0, float(rel[0])))
    angle = 2.0 * np.arccos(w)
    s = np.linalg.norm(rel[1:])
    if s < 1e-14:
        return np.array([1.0, 0.0, 0.0]), 0.0
    return rel[1:] / s, angle
