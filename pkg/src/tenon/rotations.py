"""Quaternion and 6D rotation utilities.

Quaternions are scalar-first ``(w, x, y, z)`` and unit-norm unless stated
otherwise. The 6D representation is the first two columns of the rotation
matrix, flattened column-major: ``[r11, r21, r31, r12, r22, r32]``. All
functions accept either a single rotation or a leading batch dimension.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DegenerateRotationError",
    "quat_normalize",
    "quat_about_y",
    "yaw_from_quat",
    "quat_angle_deg",
    "slerp",
    "quat_to_rotmat",
    "rotmat_to_quat",
    "quat_to_rot6d",
    "rot6d_to_rotmat",
    "rot6d_to_quat",
]


class DegenerateRotationError(ValueError):
    """Raised when a 6D rotation has (near-)parallel columns."""


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_about_y(theta: float) -> np.ndarray:
    """Quaternion for a rotation of ``theta`` radians about the world y-axis."""
    return np.array([np.cos(theta / 2.0), 0.0, np.sin(theta / 2.0), 0.0])


def yaw_from_quat(q: np.ndarray) -> float:
    """Rotation angle about y encoded by a (planar) quaternion, in radians."""
    R = quat_to_rotmat(q)
    return float(np.arctan2(R[..., 0, 2], R[..., 0, 0]))


def quat_angle_deg(q0: np.ndarray, q1: np.ndarray) -> float:
    """Geodesic angle between two unit quaternions, in degrees."""
    d = abs(float(np.dot(np.asarray(q0, dtype=float), np.asarray(q1, dtype=float))))
    return float(np.degrees(2.0 * np.arccos(min(d, 1.0))))


def slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    """Spherical linear interpolation along the shortest arc.

    Exact at the endpoints: ``slerp(q0, q1, 0) == q0`` and
    ``slerp(q0, q1, 1) == +/-q1`` (sign-corrected to the q0 hemisphere).
    Falls back to normalized lerp when the quaternions are nearly aligned.
    """
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + u * (q1 - q0))
    omega = np.arccos(min(dot, 1.0))
    so = np.sin(omega)
    return (np.sin((1.0 - u) * omega) / so) * q0 + (np.sin(u * omega) / so) * q1


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=float)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's branch-stable method)."""
    R = np.asarray(R, dtype=float)
    if R.ndim > 2:
        return np.stack([rotmat_to_quat(r) for r in R])
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_to_rot6d(q: np.ndarray) -> np.ndarray:
    """First two rotation-matrix columns, column-major: [r11,r21,r31,r12,r22,r32]."""
    R = quat_to_rotmat(q)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_rotmat(r6: np.ndarray, *, parallel_tol: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt a 6D rotation back to an orthonormal matrix with det +1.

    Scale-invariant: rescaling either column leaves the result unchanged.
    Raises :class:`DegenerateRotationError` when the columns are parallel
    within ``parallel_tol`` of the unit cosine.
    """
    r6 = np.asarray(r6, dtype=float)
    c1, c2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(c2, axis=-1, keepdims=True)
    if np.any(n1 < 1e-12) or np.any(n2 < 1e-12):
        raise DegenerateRotationError("6D rotation has a near-zero column")
    cosang = np.abs(np.sum(c1 * c2, axis=-1, keepdims=True)) / (n1 * n2)
    if np.any(cosang > 1.0 - parallel_tol):
        raise DegenerateRotationError("6D rotation columns are near-parallel")
    a1 = c1 / n1
    a2 = c2 - np.sum(c2 * a1, axis=-1, keepdims=True) * a1
    a2 = a2 / np.linalg.norm(a2, axis=-1, keepdims=True)
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3], axis=-1)


def rot6d_to_quat(r6: np.ndarray) -> np.ndarray:
    return rotmat_to_quat(rot6d_to_rotmat(r6))
