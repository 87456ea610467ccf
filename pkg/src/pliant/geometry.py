"""SE(3) poses, the continuous 6D rotation encoding, and pose errors.

Rotations are plain 3x3 numpy arrays with orthonormal columns and det +1.
The 6D encoding is the first two rotation-matrix columns concatenated; it is
decoded back to a full rotation by Gram-Schmidt, so arbitrary (e.g. network
output) 6-vectors are acceptable decoder input.

All functions here are pure and operate on float64 arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation

ORTHO_TOL = 1e-9
_NORM_EPS = 1e-8


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        return False
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    return bool(err < tol and abs(np.linalg.det(R) - 1.0) < tol)


def require_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R, tol):
        raise DegenerateRotation(f"matrix is not a rotation within {tol}")
    return R


def rotmat_to_6d(R: np.ndarray) -> np.ndarray:
    """First two columns of a valid rotation matrix, concatenated."""
    R = require_rotation(R)
    return np.concatenate([R[:, 0], R[:, 1]])


def sixd_to_rotmat(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode of a 6-vector into a rotation matrix.

    b1 = normalize(a1); b2 = normalize(a2 - (b1.a2) b1); b3 = b1 x b2.
    Raises DegenerateRotation when either half is near zero or the halves
    are near parallel.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape != (6,):
        raise DegenerateRotation(f"expected 6-vector, got shape {r6.shape}")
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    n2 = np.linalg.norm(a2)
    if n1 < _NORM_EPS or n2 < _NORM_EPS:
        raise DegenerateRotation("6D half has near-zero norm")
    b1 = a1 / n1
    residual = a2 - np.dot(b1, a2) * b1
    rnorm = np.linalg.norm(residual)
    if rnorm < _NORM_EPS * n2:
        raise DegenerateRotation("6D halves are near parallel")
    b2 = residual / rnorm
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def so3_hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula; series expansion below 1e-8 rad."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = so3_hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def rotmat_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Log map to an axis*angle vector with norm in [0, pi].

    Near angle pi the axis comes from the unit eigenvector of R with
    eigenvalue +1 (largest-norm column of R + I), with its sign fixed so the
    largest-magnitude component is positive; this makes the pi case
    deterministic.
    """
    R = np.asarray(R, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-10:
        return np.zeros(3)
    if theta < np.pi - 1e-6:
        axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return axis / (2.0 * np.sin(theta)) * theta
    M = R + np.eye(3)
    col = int(np.argmax(np.linalg.norm(M, axis=0)))
    axis = M[:, col]
    axis = axis / np.linalg.norm(axis)
    if axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    return axis * theta


@dataclass(frozen=True)
class Pose:
    """Position (m) plus rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_pose9(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=np.float64)
        return Pose(v[:3].copy(), sixd_to_rotmat(v[3:9]))

    def to_pose9(self) -> np.ndarray:
        return np.concatenate([self.position, rotmat_to_6d(self.rotation)])


@dataclass(frozen=True)
class Wrench:
    """Force (N) and torque (N.m), both 3-vectors."""

    force: np.ndarray
    torque: np.ndarray

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Wrench":
        v = np.asarray(v, dtype=np.float64)
        return Wrench(v[:3].copy(), v[3:6].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """6-vector [dp (m), dr (rad)] from current to target.

    Translation part is target - current; rotation part is the rotation
    vector of target.rotation @ current.rotation^T, so its norm never
    exceeds pi.
    """
    dp = np.asarray(target.position, dtype=np.float64) - np.asarray(current.position, dtype=np.float64)
    dr = rotmat_to_rotvec(np.asarray(target.rotation) @ np.asarray(current.rotation).T)
    return np.concatenate([dp, dr])


def rot_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
