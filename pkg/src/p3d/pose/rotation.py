"""Rotation conversions: axis-angle, matrices and the continuous 6D encoding.

All functions accept leading batch axes.
"""

from __future__ import annotations

import numpy as np


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues' formula; ``v`` has shape (..., 3), angle = |v| in radians."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(theta > 1e-12, theta, 1.0)
    k = np.where(theta > 1e-12, v / safe, 0.0)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack(
        [
            np.stack([zero, -kz, ky], axis=-1),
            np.stack([kz, zero, -kx], axis=-1),
            np.stack([-ky, kx, zero], axis=-1),
        ],
        axis=-2,
    )
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + (1.0 - c) * (K @ K)


def matrix_to_6d(R) -> np.ndarray:
    """First two columns of ``R``, column-major: (R11, R21, R31, R12, R22, R32)."""
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_to_matrix(a, eps: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt the 6D encoding back into a rotation matrix.

    Raises ``ValueError`` when the first column is (near) zero or the
    second is (near) parallel to it.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 6:
        raise ValueError(f"6D rotation must have trailing size 6, got {a.shape}")
    a1, a2 = a[..., :3], a[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < eps):
        raise ValueError("degenerate 6D rotation: first column is near zero")
    b1 = a1 / n1
    r = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(n2 < eps * np.maximum(1.0, np.linalg.norm(a2, axis=-1, keepdims=True))):
        raise ValueError("degenerate 6D rotation: columns are (near) parallel")
    b2 = r / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def axis_angle_to_6d(v) -> np.ndarray:
    return matrix_to_6d(axis_angle_to_matrix(v))
