"""Rotation, covariance and temporal-conditioning kernels.

Quaternions are stored as ``(w, x, y, z)``. Every function accepts a single
item or a stack along leading axes unless noted otherwise.
"""
from typing import NamedTuple

import numpy as np

from .errors import DegenerateRotationError, DegenerateTemporalError

UNIT_TOL = 1e-6
ROT_TOL = 1e-6
EQ9_MIN = 1e-6
SIGMA_T_MIN = 1e-12
PSD_FLOOR = 1e-12
PSD_NEG_LIMIT = -1e-8


class TemporalSlice(NamedTuple):
    mean3: np.ndarray
    cov3: np.ndarray
    temporal_weight: np.ndarray


def canonicalize_quat(q):
    """Flip sign so that ``w >= 0``; when ``w == 0`` the first nonzero of x, y, z is positive."""
    q = np.array(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    for row in flat:
        lead = next((v for v in row if v != 0.0), 0.0)
        if lead < 0.0:
            row *= -1.0
    return flat.reshape(q.shape)


def normalize_quat(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize a zero quaternion")
    return canonicalize_quat(q / n)


def _check_unit(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    dev = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(dev > UNIT_TOL):
        raise ValueError(f"quaternion is not unit (norm deviation {dev.max():.3g})")
    return q


def quat_multiply(a, b):
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rot3(q):
    q = _check_unit(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _check_rotation(R, dim):
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation contains non-finite entries")
    eye = np.eye(dim)
    orth = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(axis=(-2, -1))
    det = np.linalg.det(R)
    if np.any(orth > ROT_TOL) or np.any(np.abs(det - 1.0) > ROT_TOL):
        raise ValueError("matrix is not a proper rotation")
    return R


def rot3_to_quat(R):
    """Unit quaternion of a 3x3 rotation.

    Uses the trace formula ``w = sqrt(1 + tr R) / 2`` and falls back to the
    largest-diagonal branch when ``1 + tr R`` is below 1e-6.
    """
    R = _check_rotation(R, 3)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if 1.0 + tr >= EQ9_MIN:
            w = 0.5 * np.sqrt(1.0 + tr)
            out[i] = (
                w,
                (m[2, 1] - m[1, 2]) / (4.0 * w),
                (m[0, 2] - m[2, 0]) / (4.0 * w),
                (m[1, 0] - m[0, 1]) / (4.0 * w),
            )
        else:
            k = int(np.argmax(np.diag(m)))
            if k == 0:
                s = 2.0 * np.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0))
                out[i] = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
            elif k == 1:
                s = 2.0 * np.sqrt(max(1.0 + m[1, 1] - m[0, 0] - m[2, 2], 0.0))
                out[i] = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
            else:
                s = 2.0 * np.sqrt(max(1.0 + m[2, 2] - m[0, 0] - m[1, 1], 0.0))
                out[i] = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return canonicalize_quat(out).reshape(R.shape[:-2] + (4,))


def left_matrix(q):
    """4x4 matrix of left multiplication by ``q``."""
    a, b, c, d = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    rows = [[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def right_matrix(q):
    """4x4 matrix of right multiplication by ``q``."""
    p, q_, r, s = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    rows = [[p, -q_, -r, -s], [q_, p, s, -r], [r, -s, p, q_], [s, r, -q_, p]]
    return np.stack([np.stack(r_, axis=-1) for r_ in rows], axis=-2)


def rot4_from_pair(left, right):
    left = _check_unit(left)
    right = _check_unit(right)
    return left_matrix(left) @ right_matrix(right)


def pair_from_rot4(R):
    """Inverse of :func:`rot4_from_pair` for a single rotation.

    ``R x = l * x * r``, so ``R e0 = l * r`` and conjugation by ``l`` is read
    off from the images of the imaginary units.
    """
    R = _check_rotation(R, 4)
    if R.ndim != 2:
        raise ValueError("pair_from_rot4 takes a single 4x4 matrix")
    lr = R[:, 0]
    spin = np.empty((3, 3))
    for k in range(3):
        spin[:, k] = quat_multiply(R[:, k + 1], quat_conj(lr))[1:]
    left = rot3_to_quat(spin)
    right = quat_multiply(quat_conj(left), lr)
    right /= np.linalg.norm(right)
    return left, right


def build_cov(R, log_scales):
    """``R diag(exp(2 s)) R^T`` for 3D or 4D rotations."""
    R = np.asarray(R, dtype=np.float64)
    var = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    if not np.all(np.isfinite(var)):
        raise ValueError("log-scales must be finite")
    cov = (R * var[..., None, :]) @ np.swapaxes(R, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def temporal_weight(mean_t, var_t, t):
    return np.exp(-0.5 * (t - mean_t) ** 2 / var_t)


def _clamp_psd(cov):
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] >= PSD_FLOOR:
        return cov
    if vals[0] < PSD_NEG_LIMIT:
        raise ValueError(f"conditional covariance is indefinite (min eigenvalue {vals[0]:.3g})")
    vals = np.maximum(vals, PSD_FLOOR)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


def condition_at_time(mean4, cov4, t):
    """Spatial Gaussian of a space-time Gaussian at time ``t``."""
    mean4 = np.asarray(mean4, dtype=np.float64)
    cov4 = np.asarray(cov4, dtype=np.float64)
    var_t = cov4[3, 3]
    if not var_t >= SIGMA_T_MIN:
        raise DegenerateTemporalError(f"temporal variance {var_t:.3g} below {SIGMA_T_MIN}")
    cross = cov4[:3, 3]
    dt = t - mean4[3]
    mean3 = mean4[:3] + cross * (dt / var_t)
    cov3 = cov4[:3, :3] - np.outer(cross, cov4[3, :3]) / var_t
    return TemporalSlice(mean3, _clamp_psd(cov3), temporal_weight(mean4[3], var_t, t))


def extract_spatial_rot(R):
    """Nearest proper rotation to the spatial block of a 4D rotation.

    Returns ``(R3, leakage)`` where leakage is the Frobenius norm of the
    space-time mixing entries.
    """
    R = _check_rotation(R, 4)
    block = R[:3, :3]
    leakage = float(np.sqrt(np.sum(R[:3, 3] ** 2) + np.sum(R[3, :3] ** 2)))
    if leakage == 0.0:
        return block.copy(), leakage
    U, sv, Vt = np.linalg.svd(block)
    if sv.max() < 1e-9:
        raise DegenerateRotationError("spatial block of the 4D rotation is singular")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt, leakage
