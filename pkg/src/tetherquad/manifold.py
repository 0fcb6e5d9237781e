"""Coordinate-free primitives on the two-sphere and SO(3).

All functions broadcast over leading axes, so a stack of vectors with shape
``(..., 3)`` maps to a stack of matrices ``(..., 3, 3)`` and vice versa.
"""

import numpy as np

SMALL_ANGLE = 1e-6
SKEW_TOL = 1e-8

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def hat(v):
    """Map a 3-vector to the skew-symmetric matrix with ``hat(v) @ y == cross(v, y)``."""
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def vee(S, check=True):
    """Inverse of :func:`hat`.

    Raises ``ValueError`` when ``S`` is not skew-symmetric to within 1e-8.
    """
    S = np.asarray(S, dtype=float)
    if check and np.any(np.abs(S + np.swapaxes(S, -1, -2)) > SKEW_TOL):
        raise ValueError("vee: matrix is not skew-symmetric")
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def _rodrigues_coeffs(theta):
    # sin(t)/t and (1 - cos(t))/t^2 with a series branch near zero
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return a, b


def exp_so3(v):
    """Rodrigues formula: rotation matrix ``exp(hat(v))``."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    a, b = _rodrigues_coeffs(theta)
    K = hat(v)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + a[..., None, None] * K + b[..., None, None] * (K @ K)


def log_so3(R):
    """Rotation vector ``v`` with ``exp_so3(v) == R`` and ``|v| <= pi``."""
    R = np.asarray(R, dtype=float)
    if R.ndim > 2:
        return np.stack([log_so3(Ri) for Ri in R])
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta**2 / 6.0) * w
    if np.pi - theta < 1e-4:
        # axis from the symmetric part, sign from the (tiny) skew part
        B = (R + R.T) / 2.0 - cos_t * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        if axis @ w < 0.0:
            axis = -axis
        axis /= np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def project_tangent(q, v):
    """Orthogonal projection of ``v`` onto the plane normal to the unit vector ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - np.sum(q * v, axis=-1, keepdims=True) * q


def rotate_vector(phi, q):
    """Apply ``exp_so3(phi)`` to ``q`` without forming the matrix."""
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _rodrigues_coeffs(theta)
    pq = np.cross(phi, q)
    return q + a[..., None] * pq + b[..., None] * np.cross(phi, pq)


def rotate_unit(q, omega, h):
    """Exact kinematic update of a unit vector: ``exp_so3(h * omega) @ q``.

    The result is renormalised so that rounding does not accumulate.
    """
    q = np.asarray(q, dtype=float)
    out = rotate_vector(h * np.asarray(omega, dtype=float), q)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def orthonormalize(R):
    """Closest rotation matrix in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def unit(v):
    """Normalise ``v``; raises ``ValueError`` for a zero vector."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalise a zero vector")
    return v / n


def is_rotation(R, tol=1e-10):
    R = np.asarray(R, dtype=float)
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )
