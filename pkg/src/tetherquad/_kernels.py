"""Compiled inner loops for the integrator.

These mirror ``model.link_accel`` / ``model.attitude_accel`` and the manifold
maps for a single trajectory; the numpy versions stay the reference
implementation and the test-suite cross-checks the two.
"""

import numpy as np
from numba import njit

_SMALL = 1e-6


@njit(cache=True)
def cross3(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _coeffs(theta):
    if theta < _SMALL:
        return 1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / (theta * theta)


@njit(cache=True)
def rotate(phi, x):
    """exp(hat(phi)) @ x"""
    theta = np.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    a, b = _coeffs(theta)
    px = cross3(phi, x)
    ppx = cross3(phi, px)
    return x + a * px + b * ppx


@njit(cache=True)
def expm3(phi):
    theta = np.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    a, b = _coeffs(theta)
    K = np.zeros((3, 3))
    K[0, 1] = -phi[2]
    K[0, 2] = phi[1]
    K[1, 0] = phi[2]
    K[1, 2] = -phi[0]
    K[2, 0] = -phi[1]
    K[2, 1] = phi[0]
    return np.eye(3) + a * K + b * (K @ K)


@njit(cache=True)
def chain_accel(M, Mgl, l, q, w, u):
    n = q.shape[0]
    A = np.zeros((3 * n, 3 * n))
    rhs = np.zeros(3 * n)
    w2 = np.empty(n)
    for j in range(n):
        w2[j] = w[j, 0] ** 2 + w[j, 1] ** 2 + w[j, 2] ** 2
    for i in range(n):
        v = l[i] * u.copy()
        v[2] += Mgl[i]
        for j in range(n):
            if i == j:
                for k in range(3):
                    A[3 * i + k, 3 * i + k] = M[i, i]
                continue
            # hat(q_i) hat(q_j) = q_j q_i^T - (q_i . q_j) I
            d = q[i, 0] * q[j, 0] + q[i, 1] * q[j, 1] + q[i, 2] * q[j, 2]
            for r in range(3):
                for c in range(3):
                    val = q[j, r] * q[i, c]
                    if r == c:
                        val -= d
                    A[3 * i + r, 3 * j + c] = -M[i, j] * val
            for k in range(3):
                v[k] += M[i, j] * w2[j] * q[j, k]
        rhs[3 * i:3 * i + 3] = cross3(q[i], v)
    sol = np.linalg.solve(A, rhs)
    return sol.reshape((n, 3))


@njit(cache=True)
def body_accel(J, Jinv, Om, Mc):
    JOm = J @ Om
    return Jinv @ (Mc - cross3(Om, JOm))


@njit(cache=True)
def _derivs(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full):
    if full:
        u = -f * R[:, 2].copy()
    else:
        u = u_fixed
    return chain_accel(M, Mgl, l, q, w, u), body_accel(J, Jinv, Om, Mc)


@njit(cache=True)
def rkmk4_step(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h):
    """One Munthe-Kaas RK4 step on (S^2)^n x SO(3) x velocities.

    Link directions use the left action q -> exp(hat(phi)) q with algebra
    element ``h w``; the attitude uses the right action R -> R exp(hat(phi))
    with ``h Om`` (commutator signs flip accordingly).
    """
    n = q.shape[0]
    # stage 1
    a1, b1 = _derivs(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full)
    w1 = w
    O1 = Om
    # stage 2
    q2 = np.empty_like(q)
    for i in range(n):
        q2[i] = rotate(0.5 * h * w1[i], q[i])
    R2 = R @ expm3(0.5 * h * O1)
    w2 = w + 0.5 * h * a1
    O2 = Om + 0.5 * h * b1
    a2, b2 = _derivs(M, Mgl, l, J, Jinv, q2, w2, R2, O2, f, Mc, u_fixed, full)
    # stage 3
    q3 = np.empty_like(q)
    for i in range(n):
        phi = 0.5 * h * w2[i] - 0.125 * h * h * cross3(w1[i], w2[i])
        q3[i] = rotate(phi, q[i])
    R3 = R @ expm3(0.5 * h * O2 + 0.125 * h * h * cross3(O1, O2))
    w3 = w + 0.5 * h * a2
    O3 = Om + 0.5 * h * b2
    a3, b3 = _derivs(M, Mgl, l, J, Jinv, q3, w3, R3, O3, f, Mc, u_fixed, full)
    # stage 4
    q4 = np.empty_like(q)
    for i in range(n):
        q4[i] = rotate(h * w3[i], q[i])
    R4 = R @ expm3(h * O3)
    w4 = w + h * a3
    O4 = Om + h * b3
    a4, b4 = _derivs(M, Mgl, l, J, Jinv, q4, w4, R4, O4, f, Mc, u_fixed, full)
    # update
    qn = np.empty_like(q)
    for i in range(n):
        wbar = (w1[i] + 2.0 * w2[i] + 2.0 * w3[i] + w4[i]) / 6.0
        phi = h * wbar - (h * h / 12.0) * cross3(w1[i], w4[i])
        qn[i] = rotate(phi, q[i])
    Obar = (O1 + 2.0 * O2 + 2.0 * O3 + O4) / 6.0
    Rn = R @ expm3(h * Obar + (h * h / 12.0) * cross3(O1, O4))
    wn = w + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    On = Om + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return qn, wn, Rn, On


@njit(cache=True)
def euler_step(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h):
    a, b = _derivs(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full)
    qn = np.empty_like(q)
    for i in range(q.shape[0]):
        qn[i] = rotate(h * w[i], q[i])
    return qn, w + h * a, R @ expm3(h * Om), Om + h * b


@njit(cache=True)
def renormalize(q, w, R):
    """Project back onto the constraint set: unit q, tangent w, orthogonal R.

    For R one Newton step of the polar iteration, R (3 I - R^T R) / 2, is
    enough: the drift it removes is already at rounding level.
    """
    n = q.shape[0]
    for i in range(n):
        nq = np.sqrt(q[i, 0] ** 2 + q[i, 1] ** 2 + q[i, 2] ** 2)
        q[i] = q[i] / nq
        d = q[i, 0] * w[i, 0] + q[i, 1] * w[i, 1] + q[i, 2] * w[i, 2]
        w[i] = w[i] - d * q[i]
    R = 0.5 * R @ (3.0 * np.eye(3) - R.T @ R)
    return q, w, R


@njit(cache=True)
def max_rate(w):
    """Largest link rate, or inf when any entry is non-finite."""
    best = 0.0
    for i in range(w.shape[0]):
        r = np.sqrt(w[i, 0] ** 2 + w[i, 1] ** 2 + w[i, 2] ** 2)
        if not np.isfinite(r):
            return np.inf
        best = max(best, r)
    return best


@njit(cache=True)
def advance(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h, scheme, renorm):
    if scheme == 0:
        qn, wn, Rn, On = rkmk4_step(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h)
    else:
        qn, wn, Rn, On = euler_step(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h)
    if renorm:
        qn, wn, Rn = renormalize(qn, wn, Rn)
    finite = np.all(np.isfinite(qn)) and np.all(np.isfinite(Rn)) and np.all(np.isfinite(On))
    rate = max_rate(wn) if finite else np.inf
    return qn, wn, Rn, On, rate


@njit(cache=True)
def batch_step(M, Mgl, l, J, Jinv, q, w, R, Om, f, Mc, u_fixed, full, h, scheme, renorm,
               active):
    """Advance the active members of a batch of trajectories (leading axis) by one step."""
    rates = np.zeros(q.shape[0])
    for b in range(q.shape[0]):
        if not active[b]:
            continue
        qn, wn, Rn, On, rates[b] = advance(M, Mgl, l, J, Jinv, q[b], w[b], R[b], Om[b],
                                           f[b], Mc[b], u_fixed[b], full, h, scheme, renorm)
        if not np.isfinite(rates[b]):
            continue
        q[b] = qn
        w[b] = wn
        R[b] = Rn
        Om[b] = On
    return rates


@njit(cache=True)
def predict_chain(M, Mgl, l, q, w, u, h):
    """Second-order Taylor prediction of the chain at ``t - h`` and ``t + h``."""
    dw = chain_accel(M, Mgl, l, q, w, u)
    n = q.shape[0]
    out_q = np.empty((2, n, 3))
    out_w = np.empty((2, n, 3))
    for k in range(2):
        s = -h if k == 0 else h
        for i in range(n):
            qi = rotate(s * w[i] + 0.5 * s * s * dw[i], q[i])
            qi = qi / np.sqrt(qi[0] ** 2 + qi[1] ** 2 + qi[2] ** 2)
            wi = w[i] + s * dw[i]
            d = qi[0] * wi[0] + qi[1] * wi[1] + qi[2] * wi[2]
            out_q[k, i] = qi
            out_w[k, i] = wi - d * qi
    return out_q, out_w
