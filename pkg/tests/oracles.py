"""Independent reference computations used by the tests.

Nothing here imports the package's dynamics: energies come from quadrature
over uniform rods, equations of motion from a Lagrangian in spherical angles
differentiated numerically, and the hanging chain from a constrained
minimizer. Treat these as frozen.
"""

import numpy as np
from scipy.optimize import minimize

G = 9.81
E3 = np.array([0.0, 0.0, 1.0])

# single link with the quadrotor and tether used in the examples
# M11 = (m + m1/3) l^2, Mg1 = m + m1/2
ALPHA_REFERENCE = (0.755 + 0.15) * 5.0 * 9.81 / ((0.755 + 0.1) * 25.0)
BETA_REFERENCE = 5.0 / ((0.755 + 0.1) * 25.0)

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(8)
_S = 0.5 * (_NODES + 1.0)
_W = 0.5 * _WEIGHTS


def rod_energies(m, masses, lengths, q, qd, g=G):
    """Kinetic and potential energy of point mass ``m`` on a chain of uniform rods.

    Quadrature is exact here because the integrands are quadratic in the arc
    parameter.
    """
    kin = pot = 0.0
    base = np.zeros(3)
    vbase = np.zeros(3)
    for mi, li, qi, vi in zip(masses, lengths, q, qd):
        for s, w in zip(_S, _W):
            x = base + s * li * qi
            v = vbase + s * li * vi
            kin += 0.5 * mi * w * v @ v
            pot -= mi * w * g * x[2]
        base = base + li * qi
        vbase = vbase + li * vi
    kin += 0.5 * m * vbase @ vbase
    pot -= m * g * base[2]
    return kin, pot


def sphere(a, b):
    """Unit vector with polar angle ``a`` from e3 and azimuth ``b``."""
    return np.array([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)])


def sphere_jac(a, b):
    return np.array([[np.cos(a) * np.cos(b), -np.sin(a) * np.sin(b)],
                     [np.cos(a) * np.sin(b), np.sin(a) * np.cos(b)],
                     [-np.sin(a), 0.0]])


def _lagrangian_parts(m, masses, lengths, th, thd, g):
    n = len(masses)
    q = np.array([sphere(th[2 * i], th[2 * i + 1]) for i in range(n)])
    qd = np.array([sphere_jac(th[2 * i], th[2 * i + 1]) @ thd[2 * i:2 * i + 2]
                   for i in range(n)])
    return rod_energies(m, masses, lengths, q, qd, g)


def angle_accelerations(m, masses, lengths, th, thd, u, g=G, h=1e-5):
    """Second derivatives of the spherical angles from the Euler-Lagrange equations.

    The kinetic energy is a quadratic form ``thd^T H(th) thd / 2``; ``H`` is
    recovered by polarization and its angle derivatives by central differences.
    The thrust ``u`` acts at the quadrotor as a generalized force.
    """
    N = len(th)

    def H(th_):
        out = np.zeros((N, N))
        eye = np.eye(N)
        for k in range(N):
            for j in range(N):
                tp = _lagrangian_parts(m, masses, lengths, th_, eye[k] + eye[j], g)[0]
                tk = _lagrangian_parts(m, masses, lengths, th_, eye[k], g)[0]
                tj = _lagrangian_parts(m, masses, lengths, th_, eye[j], g)[0]
                out[k, j] = tp - tk - tj
        return out

    def V(th_):
        return _lagrangian_parts(m, masses, lengths, th_, np.zeros(N), g)[1]

    def xq(th_):
        n = len(masses)
        return sum(lengths[i] * sphere(th_[2 * i], th_[2 * i + 1]) for i in range(n))

    H0 = H(th)
    dH = np.zeros((N, N, N))
    dV = np.zeros(N)
    Jx = np.zeros((3, N))
    for k in range(N):
        d = np.zeros(N)
        d[k] = h
        dH[k] = (H(th + d) - H(th - d)) / (2 * h)
        dV[k] = (V(th + d) - V(th - d)) / (2 * h)
        Jx[:, k] = (xq(th + d) - xq(th - d)) / (2 * h)
    # d/dt(H thd) - dT/dth + dV/dth = Q
    Hdot = np.einsum("kij,k->ij", dH, thd)
    dT = 0.5 * np.einsum("kij,i,j->k", dH, thd, thd)
    Q = Jx.T @ u
    return np.linalg.solve(H0, Q - Hdot @ thd + dT - dV)


def chain_from_angles(th, thd, thdd):
    """``(q, qdot, qddot)`` of each link from angles and their derivatives."""
    n = len(th) // 2
    q, qd, qdd = np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3))
    for i in range(n):
        a, b = th[2 * i], th[2 * i + 1]
        ad, bd = thd[2 * i], thd[2 * i + 1]
        add, bdd = thdd[2 * i], thdd[2 * i + 1]
        sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
        q[i] = sphere(a, b)
        qd[i] = sphere_jac(a, b) @ [ad, bd]
        # second derivative of (sa cb, sa sb, ca)
        qdd[i] = np.array([
            -sa * cb * (ad**2 + bd**2) - 2 * ca * sb * ad * bd + ca * cb * add - sa * sb * bdd,
            -sa * sb * (ad**2 + bd**2) + 2 * ca * cb * ad * bd + ca * sb * add + sa * cb * bdd,
            -ca * ad**2 - sa * add,
        ])
    return q, qd, qdd


def hanging_chain_slsqp(masses, lengths, m, x0, g=G):
    """Minimum-potential chain through ``x0`` by direct constrained minimization."""
    n = len(masses)
    lengths = np.asarray(lengths, dtype=float)

    def unpack(z):
        return z.reshape(n, 3)

    def pot(z):
        q = unpack(z)
        return rod_energies(m, masses, lengths, q, np.zeros_like(q), g)[1]

    cons = [{"type": "eq", "fun": lambda z: lengths @ unpack(z) - x0}]
    cons += [{"type": "eq", "fun": (lambda z, i=i: unpack(z)[i] @ unpack(z)[i] - 1.0)}
             for i in range(n)]
    z0 = np.tile(np.asarray(x0) / np.linalg.norm(x0), n)
    res = minimize(pot, z0, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    return unpack(res.x), res
