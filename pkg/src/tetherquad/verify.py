"""Independent checks on controllers and simulated trajectories.

The trajectory audits use only the recorded samples, the system parameters
and ``model.energies``; accelerations are rebuilt by finite differences so
that they do not share a code path with the integrator.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .model import BodyState, ChainState, energies

EL_THRESHOLD = 1e-2  # relative Euler-Lagrange residual flagged by the audit
MONOTONE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    P_lower: np.ndarray
    P_upper: np.ndarray
    W_q: np.ndarray
    psi_q: float
    is_valid: bool

    def min_eigenvalues(self):
        return tuple(float(np.min(np.linalg.eigvalsh(P)))
                     for P in (self.P_lower, self.P_upper, self.W_q))


@dataclass
class AuditReport:
    """Summary of the trajectory audits; ``None`` marks an audit that did not apply."""

    max_constraint_drift: float
    energy_drift_rel: Optional[float] = None
    max_el_residual: Optional[float] = None
    bound_violations: int = 0
    passed: bool = True

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# certificates


def lyapunov_certificate(gains, psi_q):
    """Matrices bounding the direction-loop Lyapunov function and its rate.

    With ``z = [|e_q|, |e_w|]`` the function is sandwiched as
    ``z^T P_lower z <= V <= z^T P_upper z`` on ``{Psi_q < psi_q}`` and its rate
    obeys ``dV/dt <= -z^T W_q z``.
    """
    if not 0.0 < psi_q < 2.0:
        raise ValueError("psi_q must lie in (0, 2)")
    kq, kw, cq = gains.k_q, gains.k_w, gains.c_q
    P_lower = 0.5 * np.array([[2.0 * kq, -cq], [-cq, 1.0]])
    P_upper = 0.5 * np.array([[2.0 * kq / (2.0 - psi_q), cq], [cq, 1.0]])
    W = np.array([[cq * kq, -0.5 * cq * kw], [-0.5 * cq * kw, kw - cq]])
    valid = all(np.min(np.linalg.eigvalsh(P)) > 0 for P in (P_lower, P_upper, W))
    return LyapunovCertificate(P_lower, P_upper, W, float(psi_q), bool(valid))


def lyapunov_rates(params, traj, reference, gains, accel):
    """``(V, dV/dt, -z^T W_q z)`` along a single-link trajectory.

    ``accel(q, w, u) -> dw/dt`` supplies the link acceleration; the rate is
    evaluated analytically from the state, the reference and that
    acceleration.
    """
    cert = lyapunov_certificate(gains, 1.0)
    kq, cq = gains.k_q, gains.c_q
    N = len(traj)
    V = np.empty(N)
    Vd = np.empty(N)
    bound = np.empty(N)
    for k in range(N):
        q, w, u, t = traj.q[k, 0], traj.w[k, 0], traj.u[k], traj.t[k]
        ref = reference(t)
        qd, wd, dwd = ref.q_d, ref.w_d, ref.dw_d
        dqd = np.cross(wd, qd)
        dw = accel(q, w, u)
        qdot = np.cross(w, q)
        e_q = np.cross(qd, q)
        e_w = w + (q @ wd) * q - wd
        de_q = np.cross(dqd, q) + np.cross(qd, qdot)
        de_w = dw + (qdot @ wd + q @ dwd) * q + (q @ wd) * qdot - dwd
        dpsi = -(qdot @ qd + q @ dqd)
        V[k] = 0.5 * e_w @ e_w + cq * e_w @ e_q + kq * (1.0 - q @ qd)
        Vd[k] = e_w @ de_w + cq * (de_w @ e_q + e_w @ de_q) + kq * dpsi
        z = np.array([np.linalg.norm(e_q), np.linalg.norm(e_w)])
        bound[k] = -z @ cert.W_q @ z
    return V, Vd, bound


# ---------------------------------------------------------------------------
# trajectory audits


def constraint_drift(traj):
    """Largest violation of ``|q_i| = 1``, ``q_i . w_i = 0`` and ``R^T R = I``."""
    dq = np.max(np.abs(np.linalg.norm(traj.q, axis=-1) - 1.0))
    dw = np.max(np.abs(np.sum(traj.q * traj.w, axis=-1)))
    RtR = np.swapaxes(traj.R, -1, -2) @ traj.R
    dR = np.max(np.linalg.norm(RtR - np.eye(3), axis=(-2, -1)))
    return float(max(dq, dw, dR))


def energy_audit(params, traj):
    """``max |E(t) - E(0)| / |E(0)|``; absolute drift when ``E(0) = 0``."""
    E = np.array([sum(energies(params, ChainState(traj.q[k], traj.w[k]),
                               BodyState(traj.R[k], traj.Om[k])))
                  for k in range(len(traj))])
    drift = np.max(np.abs(E - E[0]))
    return float(drift / abs(E[0])) if E[0] != 0 else float(drift)


def is_unforced(traj):
    f = np.nan_to_num(traj.f)
    M = np.nan_to_num(traj.M)
    return bool(np.all(traj.u == 0) and np.all(f == 0) and np.all(M == 0))


def _d5(x, h):
    return (x[:-4] - 8.0 * x[1:-3] + 8.0 * x[3:-1] - x[4:]) / (12.0 * h)


def el_residual(params, traj, hold=None):
    """Relative residual of the second-order chain equations at interior samples.

    For each link ``i`` the residual is::

        M_ii qdd_i - hat(q_i)^2 sum_{j != i} M_ij qdd_j + M_ii |qd_i|^2 q_i
            + hat(q_i)^2 (M_gi l_i g e3 + l_i u)

    with ``qd_i = w_i x q_i`` and ``qdd_i`` its five-point central difference,
    so the check stays tight on decimated records. Each link's residual is
    divided by its gravity moment scale ``M_gi l_i g``; the returned array
    holds the largest value over links, one entry per interior sample. Samples
    whose stencil straddles a controller phase change are NaN, since the thrust
    is discontinuous there by design.

    ``hold`` is the integrator step when the controller output is held over
    each step. The held part of the input (``u`` on the simplified model, the
    collective thrust ``f`` on the full model) then acts with a lag of
    ``hold / 2``, which is compensated to first order; without it the residual
    has an O(hold) floor.
    """
    t = traj.t
    if len(t) < 5:
        return np.zeros(0)
    h = np.diff(t)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, abs(h[0])):
        raise ValueError("trajectory must be uniformly sampled")
    h = h[0]
    M = params.M
    l = params.link_lengths
    Mgl = params.Mg * l * params.g
    q = traj.q[2:-2]
    v = np.cross(traj.w, traj.q)
    qd = v[2:-2]
    qdd = _d5(v, h)
    u = traj.u[2:-2]
    if hold:
        f = traj.f
        if np.all(np.isfinite(f)):
            f_lag = f[2:-2] - 0.5 * hold * _d5(f, h)
            u = -f_lag[:, None] * traj.R[2:-2, :, 2]
        else:
            u = u - 0.5 * hold * _d5(traj.u, h)

    def proj(x):  # -hat(q)^2 x, projection normal to q
        return x - np.sum(q * x, axis=-1, keepdims=True) * q

    Moff = M - np.diag(np.diag(M))
    coupled = np.einsum("ij,kjc->kic", Moff, qdd)
    diag = np.diag(M)[None, :, None]
    e3 = np.array([0.0, 0.0, 1.0])
    force = Mgl[None, :, None] * e3 + l[None, :, None] * u[:, None, :]
    r = (diag * qdd + proj(coupled) + diag * np.sum(qd * qd, axis=-1, keepdims=True) * q
         - proj(force))
    res = np.max(np.linalg.norm(r, axis=-1) / Mgl[None, :], axis=-1)
    ph = traj.phase
    switch = np.zeros(len(t) - 4, dtype=bool)
    for a in range(4):
        switch |= ph[a:a + len(switch)] != ph[a + 1:a + 1 + len(switch)]
    res[switch] = np.nan
    return res


def error_energy_check(traj, k_x):
    """Count violations of the tracking-error energy decrease and bound.

    ``U = |de_x|^2 / 2 + k_x |e_x|^2 / 2`` must not increase by more than
    1e-9 between samples, and ``|e_x(t)| <= |de_x(0)| / sqrt(2 k_x)`` must hold
    (with 1e-9 slack). Only samples where both errors are recorded count.
    Returns ``(monotonicity_violations, bound_violations)``.
    """
    sel = ~(np.any(np.isnan(traj.e_x), axis=-1) | np.any(np.isnan(traj.e_xd), axis=-1))
    e = traj.e_x[sel]
    ed = traj.e_xd[sel]
    if e.shape[0] == 0:
        return 0, 0
    U = 0.5 * np.sum(ed * ed, axis=-1) + 0.5 * k_x * np.sum(e * e, axis=-1)
    mono = int(np.sum(np.diff(U) > MONOTONE_TOL))
    bound = np.linalg.norm(ed[0]) / np.sqrt(2.0 * k_x)
    over = int(np.sum(np.linalg.norm(e, axis=-1) > bound + MONOTONE_TOL))
    return mono, over


def audit(params, traj, k_x=None, hold=None, el_threshold=EL_THRESHOLD,
          drift_threshold=1e-9):
    """Run every audit that applies to ``traj``; ``hold`` as in ``el_residual``."""
    drift = constraint_drift(traj)
    el = el_residual(params, traj, hold)
    max_el = float(np.nanmax(el)) if np.any(np.isfinite(el)) else 0.0
    energy = energy_audit(params, traj) if is_unforced(traj) else None
    violations = 0
    if k_x is not None:
        phase1 = traj.select(traj.phase == 1) if np.any(traj.phase == 1) else traj
        violations = sum(error_energy_check(phase1, k_x))
    passed = (drift <= drift_threshold and max_el <= el_threshold and violations == 0
              and (energy is None or energy < 1e-6))
    return AuditReport(drift, energy, max_el, violations, bool(passed))
