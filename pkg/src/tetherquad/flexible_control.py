"""Controllers for a flexible (multi-link) tether.

Two phases: output feedback linearization drives the quadrotor position
toward a point just inside the hanging target, then a linear state feedback
designed on the linearization about the hanging equilibrium damps the
remaining tether motion.

Hanging equilibrium: every ``q_i = -e3`` (the quadrotor straight above the
pivot, since ``e3`` points down) with thrust ``u_d = -m_T g e3``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.optimize import root

from .errors import ControlError, NumericalError
from .integrator import Command
from .manifold import E1, E3, hat
from .model import ChainState, quad_accel_decomposition, quad_position, quad_velocity

COND_MAX = 1e8
C2 = np.eye(3)[:, :2]  # C = [e1, e2]


@dataclass(frozen=True)
class FlexConfig:
    """Tracking-phase settings.

    ``x_d`` defaults to the hanging target ``-L e3`` (``L`` total tether
    length) when left as ``None``; ``FlexConfig.resolve`` fills it in.
    """

    delta: float = 0.01
    gamma: float = 1.0
    k_x: float = 4.0
    k_xd: float = 4.0
    t_switch: float = 3.0
    x_d: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("gamma", "k_x", "k_xd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t_switch < 0:
            raise ValueError("t_switch must be non-negative")
        if self.x_d is not None:
            object.__setattr__(self, "x_d", np.asarray(self.x_d, dtype=float).reshape(3))

    def resolve(self, params):
        """Copy with ``x_d`` set, checking it is the hanging target of ``params``."""
        target = -params.total_length * E3
        if self.x_d is not None and not np.allclose(self.x_d, target, atol=1e-9):
            raise ValueError(f"x_d must be the hanging target {target.tolist()}")
        return FlexConfig(self.delta, self.gamma, self.k_x, self.k_xd, self.t_switch, target)


@dataclass(frozen=True, eq=False)
class LinearizedModel:
    """``Mbar xdd + Gbar x = Bbar du`` about the hanging equilibrium.

    State ``x = [C^T xi_1; ...; C^T xi_n]`` (2n), ``C = [e1, e2]``.
    """

    Mbar: np.ndarray
    Gbar: np.ndarray
    Bbar: np.ndarray
    u_d: np.ndarray

    @property
    def n(self):
        return self.Mbar.shape[0] // 2

    def first_order(self):
        """``(A, B)`` of ``z' = A z + B du`` with ``z = [x; xd]``."""
        m = self.Mbar.shape[0]
        Minv = np.linalg.inv(self.Mbar)
        A = np.block([[np.zeros((m, m)), np.eye(m)],
                      [-Minv @ self.Gbar, np.zeros((m, m))]])
        B = np.vstack([np.zeros((m, 3)), Minv @ self.Bbar])
        return A, B


@dataclass(frozen=True, eq=False)
class StabilizerGains:
    """``du = -K_x x - K_xd xd`` with the certified closed-loop spectrum."""

    K_x: np.ndarray
    K_xd: np.ndarray
    eigenvalues: np.ndarray = field(repr=False)
    margin: float = 0.0

    @property
    def max_real(self):
        return float(np.max(self.eigenvalues.real))


# ---------------------------------------------------------------------------
# tracking phase


def reference_yd(t, x0, cfg, length=None):
    """Intermediate-point reference and its first two time derivatives.

    ``y_d = x0 e^{-gamma t} + (1 - delta)(1 - e^{-gamma t}) x_d``.
    """
    x0 = np.asarray(x0, dtype=float)
    if cfg.x_d is None:
        raise ValueError("FlexConfig.x_d is unset; call cfg.resolve(params)")
    if length is not None and not np.linalg.norm(x0) < length:
        raise ValueError("x0 must lie strictly inside the sphere of radius L")
    gam = cfg.gamma
    e = np.exp(-gam * t)
    goal = (1.0 - cfg.delta) * cfg.x_d
    y = x0 * e + goal * (1.0 - e)
    yd = gam * e * (goal - x0)
    ydd = -gam * yd
    return y, yd, ydd


def tracking_errors(params, chain, t, x0, cfg):
    """``(e_x, de_x)`` of the quadrotor position against ``y_d``."""
    y, yd, _ = reference_yd(t, x0, cfg)
    return (quad_position(params, chain.q) - y, quad_velocity(params, chain.q, chain.w) - yd)


def u_track(params, chain, t, x0, cfg):
    """Feedback-linearizing thrust ``u = -B^-1 (F - k_x e_x - k_xd de_x + ydd)``.

    Returns ``(u, e_x, de_x)``.
    """
    F, B = quad_accel_decomposition(params, chain)
    c = np.linalg.cond(B)
    if not c < COND_MAX:
        raise ControlError(f"quadrotor input map near singular (cond {c:.3g}); tether almost taut")
    y, yd, ydd = reference_yd(t, x0, cfg)
    e = quad_position(params, chain.q) - y
    ed = quad_velocity(params, chain.q, chain.w) - yd
    u = -np.linalg.solve(B, F - cfg.k_x * e - cfg.k_xd * ed + ydd)
    return u, e, ed


# ---------------------------------------------------------------------------
# stabilization phase


def linearize(params):
    """Linear model of the chain about the hanging equilibrium."""
    n = params.n
    l = params.link_lengths
    Mbar = np.kron(params.M, np.eye(2))
    Gbar = np.kron(np.diag((params.m_T - params.Mg) * params.g * l), np.eye(2))
    Bbar = np.vstack([-li * C2.T @ hat(E3) for li in l])
    return LinearizedModel(Mbar, Gbar, Bbar, -params.m_T * params.g * E3)


def _riccati_fixed_point(Ad, Bd, Q, R, tol=1e-11, max_doublings=60):
    """Fixed point of ``P <- Q + Ad^T P Ad - Ad^T P Bd (R + Bd^T P Bd)^-1 Bd^T P Ad``.

    The recursion is advanced by doubling: after ``k`` rounds the iterate
    equals ``2^k`` plain Riccati steps started from ``P = 0``.
    """
    A = Ad.copy()
    G = Bd @ np.linalg.solve(R, Bd.T)
    H = Q.copy()
    I = np.eye(A.shape[0])
    for k in range(max_doublings):
        W = I + G @ H
        A_new = A @ np.linalg.solve(W, A)
        G_new = G + A @ np.linalg.solve(W, G @ A.T)
        H_new = H + A.T @ H @ np.linalg.solve(W, A)
        change = np.linalg.norm(H_new - H) / max(1.0, np.linalg.norm(H_new))
        A, G, H = A_new, G_new, H_new
        if change < tol:
            return 0.5 * (H + H.T), k + 1
    raise NumericalError(f"Riccati iteration did not converge in {max_doublings} doublings "
                         f"(last relative change {change:.3g})")


def synthesize_gains(lin, Q=None, R=None, dt=1e-3, decay=1.0, margin=0.05):
    """Linear-quadratic stabilizing gains for the linearized chain.

    The continuous model is discretized by zero-order hold with step ``dt``
    and the discrete Riccati recursion is iterated to its fixed point. The
    dynamics are shifted by ``decay`` (``A + decay I``) so that the closed
    loop decays at least that fast. The result is certified on the
    continuous closed-loop matrix: every eigenvalue must have real part
    below ``-margin``.
    """
    A, B = lin.first_order()
    N = A.shape[0]
    Q = np.eye(N) if Q is None else np.asarray(Q, dtype=float)
    R = 10.0 * np.eye(3) if R is None else np.asarray(R, dtype=float)
    As = A + decay * np.eye(N)
    aug = np.zeros((N + 3, N + 3))
    aug[:N, :N] = As
    aug[:N, N:] = B
    E = expm(aug * dt)
    Ad, Bd = E[:N, :N], E[:N, N:]
    P, _ = _riccati_fixed_point(Ad, Bd, Q, R)
    K = np.linalg.solve(R + Bd.T @ P @ Bd, Bd.T @ P @ Ad)
    m = N // 2
    gains = StabilizerGains(K[:, :m], K[:, m:], np.linalg.eigvals(A - B @ K), margin)
    if not gains.max_real < -margin:
        raise NumericalError(f"synthesized gains not certified: max Re = {gains.max_real:.4g}"
                             f" >= {-margin}")
    return gains


def closed_loop_matrix(lin, gains):
    A, B = lin.first_order()
    return A - B @ np.hstack([gains.K_x, gains.K_xd])


def chain_coordinates(chain):
    """Linear-model coordinates ``(x, xd)`` of a chain state.

    ``xi_i`` is the minimal rotation vector taking ``-e3`` to ``q_i``;
    ``x_i = C^T xi_i`` and ``xd_i = C^T w_i``. ``chain`` may also be a pair
    of arrays ``(q, w)`` with leading batch axes, giving ``(..., 2n)`` outputs.
    """
    q, w = (chain.q, chain.w) if isinstance(chain, ChainState) else chain
    q = np.asarray(q)
    axis = np.cross(-E3, q)
    s = np.linalg.norm(axis, axis=-1)
    c = -q[..., 2]
    if np.any((s < 1e-12) & (c < 0)):
        raise ControlError("link pointing along +e3: equilibrium chart is singular")
    angle = np.arctan2(s, c)
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 1.0)
    xi = axis * scale[..., None]
    lead = q.shape[:-2]
    return xi[..., :2].reshape(lead + (-1,)), np.asarray(w)[..., :2].reshape(lead + (-1,))


def u_stabilize(params, chain, gains):
    """``u = -K_x x - K_xd xd - m_T g e3``; batched like ``chain_coordinates``."""
    x, xd = chain_coordinates(chain)
    return -x @ gains.K_x.T - xd @ gains.K_xd.T - params.m_T * params.g * E3


# ---------------------------------------------------------------------------
# initial condition


def hanging_chain(params, x0, tol=1e-12):
    """Chain of minimum potential with the quadrotor held at ``x0``.

    Stationarity with multiplier ``lam`` for ``sum l_i q_i = x0`` gives
    ``q_i`` parallel to ``g M_gi e3 - lam``; ``lam`` is found by a root solve.
    """
    x0 = np.asarray(x0, dtype=float)
    l = params.link_lengths
    L = params.total_length
    if not np.linalg.norm(x0) < L:
        raise ValueError("x0 must lie strictly inside the sphere of radius L")
    a = params.g * params.Mg  # weights pulling each link down (+e3)

    def dirs(lam):
        v = a[:, None] * E3 - lam
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def resid(lam):
        return l @ dirs(lam) - x0

    # start from a pull toward x0 comparable to the chain weight
    r = np.linalg.norm(x0)
    guess = -a.sum() * x0 / r if r > 0 else np.zeros(3)
    sol = root(resid, guess, method="hybr", tol=tol)
    if np.linalg.norm(resid(sol.x)) > 1e-9:
        sol = root(resid, guess, method="lm", tol=tol)
    if np.linalg.norm(resid(sol.x)) > 1e-9:
        raise NumericalError(f"hanging-chain solve failed: {sol.message}")
    return dirs(sol.x)


# ---------------------------------------------------------------------------
# closed loop


class FlexibleController:
    """Two-phase controller: tracking for ``t < t_switch``, stabilization after.

    Parameters
    ----------
    params : SystemParams
    cfg : FlexConfig
    gains : StabilizerGains
    x0 : array_like
        Quadrotor position at ``t = 0`` (start of the reference).
    attitude : AttitudeLoop, optional
        When given, the controller drives the full model and returns
        ``(f, M)``; otherwise it returns the thrust vector directly.
    """

    def __init__(self, params, cfg, gains, x0, attitude=None):
        self.params = params
        self.cfg = cfg.resolve(params)
        self.gains = gains
        self.x0 = np.asarray(x0, dtype=float)
        self.attitude = attitude
        if not np.linalg.norm(self.x0) < params.total_length:
            raise ValueError("x0 must lie strictly inside the sphere of radius L")

    def phase(self, t):
        return 1 if t < self.cfg.t_switch else 2

    def thrust(self, t, chain, phase):
        """``(u, e_x, de_x)`` for a given phase.

        In the tracking phase the errors are taken against ``y_d``, in the
        stabilization phase against the hanging target ``x_d``.
        """
        if phase == 1:
            return u_track(self.params, chain, t, self.x0, self.cfg)
        u = u_stabilize(self.params, chain, self.gains)
        return (u, quad_position(self.params, chain.q) - self.cfg.x_d,
                quad_velocity(self.params, chain.q, chain.w))

    def __call__(self, t, state):
        phase = self.phase(t)
        u, e_x, e_xd = self.thrust(t, state.chain, phase)
        if self.attitude is None:
            return Command(u, e_x=e_x, e_xd=e_xd, phase=phase)

        def law(ts, q, w):
            # phase held fixed so the switch does not leak into the differences
            return self.thrust(ts, ChainState(q, w), phase)[0], E1

        inp, e_R, e_Om = self.attitude.command(t, state, law, u, E1)
        return Command(inp, e_R=e_R, e_Om=e_Om, e_x=e_x, e_xd=e_xd, phase=phase)
