"""Controllers for a taut tether treated as a single rigid link.

The thrust vector ``u`` is split into a part along the link, which sets the
tension exactly, and a part normal to it, which makes the link direction
track ``q_d(t)`` on the sphere. An inner geometric attitude loop then turns
the desired thrust vector into thrust magnitude and body moment.

For chains with ``n > 1`` links the same law is applied to the direction
from the pivot to the quadrotor (``taut_direction``), using a lumped
single-link model with the total tether mass and length.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import ControlError
from . import _kernels
from .integrator import Command, _pack
from .manifold import E1, SMALL_ANGLE
from .model import ControlInput, quad_position, quad_velocity

U_MIN = 1e-6  # N; below this the thrust direction is undefined
FRAME_TOL = 1e-6


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@dataclass(frozen=True)
class TautGains:
    """Direction-loop gains ``k_q, k_w``, attitude gains ``k_R, k_Om``.

    ``eps`` scales the attitude loop (moment gains ``k_R/eps^2`` and
    ``k_Om/eps``); ``c_q`` only enters the Lyapunov certificate.
    """

    k_q: float = 9.0
    k_w: float = 6.0
    k_R: float = 8.0
    k_Om: float = 2.0
    eps: float = 0.1
    c_q: float = 0.5

    def __post_init__(self):
        for name in ("k_q", "k_w", "k_R", "k_Om", "eps", "c_q"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gain {name} must be positive")
        if self.eps >= 1:
            raise ValueError("eps must be < 1")


@dataclass(frozen=True)
class TautReference:
    """Desired link direction and its rates at one instant."""

    q_d: np.ndarray
    w_d: np.ndarray
    dw_d: np.ndarray
    T_d: float
    b1d: np.ndarray = field(default_factory=lambda: E1.copy())


@dataclass
class TautErrors:
    e_q: np.ndarray
    e_w: np.ndarray
    e_R: Optional[np.ndarray] = None
    e_Om: Optional[np.ndarray] = None


class FigureEight:
    """Figure-eight on the sphere, ``q_d = [cos th cos ph, sin th, -cos th sin ph]``.

    ``th = A sin(a t)`` and ``ph = B sin(b t) + pi/2``. Rates are analytic.
    """

    def __init__(self, T_d=5.0, A=np.pi / 6, a=0.2 * np.pi, B=np.pi / 18, b=0.4 * np.pi,
                 b1d=E1):
        self.T_d = float(T_d)
        self.A, self.a, self.B, self.b = A, a, B, b
        self.b1d = np.asarray(b1d, dtype=float)

    def derivatives(self, t):
        """``(q_d, dq_d/dt, d2q_d/dt2)``."""
        return _figure_eight(self.A, self.a, self.B, self.b, float(t))

    def __call__(self, t):
        q, dq, ddq = _figure_eight(self.A, self.a, self.B, self.b, float(t))
        return TautReference(q, _cross(q, dq), _cross(q, ddq), self.T_d, self.b1d)


@njit(cache=True)
def _figure_eight(A, a, B, b, t):
    sa, ca = np.sin(a * t), np.cos(a * t)
    sb, cb = np.sin(b * t), np.cos(b * t)
    th, th1, th2 = A * sa, A * a * ca, -A * a * a * sa
    ph, ph1, ph2 = B * sb + np.pi / 2, B * b * cb, -B * b * b * sb
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    q = np.array([ct * cp, st, -ct * sp])
    q_t = np.array([-st * cp, ct, st * sp])
    q_p = np.array([-ct * sp, 0.0, -ct * cp])
    q_pp = np.array([-ct * cp, 0.0, ct * sp])
    q_tp = np.array([st * sp, 0.0, st * cp])
    dq = q_t * th1 + q_p * ph1
    ddq = -q * th1**2 + 2.0 * q_tp * th1 * ph1 + q_pp * ph1**2 + q_t * th2 + q_p * ph2
    return q, dq, ddq


class FixedDirection:
    """Constant desired direction (regulation)."""

    def __init__(self, q_d, T_d=5.0, b1d=E1):
        q_d = np.asarray(q_d, dtype=float)
        self.ref = TautReference(q_d / np.linalg.norm(q_d), np.zeros(3), np.zeros(3),
                                 float(T_d), np.asarray(b1d, dtype=float))

    def __call__(self, t):
        return self.ref


# ---------------------------------------------------------------------------
# direction loop


@njit(cache=True)
def _direction_errors(q, w, q_d, w_d):
    e_q = _cross(q_d, q)
    e_w = w - (w_d - (q @ w_d) * q)
    return e_q, e_w


@njit(cache=True)
def _u_parallel(m, g, length, q, w, T_d):
    return (T_d - m * g * q[2] - m * length * (w @ w)) * q


@njit(cache=True)
def _u_perp(alpha, beta, k_q, k_w, q, w, q_d, w_d, dw_d):
    e_q, e_w = _direction_errors(q, w, q_d, w_d)
    qdot = _cross(w, q)
    proj_dw = dw_d - (q @ dw_d) * q  # -hat(q)^2 dw_d
    e3 = np.array([0.0, 0.0, 1.0])
    v = (-k_q * e_q - k_w * e_w - (q @ w_d) * qdot + proj_dw
         - alpha * _cross(q, e3))
    return -_cross(q, v) / beta


@njit(cache=True)
def _desired_attitude(u, b1d):
    # status 0 ok, 1 thrust too small, 2 heading parallel to thrust axis
    Rc = np.zeros((3, 3))
    nu = np.sqrt(u @ u)
    if not nu > U_MIN:
        return Rc, 1
    b3 = -u / nu
    b2 = _cross(b3, b1d)
    nb2 = np.sqrt(b2 @ b2)
    if nb2 < FRAME_TOL:
        return Rc, 2
    b2 = b2 / nb2
    b1 = _cross(b2, b3)  # equals -hat(b3)^2 b1d, normalised
    Rc[:, 0] = b1
    Rc[:, 1] = b2
    Rc[:, 2] = b3
    return Rc, 0


@njit(cache=True)
def _log_so3(R):
    cos_t = min(1.0, max(-1.0, (R[0, 0] + R[1, 1] + R[2, 2] - 1.0) / 2.0))
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return 0.5 * (1.0 + theta * theta / 6.0) * w
    if np.pi - theta < 1e-4:
        B = (R + R.T) / 2.0 - cos_t * np.eye(3)
        k = np.argmax(np.diag(B))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        if axis @ w < 0.0:
            axis = -axis
        return theta * axis / np.sqrt(axis @ axis)
    return theta / (2.0 * np.sin(theta)) * w


@njit(cache=True)
def _setpoint_rates(Rm, Rc, Rp, h):
    dp = _log_so3(Rc.T @ Rp)
    dm = _log_so3(Rm.T @ Rc)
    return (dp + dm) / (2.0 * h), (dp - dm) / (h * h)


@njit(cache=True)
def _moment(J, k_R, k_Om, eps, R, Om, Rc, Om_c, dOm_c):
    E = Rc.T @ R
    e_R = 0.5 * np.array([E[2, 1] - E[1, 2], E[0, 2] - E[2, 0], E[1, 0] - E[0, 1]])
    RtRc = R.T @ Rc
    e_Om = Om - RtRc @ Om_c
    M = (-(k_R / eps**2) * e_R - (k_Om / eps) * e_Om
         + _cross(Om, J @ Om) - J @ (_cross(Om, RtRc @ Om_c) - RtRc @ dOm_c))
    return M, e_R, e_Om


_ATTITUDE_FAILURES = {1: "thrust too small to define an attitude",
                      2: "heading b1d is parallel to the thrust axis"}


def _vec(x):
    return np.asarray(x, dtype=float).reshape(3)


def direction_errors(q, w, ref):
    """``e_q = q_d x q`` and ``e_w = w + hat(q)^2 w_d``."""
    return _direction_errors(_vec(q), _vec(w), _vec(ref.q_d), _vec(ref.w_d))


def u_parallel(params, q, w, T_d):
    """Thrust along ``q`` that makes the tension equal ``T_d``."""
    return _u_parallel(params.m, params.g, params.total_length, _vec(q), _vec(w), float(T_d))


def u_perp(params, q, w, ref, gains):
    """Thrust normal to ``q`` that imposes the direction error dynamics.

    ``params`` must describe a single link (use ``params.lumped()`` for a chain).
    """
    return _u_perp(params.alpha, params.beta, gains.k_q, gains.k_w, _vec(q), _vec(w),
                   _vec(ref.q_d), _vec(ref.w_d), _vec(ref.dw_d))


def u_total(params, q, w, ref, gains):
    return u_parallel(params, q, w, ref.T_d) + u_perp(params, q, w, ref, gains)


# ---------------------------------------------------------------------------
# attitude loop


def desired_attitude(u, b1d):
    """Attitude whose third axis is ``-u/|u|`` with heading set by ``b1d``."""
    Rc, status = _desired_attitude(_vec(u), _vec(b1d))
    if status:
        raise ControlError(_ATTITUDE_FAILURES[status])
    return Rc


def attitude_setpoint(u, b1d, h=None, before=None, after=None):
    """``(R_c, Om_c, dOm_c)`` for the thrust vector ``u``.

    ``before``/``after`` are ``(u, b1d)`` pairs at ``t - h`` and ``t + h``.
    Rates come from log-map differences of the commanded attitude: central
    when both neighbours are given, one-sided with one, zero with none.
    """
    Rc = desired_attitude(u, b1d)
    zero = np.zeros(3)
    if before is None and after is None:
        return Rc, zero, zero.copy()
    if h is None or h <= 0:
        raise ValueError("a positive step h is needed to differentiate the setpoint")
    if before is None:
        return Rc, _log_so3(Rc.T @ desired_attitude(*after)) / h, zero
    if after is None:
        return Rc, _log_so3(desired_attitude(*before).T @ Rc) / h, zero
    Om_c, dOm_c = _setpoint_rates(desired_attitude(*before), Rc, desired_attitude(*after), h)
    return Rc, Om_c, dOm_c


def attitude_errors(R, Om, Rc, Om_c):
    """``e_R = vee(Rc^T R - R^T Rc)/2`` and ``e_Om = Om - R^T Rc Om_c``."""
    E = Rc.T @ R
    e_R = 0.5 * np.array([E[2, 1] - E[1, 2], E[0, 2] - E[2, 0], E[1, 0] - E[0, 1]])
    return e_R, Om - R.T @ (Rc @ Om_c)


def thrust_moment(params, body, u, Rc, Om_c, dOm_c, gains):
    """Thrust magnitude and body moment for the attitude command.

    Returns ``(ControlInput, e_R, e_Om)``.
    """
    f = -(_vec(u) @ body.R[:, 2])
    M, e_R, e_Om = _moment(params.J, gains.k_R, gains.k_Om, gains.eps, body.R, body.Om,
                           np.asarray(Rc, dtype=float), _vec(Om_c), _vec(dOm_c))
    return ControlInput(f, M), e_R, e_Om


# ---------------------------------------------------------------------------
# taut approximation of a chain


def taut_direction(params, chain):
    """Direction from the pivot to the quadrotor and its angular velocity."""
    return _taut_direction(params, chain.q, chain.w)


def _taut_direction(params, q, w):
    x = quad_position(params, q)
    r = np.sqrt(x @ x)
    if r < 1e-12:
        raise ControlError("quadrotor at the pivot: tether direction undefined")
    p = x / r
    v = quad_velocity(params, q, w)
    pdot = (v - (p @ v) * p) / r
    return p, _cross(p, pdot)


# ---------------------------------------------------------------------------
# closed-loop controllers


class AttitudeLoop:
    """Turns a thrust-vector law into ``(f, M)`` for the full model.

    The commanded attitude follows ``-u/|u|``; its rate and acceleration are
    obtained by central log-map differences over ``+-h``, with the chain at
    ``t +- h`` predicted to second order under the thrust the quadrotor
    actually produces, ``(u . R e3) R e3``.
    """

    def __init__(self, params, gains, h):
        if not (h and h > 0):
            raise ValueError("the attitude loop needs a differencing step h > 0")
        self.params = params
        self.gains = gains
        self.h = float(h)

    def command(self, t, state, law, u, b1d):
        """``law(t, q, w) -> (u, b1d)`` is evaluated at the two neighbours.

        Returns ``(ControlInput, e_R, e_Om)``.
        """
        q, w = state.chain.q, state.chain.w
        body = state.body
        h = self.h
        b3 = body.R[:, 2]
        pk = _pack(self.params)
        qs, ws = _kernels.predict_chain(pk.M, pk.Mgl, pk.l, q, w, (u @ b3) * b3, h)
        um, bm = law(t - h, qs[0], ws[0])
        up, bp = law(t + h, qs[1], ws[1])
        frames = []
        for uk, bk in ((um, bm), (u, b1d), (up, bp)):
            Rk, status = _desired_attitude(uk, bk)
            if status:
                raise ControlError(_ATTITUDE_FAILURES[status])
            frames.append(Rk)
        Rc = frames[1]
        Om_c, dOm_c = _setpoint_rates(frames[0], Rc, frames[2], h)
        g = self.gains
        M, e_R, e_Om = _moment(self.params.J, g.k_R, g.k_Om, g.eps, body.R, body.Om,
                               Rc, Om_c, dOm_c)
        return ControlInput(-(u @ b3), M), e_R, e_Om


class TautController:
    """Callable ``(t, state) -> Command`` for the taut-tether controller.

    Parameters
    ----------
    params : SystemParams
        The simulated system; for ``n > 1`` the direction law runs on
        ``params.lumped()`` with the pivot-to-quadrotor direction.
    reference : callable
        ``t -> TautReference``.
    gains : TautGains
    model : {"full", "simplified"}
        ``"simplified"`` returns the thrust vector ``u`` itself (no attitude
        loop); ``"full"`` returns ``(f, M)``.
    fd_step : float, optional
        Step for differentiating the attitude command; required for the full
        model (normally the integrator step).
    """

    def __init__(self, params, reference, gains=TautGains(), model="full", fd_step=None):
        if model not in ("full", "simplified"):
            raise ValueError(f"unknown model {model!r}")
        self.params = params
        self.single = params if params.n == 1 else params.lumped()
        self.reference = reference
        self.gains = gains
        self.model = model
        self.attitude = AttitudeLoop(params, gains, fd_step) if model == "full" else None
        sp = self.single
        self._consts = (sp.m, sp.g, sp.total_length, sp.alpha, sp.beta)

    def direction(self, q, w):
        if self.params.n == 1:
            return q[0], w[0]
        return _taut_direction(self.params, q, w)

    def thrust(self, t, q, w):
        """Desired thrust vector, reference and direction errors for a chain state."""
        ref = self.reference(t)
        p, wp = self.direction(q, w)
        m, g, length, alpha, beta = self._consts
        u = (_u_parallel(m, g, length, p, wp, ref.T_d)
             + _u_perp(alpha, beta, self.gains.k_q, self.gains.k_w, p, wp,
                       ref.q_d, ref.w_d, ref.dw_d))
        return u, ref, _direction_errors(p, wp, ref.q_d, ref.w_d)

    def _law(self, t, q, w):
        u, ref, _ = self.thrust(t, q, w)
        return u, ref.b1d

    def __call__(self, t, state):
        u, ref, (e_q, e_w) = self.thrust(t, state.chain.q, state.chain.w)
        if self.attitude is None:
            return Command(u, e_q=e_q, e_w=e_w)
        inp, e_R, e_Om = self.attitude.command(t, state, self._law, u, ref.b1d)
        return Command(inp, e_q=e_q, e_w=e_w, e_R=e_R, e_Om=e_Om)
