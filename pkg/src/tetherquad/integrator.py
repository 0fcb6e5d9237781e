"""Fixed-step time integration on (S^2)^n x SO(3).

The default scheme is a Munthe-Kaas Runge-Kutta method of order four: the link
and body rates advance with the classical RK4 tableau while directions and
attitude advance through exponential maps of the stage rates, corrected by the
commutator terms that keep the method fourth order for non-commuting
rotations.

Controllers are called once per step and their output is held over the step
(continuous-control idealisation). For the full model the thrust direction is
re-evaluated from the attitude at every internal stage, ``u = -f R e3``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import ControlError, NumericalError, TetherError
from .model import BodyState, ChainState, ControlInput, tension

SCHEMES = {"rk4_manifold": 0, "euler_manifold": 1}
ERROR_FIELDS = ("e_q", "e_w", "e_R", "e_Om", "e_x", "e_xd")
MAX_STEP = 0.01


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    renormalize_every: int = 1
    scheme: str = "rk4_manifold"
    max_rate: float = 1e3  # rad/s; larger link rates abort the run

    def __post_init__(self):
        if not (0.0 < self.h <= MAX_STEP):
            raise ValueError(f"step h must lie in (0, {MAX_STEP}] s, got {self.h}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.renormalize_every < 0:
            raise ValueError("renormalize_every must be >= 0 (0 disables)")


@dataclass(frozen=True, eq=False)
class FullState:
    chain: ChainState
    body: BodyState = field(default_factory=BodyState)
    t: float = 0.0

    def check(self, tol=1e-10):
        self.chain.check(tol)
        self.body.check(tol)
        return self


@dataclass
class Command:
    """Controller output for one step.

    ``input`` is a :class:`ControlInput` for the full model or an inertial
    thrust 3-vector for the simplified model (thrust applied directly).
    Tracking errors that do not apply to a controller stay ``None``.
    """

    input: object
    e_q: Optional[np.ndarray] = None
    e_w: Optional[np.ndarray] = None
    e_R: Optional[np.ndarray] = None
    e_Om: Optional[np.ndarray] = None
    e_x: Optional[np.ndarray] = None
    e_xd: Optional[np.ndarray] = None
    phase: int = 0


Controller = Callable[[float, FullState], Command]


class _Packed:
    """Parameter arrays in the layout the compiled kernels expect."""

    def __init__(self, params):
        self.M = params.M
        self.Mgl = params.Mg * params.link_lengths * params.g
        self.l = params.link_lengths
        self.J = params.J
        self.Jinv = np.linalg.inv(params.J)


_packed_cache = {}


def _pack(params):
    key = id(params)
    hit = _packed_cache.get(key)
    if hit is None or hit[0] is not params:
        hit = (params, _Packed(params))
        _packed_cache[key] = hit
    return hit[1]


def _split_input(inp):
    if isinstance(inp, ControlInput):
        return True, inp.f, inp.M, np.zeros(3)
    u = np.asarray(inp, dtype=float).reshape(3)
    return False, 0.0, np.zeros(3), u


def applied_thrust(inp, R):
    """Inertial thrust actually acting on the chain for a given input and attitude."""
    if isinstance(inp, ControlInput):
        return -inp.f * np.asarray(R)[:, 2]
    return np.asarray(inp, dtype=float).reshape(3)


def _advance(pk, q, w, R, Om, inp, cfg, renorm, t):
    full, f, Mc, u = _split_input(inp)
    try:
        qn, wn, Rn, On, rate = _kernels.advance(
            pk.M, pk.Mgl, pk.l, pk.J, pk.Jinv, q, w, R, Om, float(f), Mc, u, full,
            cfg.h, SCHEMES[cfg.scheme], renorm)
    except Exception as exc:  # numba surfaces LinAlgError as a plain exception
        raise NumericalError(f"chain solve failed: {exc}", t=t,
                             state=_dump(q, w, R, Om)) from exc
    if not np.isfinite(rate):
        raise NumericalError("non-finite state", t=t + cfg.h, state=_dump(q, w, R, Om))
    if rate > cfg.max_rate:
        raise NumericalError(f"link rate {rate:.3g} rad/s exceeds {cfg.max_rate:g}",
                             t=t + cfg.h, state=_dump(qn, wn, Rn, On))
    return qn, wn, Rn, On


def _dump(q, w, R, Om):
    return {"q": np.array(q).tolist(), "w": np.array(w).tolist(),
            "R": np.array(R).tolist(), "Om": np.array(Om).tolist()}


def step(params, state, inp, cfg=IntegratorConfig()):
    """Advance ``state`` by one step of size ``cfg.h`` under a held input."""
    q, w, R, Om = _advance(_pack(params), state.chain.q, state.chain.w,
                           state.body.R, state.body.Om, inp, cfg,
                           cfg.renormalize_every == 1, state.t)
    return FullState(ChainState(q, w), BodyState(R, Om), state.t + cfg.h)


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled simulation record.

    Array shapes with ``N`` samples and ``n`` links: ``t (N,)``, ``q, w
    (N, n, 3)``, ``R (N, 3, 3)``, ``Om, M, u, e_* (N, 3)``, ``f, T (N,)``,
    ``phase (N,)``. Quantities a run does not produce are NaN.
    """

    t: np.ndarray
    q: np.ndarray
    w: np.ndarray
    R: np.ndarray
    Om: np.ndarray
    f: np.ndarray
    M: np.ndarray
    u: np.ndarray
    T: np.ndarray
    e_q: np.ndarray
    e_w: np.ndarray
    e_R: np.ndarray
    e_Om: np.ndarray
    e_x: np.ndarray
    e_xd: np.ndarray
    phase: np.ndarray

    @property
    def n(self):
        return self.q.shape[1]

    def __len__(self):
        return self.t.size

    @classmethod
    def empty(cls, N, n):
        nan3 = lambda: np.full((N, 3), np.nan)
        return cls(
            t=np.zeros(N), q=np.zeros((N, n, 3)), w=np.zeros((N, n, 3)),
            R=np.zeros((N, 3, 3)), Om=np.zeros((N, 3)), f=np.full(N, np.nan),
            M=nan3(), u=np.zeros((N, 3)), T=np.full(N, np.nan), e_q=nan3(),
            e_w=nan3(), e_R=nan3(), e_Om=nan3(), e_x=nan3(), e_xd=nan3(),
            phase=np.zeros(N, dtype=int),
        )

    def state(self, k):
        return FullState(ChainState(self.q[k], self.w[k]),
                         BodyState(self.R[k], self.Om[k]), float(self.t[k]))

    def subsample(self, every):
        if every <= 1:
            return self
        sl = slice(None, None, every)
        return Trajectory(**{k: v[sl] for k, v in self.__dict__.items()})

    def select(self, mask):
        return Trajectory(**{k: v[mask] for k, v in self.__dict__.items()})

    def window(self, t0, t1=np.inf):
        return self.select((self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12))

    @property
    def step(self):
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 0.0

    @property
    def is_simplified(self):
        return bool(np.all(np.isnan(self.f)))


def _record(traj, k, t, q, w, R, Om, cmd, params):
    traj.t[k] = t
    traj.q[k] = q
    traj.w[k] = w
    traj.R[k] = R
    traj.Om[k] = Om
    inp = cmd.input
    if isinstance(inp, ControlInput):
        traj.f[k] = inp.f
        traj.M[k] = inp.M
    u = applied_thrust(inp, R)
    traj.u[k] = u
    if params.n == 1:
        traj.T[k] = tension(params, q[0], w[0], u)
    for name in ERROR_FIELDS:
        val = getattr(cmd, name)
        if val is not None:
            getattr(traj, name)[k] = val
    traj.phase[k] = cmd.phase


def zero_controller(full=True):
    """Controller that applies no thrust and no moment."""
    inp = ControlInput(0.0, np.zeros(3)) if full else np.zeros(3)

    def law(t, state):
        return Command(inp)

    return law


def simulate(params, initial, controller, cfg=IntegratorConfig(), duration=1.0):
    """Integrate from ``initial`` for ``duration`` seconds, recording every step.

    ``controller(t, state) -> Command`` is evaluated at each step instant
    (and once more at the final time, for the record only).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if controller is None:
        controller = zero_controller()
    initial.check(1e-8)
    steps = int(round(duration / cfg.h))
    traj = Trajectory.empty(steps + 1, params.n)
    pk = _pack(params)
    q = initial.chain.q.copy()
    w = initial.chain.w.copy()
    R = initial.body.R.copy()
    Om = initial.body.Om.copy()
    t0 = initial.t
    every = cfg.renormalize_every
    for k in range(steps + 1):
        t = t0 + k * cfg.h
        state = FullState(ChainState(q, w), BodyState(R, Om), t)
        try:
            cmd = controller(t, state)
        except TetherError as exc:
            if getattr(exc, "t", None) is None:
                raise ControlError(str(exc), t=t, state=_dump(q, w, R, Om)) from exc
            raise
        except (ValueError, ZeroDivisionError, FloatingPointError) as exc:
            raise ControlError(f"controller failed: {exc}", t=t,
                               state=_dump(q, w, R, Om)) from exc
        _record(traj, k, t, q, w, R, Om, cmd, params)
        if k == steps:
            break
        q, w, R, Om = _advance(pk, q, w, R, Om, cmd.input, cfg,
                               every > 0 and (k + 1) % every == 0, t)
    return traj


def simulate_batch(params, q0, w0, thrust_law, cfg=IntegratorConfig(), duration=1.0,
                   record_every=1):
    """Simplified-model runs for a batch of initial chains, all advanced in lock-step.

    ``q0, w0`` have shape ``(B, n, 3)``; ``thrust_law(t, q, w) -> u (B, 3)``.
    Returns ``(t, q, w, ok)`` with states sampled every ``record_every`` steps.
    Trajectories that diverge are frozen at their last finite state and
    flagged ``False`` in ``ok``.
    """
    pk = _pack(params)
    q = np.array(q0, dtype=float)
    w = np.array(w0, dtype=float)
    B = q.shape[0]
    R = np.broadcast_to(np.eye(3), (B, 3, 3)).copy()
    Om = np.zeros((B, 3))
    f = np.zeros(B)
    Mc = np.zeros((B, 3))
    steps = int(round(duration / cfg.h))
    n_rec = steps // record_every + 1
    ts = np.zeros(n_rec)
    qs = np.zeros((n_rec, B) + q.shape[1:])
    ws = np.zeros_like(qs)
    ok = np.ones(B, dtype=bool)
    scheme = SCHEMES[cfg.scheme]
    r = 0
    for k in range(steps + 1):
        t = k * cfg.h
        if k % record_every == 0:
            ts[r], qs[r], ws[r] = t, q, w
            r += 1
        if k == steps:
            break
        u = np.asarray(thrust_law(t, q, w), dtype=float)
        u = np.where(ok[:, None], u, 0.0)
        try:
            rates = _kernels.batch_step(pk.M, pk.Mgl, pk.l, pk.J, pk.Jinv, q, w, R, Om,
                                        f, Mc, u, False, cfg.h, scheme,
                                        cfg.renormalize_every > 0, ok)
        except Exception as exc:
            raise NumericalError(f"batch chain solve failed: {exc}", t=t) from exc
        ok &= rates <= cfg.max_rate
    return ts, qs, ws, ok
