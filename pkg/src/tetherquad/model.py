"""Physical model of a quadrotor on a chain of ``n`` rigid tether links.

Frames: the inertial origin is the ground pivot and ``e3`` points down along
gravity. Link ``i`` has direction ``q_i`` (unit vector, pointing away from the
pivot) and inertial angular velocity ``w_i`` with ``q_i . w_i = 0``. The
quadrotor sits at the outer end of link ``n`` with attitude ``R`` and body rate
``Om``.

The array kernels (``link_accel``, ``thrust_vector``...) accept leading batch
axes: ``q`` and ``w`` have shape ``(..., n, 3)``, ``u`` has shape ``(..., 3)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .manifold import E3, hat, is_rotation, project_tangent

BENCHMARK_QUAD_MASS = 0.755
BENCHMARK_QUAD_INERTIA = (0.0043, 0.0043, 0.0103)
BENCHMARK_TETHER_MASS = 0.3
BENCHMARK_TETHER_LENGTH = 5.0
DEFAULT_GRAVITY = 9.81


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Masses, lengths and inertia of the tethered quadrotor.

    Derived quantities are computed once at construction:

    ``M``     (n, n) inertia coefficients ``M_ij`` of the kinetic energy
    ``Mg``    (n,)   gravity coefficients ``M_gi`` of the potential
    ``m_T``   total mass of the quadrotor and the links
    """

    m: float
    J: np.ndarray
    link_masses: np.ndarray
    link_lengths: np.ndarray
    g: float = DEFAULT_GRAVITY
    M: np.ndarray = field(init=False, repr=False)
    Mg: np.ndarray = field(init=False, repr=False)
    m_T: float = field(init=False, repr=False)

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        if J.shape == (3,):
            J = np.diag(J)
        ml = np.atleast_1d(np.array(self.link_masses, dtype=float))
        ll = np.atleast_1d(np.array(self.link_lengths, dtype=float))
        if ml.shape != ll.shape or ml.ndim != 1 or ml.size == 0:
            raise ValueError("link_masses and link_lengths must be equal-length 1-D")
        if self.m <= 0 or np.any(ml <= 0) or np.any(ll <= 0):
            raise ValueError("masses and lengths must be strictly positive")
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ValueError("J must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(J)) <= 0:
            raise ValueError("J must be positive-definite")
        if self.g < 0:
            raise ValueError("gravity must be non-negative")
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "g", float(self.g))
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "link_masses", ml)
        object.__setattr__(self, "link_lengths", ll)
        M, Mg = _inertia_coefficients(self.m, ml, ll)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Mg", Mg)
        object.__setattr__(self, "m_T", float(self.m + ml.sum()))

    @property
    def n(self):
        return self.link_masses.size

    @property
    def total_length(self):
        return float(self.link_lengths.sum())

    @classmethod
    def benchmark(cls, n=1, g=DEFAULT_GRAVITY):
        """Quadrotor and tether of the numerical examples, tether split uniformly."""
        return cls(
            m=BENCHMARK_QUAD_MASS,
            J=np.diag(BENCHMARK_QUAD_INERTIA),
            link_masses=np.full(n, BENCHMARK_TETHER_MASS / n),
            link_lengths=np.full(n, BENCHMARK_TETHER_LENGTH / n),
            g=g,
        )

    def lumped(self):
        """Single-link equivalent with the same total tether mass and length."""
        return SystemParams(self.m, self.J, [self.link_masses.sum()],
                            [self.link_lengths.sum()], self.g)

    @property
    def alpha(self):
        """``M_g1 l_1 g / M_11`` of the single-link reduction (n = 1 only)."""
        self._require_single()
        return self.Mg[0] * self.link_lengths[0] * self.g / self.M[0, 0]

    @property
    def beta(self):
        """``l_1 / M_11`` of the single-link reduction (n = 1 only)."""
        self._require_single()
        return self.link_lengths[0] / self.M[0, 0]

    def _require_single(self):
        if self.n != 1:
            raise ValueError("alpha/beta are defined for a single link")

    def to_dict(self):
        return {
            "m": self.m,
            "J": self.J.tolist(),
            "link_masses": self.link_masses.tolist(),
            "link_lengths": self.link_lengths.tolist(),
            "g": self.g,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["m"], np.array(d["J"]), d["link_masses"], d["link_lengths"],
                   d.get("g", DEFAULT_GRAVITY))


def _inertia_coefficients(m, ml, ll):
    n = ml.size
    # tail[i] = sum of link masses outboard of link i
    tail = np.concatenate([np.cumsum(ml[::-1])[::-1][1:], [0.0]])
    M = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            k = max(i, j)
            if i == j:
                M[i, i] = (m + ml[i] / 3.0 + tail[i]) * ll[i] ** 2
            else:
                M[i, j] = (m + ml[k] / 2.0 + tail[k]) * ll[i] * ll[j]
    Mg = m + ml / 2.0 + tail
    return M, Mg


def inertia_coefficients(params):
    """Return ``(M_ij, M_gi)`` for ``params``."""
    return params.M.copy(), params.Mg.copy()


@dataclass(frozen=True, eq=False)
class ChainState:
    """Link directions ``q`` (n, 3) and angular velocities ``w`` (n, 3)."""

    q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if q.shape != w.shape or q.shape[-1] != 3:
            raise ValueError("q and w must both have shape (n, 3)")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "w", w)

    @property
    def n(self):
        return self.q.shape[0]

    def check(self, tol=1e-10):
        """Raise ``ValueError`` if a direction is not unit or a rate not tangent."""
        if np.max(np.abs(np.linalg.norm(self.q, axis=-1) - 1.0)) > tol:
            raise ValueError("link direction is not a unit vector")
        if np.max(np.abs(np.sum(self.q * self.w, axis=-1))) > tol:
            raise ValueError("link angular velocity is not perpendicular to q")
        return self

    @classmethod
    def hanging(cls, n):
        """All links aligned with ``-e3`` (quadrotor straight above the pivot), at rest."""
        return cls(np.tile(-E3, (n, 1)), np.zeros((n, 3)))

    @classmethod
    def straight(cls, direction, n, w=None):
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        w = np.zeros(3) if w is None else project_tangent(d, w)
        return cls(np.tile(d, (n, 1)), np.tile(w, (n, 1)))

    def qdot(self):
        return np.cross(self.w, self.q)


@dataclass(frozen=True, eq=False)
class BodyState:
    """Quadrotor attitude ``R`` and body angular velocity ``Om``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    Om: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "Om", np.asarray(self.Om, dtype=float).reshape(3))

    def check(self, tol=1e-10):
        if not is_rotation(self.R, tol):
            raise ValueError("attitude is not a rotation matrix")
        return self


@dataclass(frozen=True)
class ControlInput:
    """Thrust magnitude ``f`` [N] and body-frame moment ``M`` [N m]."""

    f: float
    M: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float).reshape(3)
        if not (np.isfinite(self.f) and np.all(np.isfinite(M))):
            raise ValueError("control input must be finite")
        object.__setattr__(self, "f", float(self.f))
        object.__setattr__(self, "M", M)


def thrust_vector(f, R):
    """Inertial thrust ``u = -f R e3``."""
    return -np.asarray(f, dtype=float)[..., None] * np.asarray(R)[..., :, 2]


# ---------------------------------------------------------------------------
# equations of motion


def mass_matrix(params, chain):
    """Block matrix of the second-order form: ``M_ii I`` and ``-hat(q_i)^2 M_ij``."""
    return _mass_matrix(params, chain.q)


def _mass_matrix(params, q):
    n = params.n
    hq = hat(q)
    P = -(hq @ hq)  # projections onto the planes normal to q_i
    blocks = params.M[:, :, None, None] * P[..., :, None, :, :]
    idx = np.arange(n)
    blocks[..., idx, idx, :, :] = params.M[idx, idx, None, None] * np.eye(3)
    return np.swapaxes(blocks, -3, -2).reshape(q.shape[:-2] + (3 * n, 3 * n))


def link_accel(params, q, w, u):
    """Solve the angular-velocity form of the chain dynamics for ``dw/dt``.

    For every link ``i``::

        M_ii dw_i - hat(q_i) sum_{j != i} M_ij (hat(q_j) dw_j + |w_j|^2 q_j)
            - hat(q_i) M_gi l_i g e3 = l_i hat(q_i) u

    The coupled 3n x 3n linear system is solved densely.
    """
    n = params.n
    M = params.M
    l = params.link_lengths
    hq = hat(q)
    blocks = -M[:, :, None, None] * (hq[..., :, None, :, :] @ hq[..., None, :, :, :])
    idx = np.arange(n)
    blocks[..., idx, idx, :, :] = M[idx, idx, None, None] * np.eye(3)
    A = np.swapaxes(blocks, -3, -2).reshape(q.shape[:-2] + (3 * n, 3 * n))

    Moff = M - np.diag(np.diag(M))
    s = np.sum(w * w, axis=-1, keepdims=True) * q
    v = (Moff @ s) + (params.Mg * l * params.g)[:, None] * E3
    v = v + l[:, None] * np.asarray(u)[..., None, :]
    rhs = np.cross(q, v).reshape(q.shape[:-2] + (3 * n, 1))
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"chain system is singular: {exc}") from exc
    return sol.reshape(q.shape)


def link_accelerations(params, chain, u):
    """Angular accelerations ``dw_i/dt`` of all links for inertial thrust ``u``."""
    return link_accel(params, chain.q, chain.w, np.asarray(u, dtype=float))


def attitude_dynamics(params, body, M_ctrl):
    """``dOm/dt = J^-1 (M - Om x J Om)``."""
    return attitude_accel(params, body.Om, np.asarray(M_ctrl, dtype=float))


def attitude_accel(params, Om, M_ctrl):
    JOm = Om @ params.J.T
    return np.linalg.solve(params.J, (M_ctrl - np.cross(Om, JOm))[..., None])[..., 0]


def tension(params, q, w, u):
    """Tether tension at the quadrotor for a single link (positive = stretched).

    For ``n > 1`` the lumped single-link length is used.
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    l = params.total_length
    return (params.m * params.g * q[..., 2]
            + params.m * l * np.sum(w * w, axis=-1)
            + np.sum(q * np.asarray(u), axis=-1))


def quad_accel_decomposition(params, chain):
    """Split the quadrotor acceleration as ``xddot = -F - B u``.

    Uses the second-order form ``Mq(q) qddot + G(q, qdot) = -[l_i hat(q_i)^2 u]``.
    """
    q = chain.q
    n = params.n
    l = params.link_lengths
    Mq = _mass_matrix(params, q)
    hq = hat(q)
    hq2 = hq @ hq
    qd = np.cross(chain.w, q)
    G = (np.diag(params.M)[:, None] * np.sum(qd * qd, axis=-1)[:, None] * q
         + (params.Mg * l * params.g)[:, None] * (hq2 @ E3))
    H = (l[:, None, None] * hq2).reshape(3 * n, 3)
    rhs = np.concatenate([G.reshape(3 * n, 1), H], axis=1)
    try:
        sol = np.linalg.solve(Mq, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"mass matrix is singular: {exc}") from exc
    L = np.kron(l[None, :], np.eye(3))  # 3 x 3n
    out = L @ sol
    return out[:, 0], out[:, 1:]


def energies(params, chain, body):
    """Kinetic and gravitational potential energy ``(T, U)``."""
    qd = np.cross(chain.w, chain.q)
    kin = 0.5 * np.einsum("ij,ik,jk->", params.M, qd, qd)
    kin += 0.5 * body.Om @ params.J @ body.Om
    pot = -params.g * np.sum(params.Mg * params.link_lengths * chain.q[:, 2])
    return float(kin), float(pot)


def positions(params, chain):
    """Outer end points ``x_i`` of every link, shape (n, 3); the last row is the quadrotor."""
    return np.cumsum(params.link_lengths[:, None] * chain.q, axis=0)


def quad_position(params, q):
    return np.einsum("i,...ij->...j", params.link_lengths, q)


def quad_velocity(params, q, w):
    return np.einsum("i,...ij->...j", params.link_lengths, np.cross(w, q))
