"""Scenario configuration, built-in presets and batch execution.

Configs are INI files with dotted section names::

    [scenario]
    name = fig2
    controller = taut_n1          ; taut_n1 | taut_approx | flexible_two_phase | none
    model = full                  ; full | simplified
    duration = 10

    [system]
    quad_mass = 0.755
    quad_inertia = 0.0043, 0.0043, 0.0103
    links = 1
    tether_mass = 0.3             ; split uniformly, or give link_masses
    tether_length = 5.0           ; split uniformly, or give link_lengths

A config may start from a preset with ``preset = fig5`` in ``[scenario]``
and override individual keys.
"""

import configparser
import io
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError
from .flexible_control import (FlexConfig, FlexibleController, hanging_chain, linearize,
                               synthesize_gains)
from .integrator import FullState, IntegratorConfig, simulate, zero_controller
from .manifold import E3, unit
from .model import BodyState, ChainState, SystemParams, positions
from .taut_control import AttitudeLoop, FigureEight, FixedDirection, TautController, TautGains

CONTROLLERS = ("taut_n1", "taut_approx", "flexible_two_phase", "none")
MODELS = ("full", "simplified")
VIBRATION_THRESHOLD = 0.01  # m
VIBRATION_WINDOW = 2.0  # s

_COMMON = """
[system]
quad_mass = 0.755
quad_inertia = 0.0043, 0.0043, 0.0103
tether_mass = 0.3
tether_length = 5.0
gravity = 9.81

[controller.gains]
k_q = 9
k_w = 6
k_R = 8
k_Om = 2
eps = 0.1
c_q = 0.5

[output]
decimate = 10
"""

PRESETS = {
    "fig2": _COMMON + """
[scenario]
name = fig2
controller = taut_n1
model = full
duration = 10

[system]
links = 1

[controller.reference]
kind = figure_eight
T_d = 5

[initial]
kind = direction
direction = 1, 0, 0

[integrator]
h = 2e-4
""",
    "fig3": _COMMON + """
[scenario]
name = fig3
controller = taut_approx
model = full
duration = 10

[system]
links = 5

[controller.reference]
kind = figure_eight
T_d = 10

[initial]
kind = direction
direction = 1, 0, 0

[integrator]
h = 2e-4
""",
    "fig5": _COMMON + """
[scenario]
name = fig5
controller = flexible_two_phase
model = full
duration = 10

[system]
links = 5

[controller.flexible]
delta = 0.01
gamma = 1
k_x = 4
k_xd = 4
t_switch = 3

[controller.lqr]
state_weight = 1
input_weight = 10
decay = 1
dt = 1e-3
margin = 0.05

[initial]
kind = hanging_through
x0 = 2.46, 0, -0.43

[integrator]
h = 2e-4
""",
}
PRESETS["fig4"] = PRESETS["fig3"].replace("name = fig3", "name = fig4").replace(
    "T_d = 10", "T_d = 20")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    params: SystemParams
    controller: str
    model: str = "full"
    duration: float = 10.0
    gains: TautGains = field(default_factory=TautGains)
    reference: dict = field(default_factory=dict)
    flex: FlexConfig = field(default_factory=FlexConfig)
    lqr: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    decimate: int = 10

    @property
    def n(self):
        return self.params.n

    def with_model(self, model):
        return replace(self, model=model)


@dataclass(eq=False)
class RunResult:
    config: ScenarioConfig
    trajectory: object
    metrics: dict
    audit: Optional[object] = None


# ---------------------------------------------------------------------------
# parsing


class _Reader:
    """Typed access to a ConfigParser with field-named errors."""

    def __init__(self, cp):
        self.cp = cp

    def has(self, section, key):
        return self.cp.has_section(section) and self.cp.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if self.has(section, key):
            return self.cp.get(section, key).strip()
        if required:
            raise ConfigError(f"missing field [{section}] {key}")
        return default

    def float(self, section, key, default=None, required=False):
        v = self.raw(section, key, None, required)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a number, got {v!r}") from None

    def int(self, section, key, default=None, required=False):
        v = self.float(section, key, default, required)
        if v is None or float(v) != int(v):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {v!r}")
        return int(v)

    def vector(self, section, key, size=None, default=None, required=False):
        v = self.raw(section, key, None, required)
        if v is None:
            return default
        try:
            arr = np.array([float(x) for x in v.replace(";", ",").split(",") if x.strip()])
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected comma-separated numbers") from None
        if size is not None and arr.size != size:
            raise ConfigError(f"[{section}] {key}: expected {size} values, got {arr.size}")
        return arr


def _parser():
    return configparser.ConfigParser(inline_comment_prefixes=(";", "#"), strict=False,
                                     interpolation=None)


def _read_text(cp, text, source):
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_scenario(source):
    """Parse a config file, a preset name or config text into a ScenarioConfig."""
    if isinstance(source, str) and source in PRESETS:
        text, origin = PRESETS[source], f"preset {source}"
    elif isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            text, origin = fh.read(), str(source)
    elif isinstance(source, str) and "[" in source:
        text, origin = source, "<string>"
    else:
        raise ConfigError(f"no such scenario file or preset: {source!r} "
                          f"(presets: {', '.join(sorted(PRESETS))})")
    probe = _parser()
    _read_text(probe, text, origin)
    cp = _parser()
    preset = probe.get("scenario", "preset", fallback=None)
    if preset is not None:
        preset = preset.strip()
        if preset not in PRESETS:
            raise ConfigError(f"[scenario] preset: unknown preset {preset!r}")
        _read_text(cp, PRESETS[preset], f"preset {preset}")
    # later reads override earlier ones key by key
    cp.read_string(_merge_text(probe), source=origin)
    return _build(_Reader(cp))


def _merge_text(cp):
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _params(r):
    s = "system"
    m = r.float(s, "quad_mass", required=True)
    J = r.vector(s, "quad_inertia", required=True)
    if J.size == 3:
        J = np.diag(J)
    elif J.size == 9:
        J = J.reshape(3, 3)
    else:
        raise ConfigError("[system] quad_inertia: expected 3 (diagonal) or 9 values")
    g = r.float(s, "gravity", 9.81)
    masses = r.vector(s, "link_masses")
    lengths = r.vector(s, "link_lengths")
    n = r.int(s, "links", None) if r.has(s, "links") else None
    if masses is None or lengths is None:
        if n is None:
            raise ConfigError("missing field [system] links (or link_masses and link_lengths)")
        if n < 1:
            raise ConfigError("[system] links: must be at least 1")
        if masses is None:
            masses = np.full(n, r.float(s, "tether_mass", required=True) / n)
        if lengths is None:
            lengths = np.full(n, r.float(s, "tether_length", required=True) / n)
    if masses.size != lengths.size or (n is not None and masses.size != n):
        raise ConfigError("[system] link_masses, link_lengths and links disagree in size")
    try:
        return SystemParams(m, J, masses, lengths, g)
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from exc


def _build(r):
    name = r.raw("scenario", "name", "scenario")
    controller = r.raw("scenario", "controller", required=True)
    if controller not in CONTROLLERS:
        raise ConfigError(f"[scenario] controller: expected one of {CONTROLLERS}, "
                          f"got {controller!r}")
    model = r.raw("scenario", "model", "full")
    if model not in MODELS:
        raise ConfigError(f"[scenario] model: expected one of {MODELS}, got {model!r}")
    duration = r.float("scenario", "duration", 10.0)
    if not duration > 0:
        raise ConfigError("[scenario] duration: must be positive")
    params = _params(r)
    if controller == "taut_n1" and params.n != 1:
        raise ConfigError("[scenario] controller: taut_n1 needs links = 1 "
                          "(use taut_approx for a multi-link tether)")
    if controller == "flexible_two_phase" and params.n < 2:
        raise ConfigError("[scenario] controller: flexible_two_phase needs links >= 2")

    g = "controller.gains"
    try:
        gains = TautGains(**{k: r.float(g, k, getattr(TautGains, k))
                             for k in ("k_q", "k_w", "k_R", "k_Om", "eps", "c_q")})
    except ValueError as exc:
        raise ConfigError(f"[{g}] {exc}") from exc

    rs = "controller.reference"
    reference = {"kind": r.raw(rs, "kind", "figure_eight"),
                 "T_d": r.float(rs, "T_d", 5.0),
                 "direction": r.vector(rs, "direction", 3, -E3),
                 "b1d": r.vector(rs, "b1d", 3, np.array([1.0, 0.0, 0.0]))}
    if reference["kind"] not in ("figure_eight", "fixed"):
        raise ConfigError(f"[{rs}] kind: expected figure_eight or fixed")

    fs = "controller.flexible"
    try:
        flex = FlexConfig(delta=r.float(fs, "delta", 0.01), gamma=r.float(fs, "gamma", 1.0),
                          k_x=r.float(fs, "k_x", 4.0), k_xd=r.float(fs, "k_xd", 4.0),
                          t_switch=r.float(fs, "t_switch", 3.0),
                          x_d=r.vector(fs, "x_d", 3)).resolve(params)
    except ValueError as exc:
        raise ConfigError(f"[{fs}] {exc}") from exc

    ls = "controller.lqr"
    lqr = {"state_weight": r.float(ls, "state_weight", 1.0),
           "input_weight": r.float(ls, "input_weight", 10.0),
           "decay": r.float(ls, "decay", 1.0), "dt": r.float(ls, "dt", 1e-3),
           "margin": r.float(ls, "margin", 0.05)}

    ins = "initial"
    initial = {"kind": r.raw(ins, "kind", "direction"),
               "direction": r.vector(ins, "direction", 3, np.array([1.0, 0.0, 0.0])),
               "x0": r.vector(ins, "x0", 3),
               "q": r.vector(ins, "q"), "w": r.vector(ins, "w")}
    if initial["kind"] not in ("direction", "hanging_through", "hanging_equilibrium", "explicit"):
        raise ConfigError(f"[{ins}] kind: unknown initial condition {initial['kind']!r}")
    if initial["kind"] == "hanging_through" and initial["x0"] is None:
        raise ConfigError(f"missing field [{ins}] x0")
    if initial["kind"] == "explicit" and (initial["q"] is None
                                          or initial["q"].size != 3 * params.n):
        raise ConfigError(f"[{ins}] q: expected {3 * params.n} values")

    its = "integrator"
    try:
        integ = IntegratorConfig(h=r.float(its, "h", 1e-3),
                                 renormalize_every=r.int(its, "renormalize_every", 1),
                                 scheme=r.raw(its, "scheme", "rk4_manifold"))
    except ValueError as exc:
        raise ConfigError(f"[{its}] {exc}") from exc
    decimate = r.int("output", "decimate", 10)
    if decimate < 1:
        raise ConfigError("[output] decimate: must be >= 1")
    return ScenarioConfig(name, params, controller, model, duration, gains, reference, flex,
                          lqr, initial, integ, decimate)


# ---------------------------------------------------------------------------
# assembly


def initial_state(cfg):
    p = cfg.params
    ini = cfg.initial
    kind = ini["kind"]
    if kind == "direction":
        chain = ChainState.straight(ini["direction"], p.n)
    elif kind == "hanging_equilibrium":
        chain = ChainState.hanging(p.n)
    elif kind == "hanging_through":
        chain = ChainState(hanging_chain(p, ini["x0"]), np.zeros((p.n, 3)))
    else:
        q = unit(ini["q"].reshape(p.n, 3))
        w = np.zeros_like(q) if ini["w"] is None else ini["w"].reshape(p.n, 3)
        chain = ChainState(q, w - np.sum(w * q, axis=-1, keepdims=True) * q)
    return FullState(chain, BodyState(), 0.0)


def make_reference(cfg):
    ref = cfg.reference
    if ref["kind"] == "figure_eight":
        return FigureEight(ref["T_d"], b1d=ref["b1d"])
    return FixedDirection(ref["direction"], ref["T_d"], ref["b1d"])


def stabilizer_gains(cfg):
    lq = cfg.lqr
    lin = linearize(cfg.params)
    N = 4 * cfg.params.n
    return synthesize_gains(lin, Q=lq["state_weight"] * np.eye(N),
                            R=lq["input_weight"] * np.eye(3), dt=lq["dt"],
                            decay=lq["decay"], margin=lq["margin"])


def make_controller(cfg, state):
    full = cfg.model == "full"
    if cfg.controller == "none":
        return zero_controller(full)
    if cfg.controller in ("taut_n1", "taut_approx"):
        return TautController(cfg.params, make_reference(cfg), cfg.gains, cfg.model,
                              fd_step=cfg.integrator.h)
    x0 = positions(cfg.params, state.chain)[-1]
    att = AttitudeLoop(cfg.params, cfg.gains, cfg.integrator.h) if full else None
    return FlexibleController(cfg.params, cfg.flex, stabilizer_gains(cfg), x0, att)


# ---------------------------------------------------------------------------
# metrics


def vibration_index(params, traj, t0=None, t1=None):
    """RMS lateral deviation of interior link ends from the pivot-quadrotor chord.

    ``x_i - (L_i / L) x`` with ``L_i`` the length up to the end of link ``i``,
    over the window ``[t0, t1]`` (default: the last two seconds). Returns
    ``(overall, per_link)``; both are zero for a single link.
    """
    if t1 is None:
        t1 = traj.t[-1]
    if t0 is None:
        t0 = t1 - VIBRATION_WINDOW
    w = traj.window(t0, t1)
    if params.n < 2 or len(w) == 0:
        return 0.0, np.zeros(0)
    l = params.link_lengths
    xs = np.cumsum(l[None, :, None] * w.q, axis=1)
    frac = np.cumsum(l) / l.sum()
    dev = xs[:, :-1] - frac[None, :-1, None] * xs[:, -1:, :]
    per = np.sqrt(np.mean(np.sum(dev**2, axis=-1), axis=0))
    return float(np.sqrt(np.mean(per**2))), per


def decay_rate(t, err, floor=1e-8):
    """Exponential rate ``lam`` of a least-squares fit ``log|e| ~ c - lam t``.

    The fit uses the running upper envelope (max over the future) of the error
    norm, from the start until it first drops below ``floor``.
    """
    e = np.asarray(err, dtype=float)
    ok = np.isfinite(e)
    t, e = np.asarray(t)[ok], e[ok]
    env = np.maximum.accumulate(e[::-1])[::-1]
    keep = env > floor
    if np.count_nonzero(keep) < 3:
        return float("nan")
    stop = np.argmin(keep) if not keep.all() else keep.size
    slope = np.polyfit(t[:stop], np.log(env[:stop]), 1)[0]
    return float(-slope)


def _norm(a):
    return np.linalg.norm(a, axis=-1)


def compute_metrics(cfg, traj):
    """Scalar summary of a run."""
    m = {"scenario": cfg.name, "controller": cfg.controller, "model": cfg.model,
         "n": cfg.params.n, "duration": float(traj.t[-1] - traj.t[0]),
         "steps": len(traj) - 1}

    def final(name):
        v = getattr(traj, name)[-1]
        return None if np.any(np.isnan(v)) else float(np.linalg.norm(v))

    for name in ("e_q", "e_w", "e_R", "e_Om", "e_x"):
        m[f"final_{name}"] = final(name)
    if cfg.controller in ("taut_n1", "taut_approx"):
        m["decay_rate_e_q"] = decay_rate(traj.t, _norm(traj.e_q))
        if cfg.params.n == 1:
            m["max_tension_error"] = float(np.nanmax(np.abs(traj.T - cfg.reference["T_d"])))
            late = traj.t >= traj.t[-1] - VIBRATION_WINDOW
            m["late_tension_error"] = float(np.nanmax(np.abs(traj.T[late]
                                                             - cfg.reference["T_d"])))
    vib, per = vibration_index(cfg.params, traj)
    m["vibration_index"] = vib
    m["vibration_per_link"] = per.tolist()
    if cfg.controller == "flexible_two_phase":
        x = positions(cfg.params, traj.state(len(traj) - 1).chain)[-1]
        m["final_position_error_rel"] = float(np.linalg.norm(x - cfg.flex.x_d)
                                              / np.linalg.norm(cfg.flex.x_d))
        L = cfg.params.total_length
        xq = np.einsum("i,kij->kj", cfg.params.link_lengths, traj.q)
        m["max_radius_phase1"] = float(np.max(_norm(xq[traj.phase == 1]))) \
            if np.any(traj.phase == 1) else None
        m["tether_length"] = L
    return m


def run(cfg, audit=False):
    """Simulate a scenario and compute its metrics (and audits when asked)."""
    state = initial_state(cfg)
    controller = make_controller(cfg, state)
    traj = simulate(cfg.params, state, controller, cfg.integrator, cfg.duration)
    metrics = compute_metrics(cfg, traj)
    report = None
    if audit:
        from .verify import audit as run_audit
        k_x = cfg.flex.k_x if cfg.controller == "flexible_two_phase" else None
        report = run_audit(cfg.params, traj, k_x=k_x, hold=cfg.integrator.h)
    return RunResult(cfg, traj, metrics, report)
