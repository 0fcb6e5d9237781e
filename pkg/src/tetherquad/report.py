"""Trajectory CSV, JSON metrics and optional SVG plots.

CSV columns (SI units: s, rad/s, N, N m), for ``n`` links::

    t, q1x,q1y,q1z, ..., qnz, w1x, ..., wnz, R11,R12,...,R33, Om1,Om2,Om3,
    f, M1,M2,M3, ux,uy,uz, T, eq_x,eq_y,eq_z, ew_x,.., eR_x,.., eOm_x,..,
    ex_x,.., exd_x,.., phase

Floats use 17 significant digits so that parsing restores them bit-exactly.
Quantities a run does not produce (``f`` and ``M`` on the simplified model,
``T`` for ``n > 1``, errors of an inactive loop) are empty fields.
"""

import csv
import json
import os

import numpy as np

from .integrator import Trajectory
from .model import SystemParams

_AXES = ("x", "y", "z")
_ERRORS = (("e_q", "eq"), ("e_w", "ew"), ("e_R", "eR"), ("e_Om", "eOm"), ("e_x", "ex"),
           ("e_xd", "exd"))


def csv_header(n):
    cols = ["t"]
    cols += [f"q{i}{a}" for i in range(1, n + 1) for a in _AXES]
    cols += [f"w{i}{a}" for i in range(1, n + 1) for a in _AXES]
    cols += [f"R{r}{c}" for r in range(1, 4) for c in range(1, 4)]
    cols += ["Om1", "Om2", "Om3", "f", "M1", "M2", "M3", "ux", "uy", "uz", "T"]
    cols += [f"{short}_{a}" for _, short in _ERRORS for a in _AXES]
    cols.append("phase")
    return cols


def _fmt(x):
    return "" if np.isnan(x) else format(float(x), ".17g")


def _matrix(traj):
    N = len(traj)
    parts = [traj.t[:, None], traj.q.reshape(N, -1), traj.w.reshape(N, -1),
             traj.R.reshape(N, 9), traj.Om, traj.f[:, None], traj.M, traj.u, traj.T[:, None]]
    parts += [getattr(traj, name) for name, _ in _ERRORS]
    return np.hstack(parts)


def write_csv(traj, path):
    data = _matrix(traj)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(traj.n))
        for row, ph in zip(data, traj.phase):
            w.writerow([_fmt(x) for x in row] + [str(int(ph))])


def _infer_links(header):
    n = sum(1 for c in header if c.startswith("q") and c[1:-1].isdigit())
    if n % 3 or n == 0:
        raise ValueError("CSV header has no link direction columns")
    return n // 3


def read_csv(path):
    """Parse a trajectory CSV written by ``write_csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    n = _infer_links(header)
    if header != csv_header(n):
        raise ValueError(f"{path}: header does not match the trajectory schema")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no samples")
    N = len(body)
    try:
        data = np.array([[float(x) if x else np.nan for x in r[:-1]] for r in body])
        phase = np.array([int(r[-1]) for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.shape != (N, len(header) - 1):
        raise ValueError(f"{path}: ragged rows")
    cols = {}
    k = 0

    def take(width):
        nonlocal k
        out = data[:, k:k + width]
        k += width
        return out

    cols["t"] = take(1)[:, 0]
    cols["q"] = take(3 * n).reshape(N, n, 3)
    cols["w"] = take(3 * n).reshape(N, n, 3)
    cols["R"] = take(9).reshape(N, 3, 3)
    cols["Om"] = take(3)
    cols["f"] = take(1)[:, 0]
    cols["M"] = take(3)
    cols["u"] = take(3)
    cols["T"] = take(1)[:, 0]
    for name, _ in _ERRORS:
        cols[name] = take(3)
    return Trajectory(phase=phase, **cols)


def meta_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".meta.json"


def write_meta(path, params, h, extra=None):
    meta = {"params": params.to_dict(), "h": h}
    meta.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(path):
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    meta["params"] = SystemParams.from_dict(meta["params"])
    return meta


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_svg(traj, params, path):
    """Error norms and link end positions; needs matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    for name, short in _ERRORS:
        e = np.linalg.norm(getattr(traj, name), axis=-1)
        if np.any(np.isfinite(e)):
            ax1.semilogy(traj.t, np.maximum(e, 1e-16), label=short)
    ax1.set_xlabel("t [s]")
    ax1.set_ylabel("error norm")
    ax1.legend(loc="upper right", fontsize=8)
    ends = np.cumsum(params.link_lengths[None, :, None] * traj.q, axis=1)
    for i in range(traj.n):
        ax2.plot(ends[:, i, 0], -ends[:, i, 2], lw=0.8, label=f"link {i + 1}")
    ax2.set_xlabel("x1 [m]")
    ax2.set_ylabel("height -x3 [m]")
    ax2.set_aspect("equal", adjustable="datalim")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
