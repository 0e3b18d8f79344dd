"""Record export: CSV logs and a self-contained plot bundle."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .runner import RunRecord

__all__ = ["csv_header", "export_csv", "read_csv", "export_plots"]


def csv_header(n: int, m: int, p: int) -> list[str]:
    cols = ["t"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"xhat{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)]
    cols += [f"y{i}" for i in range(p)]
    cols += [f"a{i}" for i in range(p)]
    cols += [f"z{i}" for i in range(p)]
    cols += ["g", "alarm"]
    return cols


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_csv(record: RunRecord, path) -> Path:
    """Write the per-step log; floats carry 17 significant digits."""
    path = Path(path)
    lines = [",".join(csv_header(record.n, record.m, record.p))]
    for i in range(len(record)):
        parts = [str(int(record.t[i]))]
        for block in (record.x[i], record.xhat[i], record.u[i], record.y[i], record.a[i], record.z[i]):
            parts.extend(_fmt(v) for v in block)
        parts.append(_fmt(record.g[i]))
        parts.append(str(int(record.alarm[i])))
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> dict:
    """Parse a CSV written by :func:`export_csv` back into column arrays."""
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    cols: dict[str, list] = {h: [] for h in header}
    for line in lines[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        if h in ("t", "alarm"):
            out[h] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            out[h] = np.array([float(v) for v in vals], dtype=np.float64)
    return out


_PLOT_SCRIPT = '''\
#!/usr/bin/env python3
"""Render trajectory, estimation-error and detection plots for one run.

Reads run.csv and meta.json from its own directory; writes PNGs there.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).parent
meta = json.loads((HERE / "meta.json").read_text())
n, p = meta["n"], meta["p"]

rows = list(csv.DictReader((HERE / "run.csv").open()))
t = [int(r["t"]) for r in rows]
tsec = [ti * meta["dt"] for ti in t]
x = [[float(r[f"x{i}"]) for r in rows] for i in range(n)]
xhat = [[float(r[f"xhat{i}"]) for r in rows] for i in range(n)]
g = [float(r["g"]) for r in rows]

t0_sec = meta["t0"] * meta["dt"]

# actual vs estimated trajectory (first two states, or state 0 vs time)
fig, ax = plt.subplots(figsize=(7, 4))
if n >= 2 and meta["model_id"] in ("vehicle", "lti_track"):
    ax.plot(x[0], x[1], "r-", label="actual")
    ax.plot(xhat[0], xhat[1], "g-", label="estimated")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
elif meta["model_id"] == "quadrotor":
    ax.plot(tsec, x[2], "r-", label="actual altitude")
    ax.plot(tsec, xhat[2], "g-", label="estimated altitude")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("z [m]")
else:
    ax.plot(tsec, x[0], "r-", label="actual")
    ax.plot(tsec, xhat[0], "g-", label="estimated")
    ax.set_xlabel("time [s]")
if meta["model_id"] not in ("vehicle", "lti_track"):
    ax.axvline(t0_sec, color="k", ls=":", lw=0.8)
ax.legend()
ax.set_title("actual vs estimated trajectory")
fig.tight_layout()
fig.savefig(HERE / "trajectory.png", dpi=120)

# per-axis estimation error
fig, axes = plt.subplots(min(n, 3), 1, figsize=(7, 6), sharex=True)
axes = axes if hasattr(axes, "__len__") else [axes]
for i, ax in enumerate(axes):
    err = [xv - xh for xv, xh in zip(x[i], xhat[i])]
    ax.plot(tsec, err)
    ax.axvline(t0_sec, color="k", ls=":", lw=0.8)
    ax.set_ylabel(f"state {i} error")
axes[-1].set_xlabel("time [s]")
fig.suptitle("estimation error")
fig.tight_layout()
fig.savefig(HERE / "estimation_error.png", dpi=120)

# detection value with threshold and attack start
fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(tsec, g, lw=0.7)
ax.axhline(meta["eta"], color="r", ls="--", label="threshold")
ax.axvline(t0_sec, color="k", ls=":", label="attack start")
ax.set_xlabel("time [s]")
ax.set_ylabel("detection value")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "detection.png", dpi=120)
print("wrote", HERE / "trajectory.png", HERE / "estimation_error.png", HERE / "detection.png")
'''


def export_plots(record: RunRecord, out_dir) -> Path:
    """Write run.csv, meta.json and a standalone plot.py into ``out_dir``."""
    if len(record) == 0:
        raise ValueError("cannot export plots for an empty record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(record, out / "run.csv")
    meta = {
        "model_id": record.model_id,
        "n": record.n,
        "m": record.m,
        "p": record.p,
        "dt": record.dt,
        "t0": record.t0,
        "eta": record.eta,
        "epsilon": record.epsilon,
        "alpha": record.alpha,
        "escaped": record.escaped,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    (out / "plot.py").write_text(_PLOT_SCRIPT)
    return out
