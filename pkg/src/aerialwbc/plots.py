"""Render run CSVs to SVG figures.

Kept out of the simulation/acceptance path: everything here reads the
delimited output back from disk, so figures can be regenerated offline with
`aerialwbc plot`.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (7.0, 4.2)
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["svg.fonttype"] = "none"


def read_run_csv(path) -> dict[str, np.ndarray]:
    """Load a run CSV as a column-name -> array mapping."""
    with open(path) as f:
        rows = list(csv.reader(f))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


def _cols(d, prefix, labels):
    return [d[f"{prefix}_{lab}"] for lab in labels]


def _save(fig, out_dir: Path, name: str) -> Path:
    path = out_dir / f"{name}.svg"
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def render_run(csv_path, out_dir) -> list[Path]:
    """Render the standard figure set for one run; returns the files written."""
    d = read_run_csv(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = d["t"]
    written = []

    fig, axs = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
    for ax, lab in zip(axs, "xyz"):
        ax.plot(t, d[f"p_B_{lab}"], "b-", label="actual")
        ax.plot(t, d[f"p_B_ref_{lab}"], "r--", label="reference")
        ax.set_ylabel(f"{lab} [m]")
    axs[0].set_title("Base position")
    axs[0].legend(loc="best")
    axs[-1].set_xlabel("t [s]")
    written.append(_save(fig, out_dir, "base_position"))

    fig, ax = plt.subplots()
    ax.plot(t, d["yaw"], "b-", label="actual")
    ax.plot(t, d["yaw_ref"], "r--", label="reference")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("yaw [rad]")
    ax.set_title("Yaw angle")
    ax.legend(loc="best")
    written.append(_save(fig, out_dir, "yaw"))

    fig, axs = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
    for ax, lab in zip(axs, "xyz"):
        ax.plot(t, d[f"p_E_{lab}"], "b-", label="actual")
        ax.plot(t, d[f"p_E_ref_{lab}"], "r--", label="reference")
        ax.set_ylabel(f"{lab} [m]")
    axs[0].set_title("End-effector position (base frame)")
    axs[0].legend(loc="best")
    axs[-1].set_xlabel("t [s]")
    written.append(_save(fig, out_dir, "end_effector"))

    fig, ax = plt.subplots()
    for k in range(1, 5):
        ax.plot(t, d[f"F_{k}"], label=f"rotor {k}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("thrust [N]")
    ax.set_title("Rotor thrusts")
    ax.legend(loc="best", ncol=2)
    written.append(_save(fig, out_dir, "rotor_thrusts"))

    n = sum(1 for key in d if key.startswith("tau_"))
    fig, ax = plt.subplots()
    for j in range(1, n + 1):
        ax.plot(t, d[f"tau_{j}"], label=f"joint {j}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("torque [N m]")
    ax.set_title("Joint torques")
    ax.legend(loc="best", ncol=3)
    written.append(_save(fig, out_dir, "joint_torques"))

    fig, ax = plt.subplots()
    for j in range(1, n + 1):
        ax.plot(t, d[f"q_{j}"], label=f"joint {j}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("angle [rad]")
    ax.set_title("Joint angles")
    ax.legend(loc="best", ncol=3)
    written.append(_save(fig, out_dir, "joint_angles"))

    fig, ax = plt.subplots()
    ax.semilogy(t, np.maximum(d["norm_s"], 1e-16), "b-")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|s| [generalized vel.]")
    ax.set_title("Reference-velocity error")
    written.append(_save(fig, out_dir, "velocity_error"))

    return written


def render_ablation(csv_on, csv_off, out_dir) -> list[Path]:
    """Overlay integral ON/OFF tracking errors from two run CSVs."""
    don, doff = read_run_csv(csv_on), read_run_csv(csv_off)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def err_norm(d, prefix):
        e = np.stack([d[f"{prefix}_{lab}"] - d[f"{prefix}_ref_{lab}"]
                      for lab in "xyz"])
        return np.sqrt(np.sum(e**2, axis=0))

    fig, axs = plt.subplots(2, 1, sharex=True, figsize=(7, 5.5))
    axs[0].plot(don["t"], err_norm(doff, "p_B"), "r-", label="integral off")
    axs[0].plot(don["t"], err_norm(don, "p_B"), "b-", label="integral on")
    axs[0].set_ylabel("|base error| [m]")
    axs[0].legend(loc="best")
    axs[1].plot(don["t"], err_norm(doff, "p_E"), "r-", label="integral off")
    axs[1].plot(don["t"], err_norm(don, "p_E"), "b-", label="integral on")
    axs[1].set_ylabel("|ee error| [m]")
    axs[1].set_xlabel("t [s]")
    axs[0].set_title("Tracking error with and without integral action")
    written.append(_save(fig, out_dir, "ablation_errors"))
    return written
