"""Figure rendering for CLI reports (files only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_curves(cols: dict, thresholds: dict, path) -> None:
    """Four-panel plot of the solver curves emitted alongside the CSV."""
    x = cols["x"]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    ax = axes[0, 0]
    ax.plot(x, cols["R"], color="k")
    ax.set_title("expected discounted flow profit")
    ax = axes[0, 1]
    ax.plot(x, cols["beta_1"], label="firm 1")
    ax.plot(x, cols["beta_2"], label="firm 2")
    ax.set_title("stopping coefficient")
    ax.legend()
    ax = axes[1, 0]
    ax.plot(x, cols["beta_prime_1"], label="firm 1")
    ax.plot(x, cols["beta_prime_2"], label="firm 2")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_title("coefficient slope")
    ax.legend()
    ax = axes[1, 1]
    ax.plot(x, cols["V1"], label="firm 1")
    ax.plot(x, cols["V2"], label="firm 2")
    ax.set_title("single-player value")
    ax.legend()
    for a in axes.flat:
        a.grid(alpha=0.3)
    for key, color in (("theta1", "C0"), ("theta2", "C1")):
        if key in thresholds:
            for a in (axes[1, 0], axes[1, 1]):
                a.axvline(thresholds[key], color=color, ls="--", lw=0.8)
    axes[1, 0].set_xlabel("state")
    axes[1, 1].set_xlabel("state")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_hazards(xs, lam1, lam2, support_hi, path) -> None:
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(xs, lam1, label="firm 1 exit rate")
    ax.plot(xs, lam2, "--", label="firm 2 exit rate")
    ax.axvline(support_hi, color="k", ls=":", lw=0.8, label="support edge")
    ax.set_xlabel("state")
    ax.set_ylabel("hazard rate")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep(rows: list, param: str, path) -> None:
    vals = [r[param] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    axes[0].plot(vals, [r["theta1"] for r in rows], "o-", label="threshold 1", ms=3)
    axes[0].plot(vals, [r["theta2"] for r in rows], "s-", label="threshold 2", ms=3)
    axes[0].set_xlabel(param)
    axes[0].set_title("exit thresholds")
    axes[0].legend()
    kap = [r["kappa"] if np.isfinite(r["kappa"]) else np.nan for r in rows]
    axes[1].plot(vals, kap, "d-", ms=3, label="gap threshold kappa")
    axes[1].plot(vals, [r["gap"] for r in rows], "o-", ms=3, label="threshold gap")
    axes[1].set_xlabel(param)
    axes[1].set_title("strong-profile condition")
    axes[1].legend()
    for a in axes:
        a.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_outcomes(outcomes, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    alive = outcomes.winner != -1
    axes[0].hist(outcomes.exit_time[alive], bins=60, color="C0", alpha=0.8)
    axes[0].set_xlabel("game length")
    axes[0].set_title("exit times")
    axes[1].hist(outcomes.pay1[alive], bins=60, alpha=0.6, label="firm 1")
    axes[1].hist(outcomes.pay2[alive], bins=60, alpha=0.6, label="firm 2")
    axes[1].set_xlabel("discounted payoff")
    axes[1].set_title("realized payoffs")
    axes[1].legend()
    for a in axes:
        a.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
