"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVE = {"dpi": 120, "bbox_inches": "tight", "metadata": {"Software": None}}


def _finish(fig, path):
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_training_curve(history, path, title=None):
    rounds = [r["round"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(rounds, [r["loss"] for r in history], marker=".", color="k")
    ax1.set_xlabel("round")
    ax1.set_ylabel("training loss")
    pts = [(r["round"], r["hr_at_10"], r["ndcg_at_10"]) for r in history
           if not math.isnan(r.get("hr_at_10", float("nan")))]
    if pts:
        x, hr, nd = zip(*pts)
        ax2.plot(x, hr, marker="o", label="HR@10")
        ax2.plot(x, nd, marker="s", label="NDCG@10")
        ax2.legend(frameon=False)
    ax2.set_xlabel("round")
    ax2.set_ylabel("validation metric")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _finish(fig, path)


def plot_sweep(rows, axis, path):
    xs = [r["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.plot(xs, [r["hr_at_10"] for r in rows], marker="o", label="HR@10")
    ax.plot(xs, [r["ndcg_at_10"] for r in rows], marker="s", label="NDCG@10")
    if axis == "f":
        ax.set_xscale("log", base=2)
        ax.set_xticks(xs)
        ax.set_xticklabels([str(int(x)) for x in xs])
    ax.set_xlabel({"lambda": r"$\lambda$"}.get(axis, axis))
    ax.set_ylabel("test metric")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _finish(fig, path)


def plot_bench(rows, path):
    ms = [r["m"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.loglog(ms, [r["hamming_seconds"] * 1e3 for r in rows], marker="o", label="Hamming (binary)")
    ax.loglog(ms, [r["inner_seconds"] * 1e3 for r in rows], marker="s", label="inner product (real)")
    ax.set_xlabel("number of items m")
    ax.set_ylabel("top-k query time (ms)")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _finish(fig, path)


def plot_costs(reports, path):
    names = [r.model for r in reports]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.bar(names, [r.storage_bytes / 2**20 for r in reports], color="0.5")
    ax1.set_ylabel("storage (MiB)")
    ax2.bar(names, [r.communication_bytes / 2**20 for r in reports], color="0.3")
    ax2.set_ylabel("communication per round (MiB)")
    for ax in (ax1, ax2):
        ax.set_yscale("log")
        ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    return _finish(fig, path)
