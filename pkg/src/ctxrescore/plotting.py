"""Figures written next to the grid reports (Agg backend, PNG)."""

import math
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SELECT = re.compile(r"^select-(\w+)>([0-9.eE+-]+)$")


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_grid(grid, path):
    """Bar chart of pooled CER per condition, baseline highlighted."""
    names = [c.name for c in grid.conditions]
    values = [100.0 * grid.cer(n) if grid.reports[n].ref_len else math.nan for n in names]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(names) + 1.5), 3.2))
    colors = ["#c44e52" if n == grid.baseline else "#4c72b0" for n in names]
    ax.bar(range(len(names)), values, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("CER (%)")
    finite = [v for v in values if not math.isnan(v)]
    if finite:
        lo, hi = min(finite), max(finite)
        pad = max(0.1, 0.15 * (hi - lo))
        ax.set_ylim(max(0.0, lo - pad), hi + pad)
    return _finish(fig, path)


def threshold_points(grid):
    """``[(tau, cer, concatenated)]`` for every ``select-<tag>><tau>`` column."""
    pts = []
    for cond in grid.conditions:
        m = _SELECT.match(cond.name)
        if m:
            pts.append((float(m.group(2)), grid.cer(cond.name), grid.concat_counts.get(cond.name, 0)))
    return sorted(pts)


def plot_thresholds(grid, path):
    """CER and concatenation count against the similarity threshold."""
    pts = threshold_points(grid)
    if not pts:
        return None
    taus = [p[0] for p in pts]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(taus, [100.0 * p[1] for p in pts], "o-", color="#4c72b0")
    ax.set_xlabel("similarity threshold")
    ax.set_ylabel("CER (%)", color="#4c72b0")
    twin = ax.twinx()
    twin.plot(taus, [p[2] for p in pts], "s--", color="#dd8452")
    twin.set_ylabel("concatenated utterances", color="#dd8452")
    return _finish(fig, path)


def plot_perplexity(histories, path):
    """Per-epoch perplexity curves; ``histories`` maps a label to train() history."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label, hist in histories.items():
        epochs = [r["epoch"] for r in hist]
        ax.plot(epochs, [r["train_ppl"] for r in hist], "-", label="%s train" % label)
        if any("heldout_ppl" in r for r in hist):
            ax.plot(epochs, [r.get("heldout_ppl", math.nan) for r in hist], "--",
                    label="%s held-out" % label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("perplexity")
    ax.legend(fontsize=7)
    return _finish(fig, path)
