"""Render figures from a results directory, next to the CSV they come from.

Two figure families:

* loss curves: for each (testbed, fmt) group, the best run per method and
  eval rounding, quantized loss against training step;
* width sweep: for results with a hidden-dimension column, the best final
  quantized loss per method against k, log-log.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import read_results

__all__ = ["render_report"]

_METHOD_COLORS = {
    "lotion": "tab:blue",
    "ptq": "tab:orange",
    "ptq-target": "tab:red",
    "qat": "tab:green",
    "rat": "tab:purple",
    "gt": "tab:brown",
}

_METRIC_COLS = {"rtn": "rtn_loss", "rr": "rr_loss_mean"}
_METRIC_STYLE = {"rtn": "-", "rr": "--"}


def _arm_rows(rows):
    arms: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["testbed"], row["fmt"], row["k"], row["method"], row["lr"], row["lambda"])
        arms.setdefault(key, []).append(row)
    for series in arms.values():
        series.sort(key=lambda r: r["step"])
    return arms


def _best_series(arms, group_key, method, metric):
    """Curve of the arm with the lowest final quantized loss; None if absent."""
    col = _METRIC_COLS[metric]
    best = None
    for key, series in arms.items():
        if key[:3] != group_key or key[3] != method or series[-1]["diverged"]:
            continue
        final = series[-1][col]
        if best is None or (final, key[4]) < (best[0], best[1]):
            best = (final, key[4], series)
    return None if best is None else best[2]


def _plot_curves(arms, group_key, out_path: Path) -> bool:
    testbed, fmt, k = group_key
    methods = sorted({key[3] for key in arms if key[:3] == group_key})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew = False
    for method in methods:
        for metric in ("rtn", "rr"):
            series = _best_series(arms, group_key, method, metric)
            if series is None or len(series) < 2:
                continue
            steps = [r["step"] for r in series]
            vals = [r[_METRIC_COLS[metric]] for r in series]
            ax.plot(
                steps,
                vals,
                _METRIC_STYLE[metric],
                color=_METHOD_COLORS.get(method, "gray"),
                label=f"{method} ({metric})",
            )
            drew = True
    if not drew:
        plt.close(fig)
        return False
    ax.set_xlabel("step")
    ax.set_ylabel("quantized loss")
    ax.set_yscale("log")
    title = f"{testbed}  {fmt}" + ("" if k is None else f"  k={k}")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return True


def _plot_k_sweep(arms, testbed_fmt, out_path: Path) -> bool:
    testbed, fmt = testbed_fmt
    by_method: dict[tuple, dict[int, float]] = {}
    for key, series in arms.items():
        if key[0] != testbed or key[1] != fmt or key[2] is None or series[-1]["diverged"]:
            continue
        k, method = key[2], key[3]
        for metric in ("rtn", "rr"):
            final = series[-1][_METRIC_COLS[metric]]
            slot = by_method.setdefault((method, metric), {})
            if k not in slot or final < slot[k]:
                slot[k] = final
    if not by_method:
        return False
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (method, metric), points in sorted(by_method.items()):
        ks = sorted(points)
        ax.plot(
            ks,
            [points[k] for k in ks],
            _METRIC_STYLE[metric],
            marker="o",
            markersize=3,
            color=_METHOD_COLORS.get(method, "gray"),
            label=f"{method} ({metric})",
        )
    ax.set_xlabel("hidden dimension k")
    ax.set_ylabel("final quantized loss")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_title(f"{testbed}  {fmt}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return True


def render_report(results_dir) -> list[Path]:
    """Write loss-curve and k-sweep figures next to results.csv; returns the files."""
    results_dir = Path(results_dir)
    results_path = results_dir / "results.csv" if results_dir.is_dir() else results_dir
    _, rows = read_results(results_path)
    out_dir = results_path.parent
    arms = _arm_rows(rows)

    written: list[Path] = []
    group_keys = sorted(
        {key[:3] for key in arms}, key=lambda g: (g[0], g[1], -1 if g[2] is None else g[2])
    )
    for group_key in group_keys:
        testbed, fmt, k = group_key
        fname = f"curves_{testbed}_{fmt.replace('/', '-')}" + ("" if k is None else f"_k{k}") + ".png"
        if _plot_curves(arms, group_key, out_dir / fname):
            written.append(out_dir / fname)

    for testbed_fmt in sorted({(g[0], g[1]) for g in group_keys if g[2] is not None}):
        fname = f"ksweep_{testbed_fmt[0]}_{testbed_fmt[1].replace('/', '-')}.png"
        if _plot_k_sweep(arms, testbed_fmt, out_dir / fname):
            written.append(out_dir / fname)
    return written
