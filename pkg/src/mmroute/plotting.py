"""Cost-performance frontier figures (SVG, one per dataset)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import pareto_envelope  # noqa: E402

# fixed id salt and no timestamp so reruns produce byte-identical files
STYLE = {
    "svg.hashsalt": "mmroute",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def frontier_figure(title, series, singles, log_x=True, size=(4.6, 3.4)):
    """Figure with one envelope polyline per router and a star per single model.

    ``series`` maps router name -> list of (cost, perf) operating points;
    ``singles`` is a list of (model_id, cost, perf).
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size)
        for name, pts in series.items():
            env = pareto_envelope(pts)
            if len(env) == 1:
                ax.plot(env.costs, env.perfs, "o", ms=4, label=name)
            else:
                ax.plot(env.costs, env.perfs, "-", lw=1.3, marker=".", ms=3, label=name)
        for mid, c, p in singles:
            ax.plot([c], [p], "*", ms=8, color="0.25", zorder=5)
            ax.annotate(mid, (c, p), textcoords="offset points", xytext=(3, 3), fontsize=6,
                        color="0.25")
        if log_x:
            ax.set_xscale("log")
        ax.set_xlabel("normalized cost" + (" (log)" if log_x else ""))
        ax.set_ylabel("performance")
        ax.set_title(title)
        ax.grid(alpha=0.3, lw=0.5)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
    return fig


def save_svg(fig, path) -> None:
    with plt.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_dataset_frontiers(out: Path, table, split, results, log_x=True) -> list[Path]:
    figdir = Path(out) / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    paths = []
    datasets = sorted({ds for r in results for ds in r.points})
    for ds in datasets:
        series = {r.name: [(p.mean_cost, p.mean_perf) for p in r.points[ds]]
                  for r in results if ds in r.points}
        ref = next(r.references[ds] for r in results if ds in r.references)
        singles = [(m.model_id, c, u) for m, u, c in zip(table.models, ref.mean_utility, ref.mean_cost)
                   if c == c]
        path = figdir / f"frontier_{ds}.svg"
        save_svg(frontier_figure(ds, series, singles, log_x), path)
        paths.append(path)
    return paths


def plot_from_run_dir(run_dir, log_x=True) -> list[Path]:
    """Re-render figures from a run directory's delimited outputs."""
    run_dir = Path(run_dir)
    series: dict[str, dict[str, list]] = {}
    with (run_dir / "frontier.csv").open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            series.setdefault(rec["dataset"], {}).setdefault(rec["router"], []).append(
                (float(rec["mean_cost"]), float(rec["mean_perf"])))
    singles: dict[str, list] = {}
    ref_path = run_dir / "single_models.csv"
    if ref_path.exists():
        with ref_path.open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                if rec["mean_cost"] not in ("", "--", "nan"):
                    singles.setdefault(rec["dataset"], []).append(
                        (rec["model_id"], float(rec["mean_cost"]), float(rec["mean_perf"])))
    figdir = run_dir / "figures"
    figdir.mkdir(exist_ok=True)
    paths = []
    for ds in sorted(series):
        path = figdir / f"frontier_{ds}.svg"
        save_svg(frontier_figure(ds, series[ds], singles.get(ds, []), log_x), path)
        paths.append(path)
    return paths
