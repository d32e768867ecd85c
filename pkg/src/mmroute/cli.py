"""Command-line entry point: ``mmroute {gen,ingest,run,transfer,report}``.

Exit codes: 0 success, 2 validation failure, 3 configuration error,
4 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .evaluation import read_metrics_csv, fmt_value
from .experiment import ConfigError, RunConfig, load_inputs, run, transfer
from .fusion import write_embeddings
from .outcome_store import ValidationError, write_outcomes, write_pool
from .routers import OracleAccessError
from .synthgen import WorkloadSpec, gen_workload

EXIT_VALIDATION, EXIT_CONFIG, EXIT_RUNTIME = 2, 3, 4
log = logging.getLogger("mmroute")


class State:
    def __init__(self, config, out, seed, log_x, allow_oracle):
        self.config_path = Path(config) if config else None
        self.out = Path(out) if out else None
        self.seed = seed
        self.log_x = log_x
        self.allow_oracle = allow_oracle

    def load(self) -> tuple[RunConfig, Path]:
        if self.config_path is None:
            raise ConfigError("--config is required for this command")
        cfg = RunConfig.from_file(self.config_path)
        if self.seed is not None:
            cfg.split_seed = self.seed
        if self.log_x is not None:
            cfg.log_x = self.log_x
        if self.allow_oracle:
            cfg.allow_oracle = True
        return cfg, self.config_path.parent

    def out_dir(self, cfg: RunConfig | None, base: Path | None) -> Path:
        if self.out is not None:
            return self.out
        if cfg is not None and base is not None:
            return base / cfg.out
        return Path("run")


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), help="INI run configuration.")
@click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Overrides the split (run) or workload (gen) seed.")
@click.option("--log-x/--no-log-x", "log_x", default=None, help="Log-scaled cost axis in figures.")
@click.option("--allow-oracle", is_flag=True, help="Permit the analysis-only oracle router.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config, out, seed, log_x, allow_oracle, verbose):
    """Offline cost-aware model routing benchmark."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = State(config, out, seed, log_x, allow_oracle)


def _workload_spec(section: dict, seed: int | None) -> WorkloadSpec:
    def arr(key, rows=False):
        if key not in section:
            return None
        text = section[key]
        if rows:
            return np.array([[float(x) for x in r.replace(",", " ").split()]
                             for r in text.split(";") if r.strip()])
        return np.array([float(x) for x in text.replace(",", " ").split()])

    kw = {}
    for key, conv in (("n", int), ("d", int), ("K", int), ("n_clusters", int),
                      ("separation", float), ("modality_salience", float), ("noise_sigma", float),
                      ("utility_sigma", float), ("n_datasets", int), ("missing_rate", float),
                      ("seed", int)):
        if key.lower() in section:
            kw[key] = conv(section[key.lower()])
    if "continuous" in section:
        kw["continuous"] = section["continuous"].strip().lower() in ("1", "true", "yes", "on")
    for key in ("cost_profile", "mixture"):
        if arr(key) is not None:
            kw[key] = arr(key)
    if arr("competence", rows=True) is not None:
        kw["competence"] = arr("competence", rows=True)
    if seed is not None:
        kw["seed"] = seed
    return WorkloadSpec(**kw)


@cli.command()
@click.pass_obj
def gen(state: State):
    """Generate a synthetic workload (outcomes, pool, embeddings, run config)."""
    section, cfg = {}, None
    if state.config_path is not None:
        cfg, _ = state.load()
        section = cfg.workload
    spec = _workload_spec(section, state.seed)
    out = state.out or Path("synthetic")
    out.mkdir(parents=True, exist_ok=True)
    w = gen_workload(spec)
    write_outcomes(out / "outcomes.csv", w.table)
    write_pool(out / "pool.csv", w.table.models)
    write_embeddings(out / "embeddings.mmre", w.embeddings)
    (out / "truth.json").write_text(json.dumps({
        "labels": w.truth.labels.tolist(),
        "competence": w.truth.competence.tolist(),
        "instance_ids": w.table.instance_ids,
    }), encoding="utf-8")
    run_cfg = RunConfig(outcomes="outcomes.csv", embeddings="embeddings.mmre", pool="pool.csv",
                        out="run") if cfg is None else cfg
    run_cfg.outcomes, run_cfg.embeddings, run_cfg.pool = "outcomes.csv", "embeddings.mmre", "pool.csv"
    if cfg is None:
        run_cfg.workload = {"n": str(spec.n), "d": str(spec.d), "K": str(spec.K),
                            "n_clusters": str(spec.n_clusters), "seed": str(spec.seed)}
    (out / "run.ini").write_text(run_cfg.resolved_text(), encoding="utf-8")
    click.echo(f"wrote n={spec.n} K={spec.K} d={spec.d} workload to {out}")


@cli.command()
@click.pass_obj
def ingest(state: State):
    """Validate outcome, pool and embedding files and write a report."""
    cfg, base = state.load()
    inputs = load_inputs(cfg, base)
    t = inputs.table
    obs = t.observed
    report = {
        "n": t.n, "K": t.K, "d": inputs.embeddings.dim,
        "models": t.model_ids,
        "datasets": {ds: int(len(t.dataset_rows(ds))) for ds in t.datasets()},
        "scenarios": dict(sorted(t.scenario_of().items())),
        "missing_rate": float(1.0 - obs.mean()),
        "missing_by_model": {m: float(1.0 - obs[:, j].mean()) for j, m in enumerate(t.model_ids)},
        "split": {k: len(getattr(inputs.split, k)) for k in ("train", "val", "test")},
        "test_by_dataset": {ds: int(len(t.dataset_rows(ds, inputs.split.rows("test"))))
                            for ds in t.datasets()},
    }
    out = state.out_dir(cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ingest_report.json").write_text(json.dumps(report, indent=1), encoding="utf-8")
    click.echo(f"n={t.n} K={t.K} d={inputs.embeddings.dim} datasets={', '.join(t.datasets())}")
    for ds, size in report["datasets"].items():
        click.echo(f"  {ds}: {size} instances ({report['test_by_dataset'][ds]} test)")
    click.echo(f"missing rate {report['missing_rate']:.4f}")


@cli.command("run")
@click.option("--no-plot", is_flag=True, help="Skip figure rendering.")
@click.pass_obj
def run_cmd(state: State, no_plot):
    """Fit routers, sweep cost weights, write metrics, frontiers and figures."""
    cfg, base = state.load()
    out = state.out_dir(cfg, base)
    results = run(cfg, out, base, plot=not no_plot)
    for r in results:
        m = r.report.overall
        click.echo(f"{r.name:<22} nAUC={fmt_value(m.nauc):>10}  Ps={fmt_value(m.peak_score):>10}"
                   f"  QNC={fmt_value(m.qnc):>10}" + ("  [analysis only]" if r.report.analysis_only else ""))
    click.echo(f"outputs in {out}")


@cli.command("transfer")
@click.option("--router", "routers", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False), help="Trained router file (repeatable).")
@click.option("--mask", type=click.Choice(["image", "text"]), default="image")
@click.pass_obj
def transfer_cmd(state: State, routers, mask):
    """Evaluate frozen routers with one modality zeroed out (no refit)."""
    cfg, base = state.load()
    out = state.out_dir(cfg, base)
    rows = transfer(routers, cfg, out, mask, base)
    for r in rows:
        click.echo(f"{r[0]:<24} {r[1]:<12} mask={mask}  Ps={r[3]} (unmasked {r[4]}, "
                   f"best single {r[6]} {r[5]})")


@cli.command()
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.pass_obj
def report(state: State, run_dir):
    """Print a run's metrics table and re-render its figures."""
    from .plotting import plot_from_run_dir
    run_dir = Path(run_dir) if run_dir else state.out
    if run_dir is None:
        raise ConfigError("report needs --run-dir or --out")
    rows = read_metrics_csv(run_dir / "metrics.csv")
    click.echo(f"{'router':<22} {'scope':<24} {'nAUC':>10} {'Ps':>10} {'QNC':>10}")
    for rec in rows:
        click.echo(f"{rec['router']:<22} {rec['scope']:<24} {fmt_value(rec['nauc']):>10} "
                   f"{fmt_value(rec['peak_score']):>10} {fmt_value(rec['qnc']):>10}")
    paths = plot_from_run_dir(run_dir, log_x=True if state.log_x is None else state.log_x)
    click.echo(f"rendered {len(paths)} figure(s) in {run_dir / 'figures'}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return EXIT_RUNTIME
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        return EXIT_VALIDATION
    except (ConfigError, OracleAccessError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
