"""Run configuration and the end-to-end benchmark harness used by the CLI."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import (DatasetMetrics, MetricsReport, OperatingPoint, aggregate, dataset_metrics,
                         default_lambda_grid, fmt_value, pareto_envelope, sweep_lambda,
                         write_frontier_csv, write_metrics_csv)
from .fusion import EmbeddingSet, Featurizer, FusionConfig, load_embeddings, mask_modality
from .outcome_store import (OutcomeTable, SplitSpec, best_single_model, load_outcomes, load_pool,
                            make_splits)
from .routers import OracleAccessError, RouterConfig, make_router
from .routers.io import load_router, save_router

log = logging.getLogger(__name__)

SEEDED_KINDS = {"kmeans", "mlp", "mlp_mf"}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


@dataclass
class RunConfig:
    outcomes: str | None = None
    embeddings: str | None = None
    pool: str | None = None
    out: str = "run"
    normalize_costs: bool = False
    train_fraction: float = 0.2
    val_fraction_of_train: float = 0.25
    split_seed: int = 0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    routers: list[RouterConfig] = field(default_factory=lambda: [
        RouterConfig(kind=k) for k in ("random", "kmeans", "knn", "linear", "mlp",
                                       "linear_mf", "mlp_mf")])
    lambda_grid: list[float] = field(default_factory=lambda: default_lambda_grid().tolist())
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    allow_oracle: bool = False
    single_point_nauc: bool = False
    nauc_ratio: bool = False
    log_x: bool = True
    fusion_ablation: list[str] = field(default_factory=list)
    workload: dict = field(default_factory=dict)
    source_text: str = ""

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
            return cls._from_parser(cp, text)
        except (configparser.Error, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def _from_parser(cls, cp, text):
        cfg = cls(source_text=text)
        if cp.has_section("paths"):
            p = cp["paths"]
            cfg.outcomes = p.get("outcomes")
            cfg.embeddings = p.get("embeddings")
            cfg.pool = p.get("pool")
            cfg.out = p.get("out", cfg.out)
            cfg.normalize_costs = p.getboolean("normalize_costs", False)
        if cp.has_section("split"):
            s = cp["split"]
            cfg.train_fraction = s.getfloat("train_fraction", cfg.train_fraction)
            cfg.val_fraction_of_train = s.getfloat("val_fraction_of_train", cfg.val_fraction_of_train)
            cfg.split_seed = s.getint("seed", cfg.split_seed)
        if cp.has_section("fusion"):
            f = cp["fusion"]
            cfg.fusion = FusionConfig("adaptive", f.getfloat("temperature", 5.0),
                                      f.getfloat("alpha", 0.5), f.getfloat("beta", 0.5))
        if cp.has_section("sweep"):
            s = cp["sweep"]
            grid = s.get("grid", "default").strip()
            if grid != "default":
                cfg.lambda_grid = sorted(_floats(grid))
            cfg.single_point_nauc = s.getboolean("single_point_nauc", False)
            cfg.nauc_ratio = s.getboolean("nauc_ratio", False)
        if cp.has_section("run"):
            r = cp["run"]
            if "seeds" in r:
                cfg.seeds = _ints(r["seeds"])
            cfg.allow_oracle = r.getboolean("allow_oracle", False)
            cfg.log_x = r.getboolean("log_x", True)
            cfg.fusion_ablation = r.get("fusion_ablation", "").replace(",", " ").split()
            if "routers" in r:
                cfg.routers = [cls._router(cp, name) for name in r["routers"].replace(",", " ").split()]
        if cp.has_section("workload"):
            cfg.workload = dict(cp["workload"])
        return cfg

    @staticmethod
    def _router(cp, name: str) -> RouterConfig:
        kind, _, feature = name.partition(":")
        kw: dict = {"kind": kind, "feature": feature or None}
        sec = f"router.{kind}"
        if cp.has_section(sec):
            s = cp[sec]
            for key, conv in (("clusters", int), ("neighbors", int), ("rank", int),
                              ("ridge_penalty", float), ("mf_hidden", int), ("learn_rate", float),
                              ("epochs", int), ("batch_size", int), ("n_init", int),
                              ("calibration", str)):
                if key in s:
                    kw[key] = conv(s[key])
            if "hidden_dims" in s:
                kw["hidden_dims"] = tuple(_ints(s["hidden_dims"]))
            if "cost_aware" in s:
                kw["cost_aware"] = s.getboolean("cost_aware")
        return RouterConfig(**kw)

    def resolved_text(self) -> str:
        """The effective configuration, including defaults, as INI text."""
        cp = configparser.ConfigParser()
        cp["paths"] = {"outcomes": self.outcomes or "", "embeddings": self.embeddings or "",
                       "pool": self.pool or "", "out": self.out,
                       "normalize_costs": str(self.normalize_costs).lower()}
        cp["split"] = {"train_fraction": repr(self.train_fraction),
                       "val_fraction_of_train": repr(self.val_fraction_of_train),
                       "seed": str(self.split_seed)}
        cp["fusion"] = {"temperature": repr(self.fusion.temperature),
                        "alpha": repr(self.fusion.interaction_alpha),
                        "beta": repr(self.fusion.interaction_beta)}
        cp["sweep"] = {"grid": " ".join(repr(x) for x in self.lambda_grid),
                       "single_point_nauc": str(self.single_point_nauc).lower(),
                       "nauc_ratio": str(self.nauc_ratio).lower()}
        cp["run"] = {"routers": " ".join(r.kind + (f":{r.feature}" if r.feature else "")
                                         for r in self.routers),
                     "seeds": " ".join(map(str, self.seeds)),
                     "allow_oracle": str(self.allow_oracle).lower(),
                     "log_x": str(self.log_x).lower(),
                     "fusion_ablation": " ".join(self.fusion_ablation)}
        for r in self.routers:
            d = r.to_dict()
            d.pop("kind"), d.pop("feature"), d.pop("seed")
            cp[f"router.{r.kind}"] = {k: (" ".join(map(str, v)) if isinstance(v, list) else str(v))
                                      for k, v in d.items()}
        if self.workload:
            cp["workload"] = dict(self.workload)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


# ---------------------------------------------------------------------------


@dataclass
class Inputs:
    table: OutcomeTable
    embeddings: EmbeddingSet
    split: SplitSpec


def load_inputs(cfg: RunConfig, base: Path | None = None) -> Inputs:
    base = base or Path(".")
    if not (cfg.outcomes and cfg.embeddings and cfg.pool):
        raise ConfigError("[paths] needs outcomes, embeddings and pool")
    pool = load_pool(base / cfg.pool)
    table = load_outcomes(base / cfg.outcomes, pool, normalize=cfg.normalize_costs)
    emb = load_embeddings(base / cfg.embeddings, expected_n=table.n)
    split = make_splits(table, cfg.train_fraction, cfg.val_fraction_of_train, cfg.split_seed)
    return Inputs(table, emb, split)


def fit_router(rcfg: RouterConfig, inputs: Inputs, fusion: FusionConfig, allow_oracle=False):
    """Fit featurizer statistics and the router on the training split."""
    train = inputs.split.rows("train")
    val = inputs.split.rows("val")
    fcfg = FusionConfig(rcfg.feature_mode, fusion.temperature, fusion.interaction_alpha,
                        fusion.interaction_beta)
    feat = Featurizer(fcfg).fit(inputs.embeddings.subset(train))
    X = feat.transform(inputs.embeddings.subset(train)).z
    X_val = feat.transform(inputs.embeddings.subset(val)).z if len(val) else None
    router = make_router(rcfg, allow_oracle=allow_oracle)
    router.fit(X, inputs.table, train, X_val=X_val, val_rows=val)
    return router, feat


def evaluate_by_dataset(router, feat: Featurizer, inputs: Inputs, grid, single_point=False,
                        mask: str | None = None, which: str = "test"):
    """Per-dataset operating points and metrics on one split."""
    rows_all = inputs.split.rows(which)
    emb = inputs.embeddings if mask is None else mask_modality(inputs.embeddings, mask)
    out = {}
    for ds in inputs.table.datasets():
        rows = inputs.table.dataset_rows(ds, rows_all)
        if rows.size == 0:
            continue
        X = feat.transform(emb.subset(rows)).z
        points = sweep_lambda(router, X, inputs.table, rows, grid)
        ref = best_single_model(inputs.table, rows)
        out[ds] = (points, dataset_metrics(points, ref, single_point), ref)
    return out


def _mean_metrics(items: list[DatasetMetrics]) -> DatasetMetrics:
    def avg(vals, skip):
        vals = [v for v in vals if v is not None] if skip else vals
        if not vals:
            return None
        return math.inf if math.inf in vals else float(np.mean(vals))
    return DatasetMetrics(avg([m.nauc for m in items], False) if all(m.nauc is not None for m in items)
                          else None,
                          avg([m.peak_score for m in items], False),
                          avg([m.qnc for m in items], False),
                          avg([m.nauc_ratio for m in items], True))


def _mean_points(runs: list[list[OperatingPoint]]) -> list[OperatingPoint]:
    return [OperatingPoint(p0.lam, float(np.mean([r[k].mean_cost for r in runs])),
                           float(np.mean([r[k].mean_perf for r in runs])), p0.n_instances)
            for k, p0 in enumerate(runs[0])]


@dataclass
class RouterResult:
    name: str
    report: MetricsReport
    points: dict[str, list[OperatingPoint]]
    per_seed: dict[int, dict[str, list[OperatingPoint]]]
    references: dict


def run_router(rcfg: RouterConfig, inputs: Inputs, cfg: RunConfig, out: Path | None = None
               ) -> RouterResult:
    seeds = cfg.seeds if rcfg.kind in SEEDED_KINDS else [cfg.seeds[0] if cfg.seeds else 0]
    per_seed: dict[int, dict] = {}
    metrics_by_seed: dict[int, dict[str, DatasetMetrics]] = {}
    refs = {}
    for seed in seeds:
        rc = RouterConfig.from_dict({**rcfg.to_dict(), "seed": seed})
        router, feat = fit_router(rc, inputs, cfg.fusion, cfg.allow_oracle)
        if out is not None and not router.analysis_only:
            (out / "routers").mkdir(parents=True, exist_ok=True)
            save_router(out / "routers" / f"{rcfg.name}_seed{seed}.mmrr", router, feat)
        res = evaluate_by_dataset(router, feat, inputs, cfg.lambda_grid, cfg.single_point_nauc)
        per_seed[seed] = {ds: v[0] for ds, v in res.items()}
        metrics_by_seed[seed] = {ds: v[1] for ds, v in res.items()}
        refs = {ds: v[2] for ds, v in res.items()}
        analysis_only = router.analysis_only
    datasets = sorted(metrics_by_seed[seeds[0]])
    per_ds = {ds: _mean_metrics([metrics_by_seed[s][ds] for s in seeds]) for ds in datasets}
    report = aggregate(rcfg.name, per_ds, inputs.table.scenario_of(), analysis_only)
    points = {ds: _mean_points([per_seed[s][ds] for s in seeds]) for ds in datasets}
    return RouterResult(rcfg.name, report, points, per_seed, refs)


def run(cfg: RunConfig, out: Path, base: Path | None = None, plot: bool = True) -> list[RouterResult]:
    """Full benchmark run: split, fit, sweep, metrics, exports, figures."""
    from .plotting import plot_dataset_frontiers

    if any(r.kind == "oracle" for r in cfg.routers) and not cfg.allow_oracle:
        raise OracleAccessError("config requests the oracle router; it reads test-split outcomes "
                                "and needs --allow-oracle (analysis only)")
    out.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(cfg, base)
    (out / "config.resolved.ini").write_text(cfg.resolved_text(), encoding="utf-8")
    if cfg.source_text:
        (out / "config.source.ini").write_text(cfg.source_text, encoding="utf-8")
    (out / "split.json").write_text(inputs.split.to_json(), encoding="utf-8")

    configs = list(cfg.routers)
    for kind in cfg.fusion_ablation:
        for mode in ("equal", "adaptive"):
            rc = RouterConfig(kind=kind, feature=mode)
            base_rc = next((r for r in cfg.routers if r.kind == kind), None)
            if base_rc is not None:
                rc = RouterConfig.from_dict({**base_rc.to_dict(), "feature": mode})
            if rc.name not in {c.name for c in configs}:
                configs.append(rc)

    results = []
    for rc in configs:
        log.info("router %s", rc.name)
        results.append(run_router(rc, inputs, cfg, out))

    frontier_rows = [(r.name, ds, p) for r in results for ds in sorted(r.points) for p in r.points[ds]]
    write_frontier_csv(out / "frontier.csv", frontier_rows)
    (out / "points").mkdir(exist_ok=True)
    for r in results:
        for seed, by_ds in sorted(r.per_seed.items()):
            write_frontier_csv(out / "points" / f"{r.name}_seed{seed}.csv",
                               [(r.name, ds, p) for ds in sorted(by_ds) for p in by_ds[ds]])
    env_rows = []
    for r in results:
        for ds in sorted(r.points):
            env = pareto_envelope(r.points[ds])
            env_rows += [(r.name, ds, c, v) for c, v in env.points]
    with (out / "envelopes.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["router", "dataset", "mean_cost", "mean_perf"])
        w.writerows([(a, b, fmt_value(c), fmt_value(v)) for a, b, c, v in env_rows])
    write_metrics_csv(out / "metrics.csv", [r.report for r in results], with_ratio=cfg.nauc_ratio)
    write_references(out / "single_models.csv", inputs, results[0].references if results else {})
    flags = {r.name: {"analysis_only": r.report.analysis_only, "nauc_excluded": r.report.nauc_excluded}
             for r in results}
    (out / "flags.json").write_text(json.dumps(flags, indent=1, sort_keys=True), encoding="utf-8")
    if cfg.fusion_ablation:
        write_fusion_deltas(out / "fusion_deltas.csv", results, cfg.fusion_ablation)
    if plot:
        plot_dataset_frontiers(out, inputs.table, inputs.split, results, log_x=cfg.log_x)
    return results


def write_references(path, inputs: Inputs, refs) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "model_id", "mean_cost", "mean_perf", "is_best"])
        for ds in sorted(refs):
            ref = refs[ds]
            for m, u, c in zip(inputs.table.models, ref.mean_utility, ref.mean_cost):
                w.writerow([ds, m.model_id, fmt_value(c), fmt_value(u),
                            int(m.model_id == ref.model_id)])


def write_fusion_deltas(path, results: list[RouterResult], kinds: list[str]) -> None:
    """Adaptive-minus-equal deltas on the overall macro metrics."""
    by_name = {r.name: r.report.overall for r in results}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "delta_nauc", "delta_peak_score", "qnc_change"])
        for kind in kinds:
            eq, ad = by_name[f"{kind}[equal]"], by_name[f"{kind}[adaptive]"]
            d_nauc = None if eq.nauc is None or ad.nauc is None else ad.nauc - eq.nauc
            w.writerow([kind, fmt_value(d_nauc), fmt_value(ad.peak_score - eq.peak_score),
                        f"{fmt_value(eq.qnc)}->{fmt_value(ad.qnc)}"])


def transfer(router_paths, cfg: RunConfig, out: Path, mask: str, base: Path | None = None):
    """Evaluate frozen routers with one modality masked; no refitting."""
    inputs = load_inputs(cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in router_paths:
        router, feat = load_router(path, expected_dim=inputs.embeddings.dim)
        name = Path(path).stem
        plain = evaluate_by_dataset(router, feat, inputs, cfg.lambda_grid, cfg.single_point_nauc)
        masked = evaluate_by_dataset(router, feat, inputs, cfg.lambda_grid, cfg.single_point_nauc,
                                     mask=mask)
        for ds in sorted(masked):
            m, p, ref = masked[ds][1], plain[ds][1], masked[ds][2]
            rows.append([name, ds, mask, fmt_value(m.peak_score), fmt_value(p.peak_score),
                         fmt_value(ref.p_best), ref.model_id, fmt_value(m.nauc), fmt_value(m.qnc)])
    with (out / f"transfer_{mask}.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["router", "dataset", "mask", "peak_score_masked", "peak_score_unmasked",
                    "best_single_perf", "best_single_model", "nauc_masked", "qnc_masked"])
        w.writerows(rows)
    return rows
