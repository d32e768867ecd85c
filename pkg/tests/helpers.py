"""Shared fixtures builders for the test suite."""

from __future__ import annotations

import numpy as np

from mmroute.evaluation import best_single_model, dataset_metrics, default_lambda_grid, sweep_lambda
from mmroute.experiment import Inputs, evaluate_by_dataset, fit_router
from mmroute.fusion import EmbeddingSet, FusionConfig
from mmroute.outcome_store import Instance, ModelMeta, OutcomeTable, make_splits
from mmroute.routers import RouterConfig
from mmroute.synthgen import WorkloadSpec, gen_workload


def tiny_table(U, C, datasets=None, scenarios=None):
    U = np.asarray(U, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n, K = U.shape
    models = tuple(ModelMeta(f"m{j}", f"m{j}", "open_weight", 1.0 + j) for j in range(K))
    datasets = datasets or ["d0"] * n
    scenarios = scenarios or ["s0"] * n
    inst = tuple(Instance(f"i{i:05d}", datasets[i], scenarios[i], (1, 1)) for i in range(n))
    return OutcomeTable(models, inst, U, C)


def random_embeddings(n, d, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((n, d))
    i = rng.standard_normal((n, d))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    i /= np.linalg.norm(i, axis=1, keepdims=True)
    return EmbeddingSet(t, i, normalized=True)


def planted_spec(seed=0, n=2000, salience=0.5, **kw):
    """Four clusters, one perfect specialist each, generalist capped at 0.8."""
    comp = np.array([
        [1.0, 0.2, 0.2, 0.2, 0.8],
        [0.2, 1.0, 0.2, 0.2, 0.8],
        [0.2, 0.2, 1.0, 0.2, 0.8],
        [0.2, 0.2, 0.2, 1.0, 0.8],
    ])
    kw.setdefault("cost_profile", np.array([0.1, 0.15, 0.2, 0.25, 1.0]))
    return WorkloadSpec(n=n, d=kw.pop("d", 32), K=5, n_clusters=4, competence=comp,
                        modality_salience=salience, seed=seed, **kw)


def inputs_for(workload, seed=0, train_fraction=0.2, val_fraction=0.25):
    split = make_splits(workload.table, train_fraction, val_fraction, seed)
    return Inputs(workload.table, workload.embeddings, split)


def routed_metrics(inputs, kind, feature=None, mask=None, single_point=False, **kw):
    """Fit one router on the training split and score it on test."""
    rcfg = RouterConfig(kind=kind, feature=feature, **kw)
    router, feat = fit_router(rcfg, inputs, FusionConfig(), allow_oracle=kind == "oracle")
    res = evaluate_by_dataset(router, feat, inputs, default_lambda_grid(), single_point, mask=mask)
    return res, router, feat
