"""Synthetic workloads with planted cluster/competence structure.

Each instance belongs to a latent cluster.  The cluster is visible in the
image embedding with weight ``modality_salience`` and in the text
embedding with weight ``1 - modality_salience``; the remainder of each
vector points in an independent random direction.  Model ``j`` succeeds on
a cluster-``h`` instance with probability ``competence[h, j]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import Frontier, OperatingPoint, default_lambda_grid, evaluate_policy, pareto_envelope
from .fusion import EmbeddingSet, l2_normalize_rows
from .outcome_store import Instance, ModelMeta, OutcomeTable
from .routers.base import point_mass, select_rows

# $/1M output tokens of a ten-model zoo spanning three orders of magnitude
REFERENCE_PRICES = (10.00, 5.00, 15.00, 2.00, 0.50, 0.70, 0.65, 0.07, 0.04, 0.03)
COST_JITTER = 0.05
SCENARIOS = ("ocr", "general_vqa", "math_reasoning")


def default_cost_profile(K: int) -> np.ndarray:
    prices = np.array([REFERENCE_PRICES[j % len(REFERENCE_PRICES)] for j in range(K)])
    return prices / prices.max()


@dataclass(frozen=True, eq=False)
class WorkloadSpec:
    n: int = 1000
    d: int = 32
    K: int = 4
    n_clusters: int = 4
    separation: float = 1.0
    modality_salience: float = 0.5
    competence: np.ndarray | None = None
    cost_profile: np.ndarray | None = None
    noise_sigma: float = 0.3
    mixture: np.ndarray | None = None
    continuous: bool = False
    utility_sigma: float = 0.1
    n_datasets: int = 1
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.K < 1 or self.n_clusters < 1:
            raise ValueError("n, d, K and n_clusters must be positive")
        if self.n_clusters > self.n:
            raise ValueError(f"infeasible workload: {self.n_clusters} clusters for n={self.n}")
        if not 0.0 <= self.modality_salience <= 1.0:
            raise ValueError("modality_salience must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        comp = self.competence
        if comp is None:
            comp = _default_competence(self.n_clusters, self.K)
        comp = np.asarray(comp, dtype=np.float64)
        if comp.shape != (self.n_clusters, self.K) or comp.min() < 0 or comp.max() > 1:
            raise ValueError("competence must be a clusters x K matrix in [0, 1]")
        cost = default_cost_profile(self.K) if self.cost_profile is None else self.cost_profile
        cost = np.asarray(cost, dtype=np.float64)
        if cost.shape != (self.K,) or np.any(cost <= 0):
            raise ValueError("cost_profile must hold K positive costs")
        mix = np.full(self.n_clusters, 1.0 / self.n_clusters) if self.mixture is None else self.mixture
        mix = np.asarray(mix, dtype=np.float64)
        if mix.shape != (self.n_clusters,) or mix.min() < 0 or not np.isclose(mix.sum(), 1.0):
            raise ValueError("mixture must be a probability vector over clusters")
        object.__setattr__(self, "competence", comp)
        object.__setattr__(self, "cost_profile", cost)
        object.__setattr__(self, "mixture", mix)


def _default_competence(H: int, K: int) -> np.ndarray:
    # each cluster has one specialist; everyone else is mediocre
    comp = np.full((H, K), 0.3)
    for h in range(H):
        comp[h, h % K] = 0.95
    return comp


@dataclass(eq=False)
class GroundTruth:
    labels: np.ndarray
    competence: np.ndarray
    text_centroids: np.ndarray
    image_centroids: np.ndarray
    rotation: np.ndarray | None = None


@dataclass(eq=False)
class Workload:
    embeddings: EmbeddingSet
    table: OutcomeTable
    truth: GroundTruth
    spec: WorkloadSpec = field(repr=False)


def _unit(rng, shape):
    return l2_normalize_rows(rng.standard_normal(shape))


def _centroids(spec: WorkloadSpec):
    rng = np.random.default_rng([spec.seed, 0])
    return _unit(rng, (spec.n_clusters, spec.d)), _unit(rng, (spec.n_clusters, spec.d))


def _pool(K: int, cost: np.ndarray) -> tuple[ModelMeta, ...]:
    return tuple(ModelMeta(f"m{j:02d}", f"model-{j}",
                           "commercial" if cost[j] >= 0.1 else "open_weight",
                           float(cost[j] * 15.0)) for j in range(K))


def _generate(spec: WorkloadSpec, instance_seed, rotation: np.ndarray | None = None,
              id_prefix: str = "s") -> Workload:
    mu_t, mu_i = _centroids(spec)
    rng = np.random.default_rng(instance_seed)
    n, d, s = spec.n, spec.d, spec.modality_salience
    labels = rng.choice(spec.n_clusters, size=n, p=spec.mixture)
    if spec.mixture.min() > 0 and n >= spec.n_clusters:
        labels[: spec.n_clusters] = np.arange(spec.n_clusters)  # every cluster populated
    noise = spec.noise_sigma / np.sqrt(d)

    def modality(mu, weight):
        g = _unit(rng, (n, d))
        raw = spec.separation * (weight * mu[labels] + (1.0 - weight) * g)
        raw += noise * rng.standard_normal((n, d))
        return l2_normalize_rows(raw)

    img = modality(mu_i, s)
    txt = modality(mu_t, 1.0 - s)
    if rotation is not None:
        txt, img = txt @ rotation.T, img @ rotation.T

    comp = spec.competence[labels]
    if spec.continuous:
        util = np.clip(comp + spec.utility_sigma * rng.standard_normal(comp.shape), 0.0, 1.0)
    else:
        util = (rng.random(comp.shape) < comp).astype(np.float64)
    cost = spec.cost_profile[None, :] * (1.0 + COST_JITTER * rng.uniform(-1, 1, (n, spec.K)))
    if spec.missing_rate > 0:
        miss = rng.random((n, spec.K)) < spec.missing_rate
        miss[:, int(np.argmax(spec.cost_profile))] = False  # keep one full column
        util[miss] = np.nan
        cost[miss] = np.nan

    width = len(str(n - 1))
    instances = []
    for i in range(n):
        ds = i % spec.n_datasets
        instances.append(Instance(f"{id_prefix}{i:0{width}d}", f"synth{ds}",
                                  SCENARIOS[ds % len(SCENARIOS)], (1, 1)))
    table = OutcomeTable(_pool(spec.K, spec.cost_profile), tuple(instances), util, cost)
    truth = GroundTruth(labels, spec.competence, mu_t, mu_i, rotation)
    return Workload(EmbeddingSet(txt, img, normalized=True), table, truth, spec)


def gen_workload(spec: WorkloadSpec) -> Workload:
    """Embeddings, outcome table and ground truth; a pure function of ``spec``."""
    return _generate(spec, [spec.seed, 1])


def plane_rotation(d: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` inside a random 2-plane of R^d."""
    if d < 2:
        raise ValueError("rotation needs d >= 2")
    basis, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    a, b = basis[:, 0], basis[:, 1]
    ca, sa = np.cos(angle), np.sin(angle)
    return (np.eye(d) + (ca - 1.0) * (np.outer(a, a) + np.outer(b, b))
            + sa * (np.outer(b, a) - np.outer(a, b)))


def gen_shift(base: WorkloadSpec, mixture=None, angle: float = 0.0, seed: int | None = None,
              n: int | None = None) -> Workload:
    """A second workload with the same centroids and competence as ``base``.

    Cluster frequencies follow ``mixture`` (default: unchanged) and both
    embeddings are rotated by ``angle`` in a random 2-plane.  Instances are
    drawn from a fresh stream keyed by ``seed``.
    """
    spec = replace(base, mixture=base.mixture if mixture is None else np.asarray(mixture, float),
                   n=base.n if n is None else n)
    seed = base.seed + 1 if seed is None else seed
    rng = np.random.default_rng([base.seed, 2, seed])
    rot = plane_rotation(base.d, angle, rng) if angle else None
    return _generate(spec, [base.seed, 3, seed], rotation=rot, id_prefix="t")


def oracle_points(table: OutcomeTable, rows, grid=None) -> list[OperatingPoint]:
    """Cost-aware ground-truth selection at each cost weight."""
    rows = np.asarray(rows, dtype=int)
    if not table.observed[rows].all():
        raise ValueError("oracle frontier needs fully observed rows")
    grid = default_lambda_grid() if grid is None else np.asarray(grid, float)
    U, C = table.utilities[rows], table.costs[rows]
    pts = []
    for lam in grid:
        perf, cost = evaluate_policy(point_mass(select_rows(U, C, float(lam)), table.K), table, rows)
        pts.append(OperatingPoint(float(lam), cost, perf, int(rows.size)))
    return pts


def oracle_frontier(table: OutcomeTable, rows, grid=None) -> Frontier:
    return pareto_envelope(oracle_points(table, rows, grid))
