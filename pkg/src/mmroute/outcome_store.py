"""Offline outcome table: models, instances, utilities and costs.

The table is the whole evaluation environment.  Nothing downstream ever
calls a model; routers are scored by indexing into ``utilities`` and
``costs``.  Missing cells are NaN.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OUTCOME_HEADER = ["instance_id", "dataset", "scenario", "m_text", "m_img",
                  "model_id", "utility", "cost"]
POOL_HEADER = ["model_id", "display_name", "tier", "price_per_million_output_tokens",
               "context_length", "modalities"]
KNOWN_SCENARIOS = ("ocr", "general_vqa", "math_reasoning")
TIERS = ("commercial", "open_weight")


class ValidationError(ValueError):
    """Input data violates the outcome/pool file contract.

    ``line`` is the 1-based line number in the offending file (header is
    line 1) when the problem can be pinned to a row.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ModelMeta:
    model_id: str
    display_name: str = ""
    tier: str = "open_weight"
    price_per_million_output_tokens: float = 0.0
    context_length: int | None = None
    supported_modalities: frozenset = frozenset({"text", "image"})
    # not priced by default; hooks for richer cost models
    price_per_million_input_tokens: float | None = None
    price_per_million_image_tokens: float | None = None

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValidationError(f"model {self.model_id!r}: unknown tier {self.tier!r}")
        if not self.price_per_million_output_tokens >= 0:
            raise ValidationError(f"model {self.model_id!r}: negative price")
        if self.context_length is not None and self.context_length <= 0:
            raise ValidationError(f"model {self.model_id!r}: context_length must be positive")
        bad = set(self.supported_modalities) - {"text", "image"}
        if bad:
            raise ValidationError(f"model {self.model_id!r}: unknown modalities {sorted(bad)}")


@dataclass(frozen=True)
class Instance:
    instance_id: str
    dataset: str
    scenario: str
    modality_mask: tuple[int, int] = (1, 1)
    token_counts: dict | None = None

    def __post_init__(self):
        if self.modality_mask not in {(1, 1), (1, 0), (0, 1)}:
            raise ValidationError(
                f"instance {self.instance_id!r}: modality mask {self.modality_mask} "
                "must have at least one bit set")


@dataclass(frozen=True, eq=False)
class OutcomeTable:
    models: tuple[ModelMeta, ...]
    instances: tuple[Instance, ...]
    utilities: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        n, k = len(self.instances), len(self.models)
        u = np.asarray(self.utilities, dtype=np.float64)
        c = np.asarray(self.costs, dtype=np.float64)
        if u.shape != (n, k) or c.shape != (n, k):
            raise ValidationError(
                f"matrix shapes {u.shape}/{c.shape} do not match n={n}, K={k}")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate model_id in pool")
        iids = [i.instance_id for i in self.instances]
        if len(set(iids)) != len(iids):
            raise ValidationError("duplicate instance_id in table")
        bad_u = ~np.isnan(u) & ((u < 0) | (u > 1))
        if bad_u.any():
            i, j = np.argwhere(bad_u)[0]
            raise ValidationError(
                f"utility {u[i, j]} outside [0,1] at ({iids[i]}, {ids[j]})")
        bad_c = ~np.isnan(c) & (c < 0)
        if bad_c.any():
            i, j = np.argwhere(bad_c)[0]
            raise ValidationError(f"negative cost {c[i, j]} at ({iids[i]}, {ids[j]})")
        u.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "costs", c)

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def K(self) -> int:
        return len(self.models)

    @property
    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.models]

    @property
    def instance_ids(self) -> list[str]:
        return [i.instance_id for i in self.instances]

    @property
    def observed(self) -> np.ndarray:
        """Boolean n x K mask of cells where both utility and cost exist."""
        return ~(np.isnan(self.utilities) | np.isnan(self.costs))

    def datasets(self) -> list[str]:
        return sorted({i.dataset for i in self.instances})

    def dataset_rows(self, dataset: str, rows: Sequence[int] | None = None) -> np.ndarray:
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        return np.array([r for r in rows if self.instances[r].dataset == dataset], dtype=int)

    def scenario_of(self) -> dict[str, str]:
        return {i.dataset: i.scenario for i in self.instances}

    def modality_masks(self) -> np.ndarray:
        return np.array([i.modality_mask for i in self.instances], dtype=int).reshape(-1, 2)

    def subset(self, rows: Sequence[int]) -> "OutcomeTable":
        rows = np.asarray(rows, dtype=int)
        return OutcomeTable(self.models, tuple(self.instances[r] for r in rows),
                            self.utilities[rows], self.costs[rows])


# ---------------------------------------------------------------------------
# pool file


def _parse_modalities(text: str) -> frozenset:
    parts = [p.strip() for p in text.split("+") if p.strip()]
    return frozenset(parts) if parts else frozenset({"text", "image"})


def load_pool(path) -> list[ModelMeta]:
    path = Path(path)
    pool = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:len(POOL_HEADER)]] != POOL_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(POOL_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < len(POOL_HEADER):
                raise ValidationError(f"expected {len(POOL_HEADER)} fields, got {len(row)}", lineno)
            mid, name, tier, price, ctx, mods = (f.strip() for f in row[:6])
            try:
                meta = ModelMeta(
                    model_id=mid, display_name=name or mid, tier=tier or "open_weight",
                    price_per_million_output_tokens=float(price or 0.0),
                    context_length=int(ctx) if ctx else None,
                    supported_modalities=_parse_modalities(mods))
            except ValidationError as exc:
                raise ValidationError(str(exc), lineno) from None
            except ValueError as exc:
                raise ValidationError(f"bad numeric field ({exc})", lineno) from None
            pool.append(meta)
    if len({m.model_id for m in pool}) != len(pool):
        raise ValidationError(f"{path}: duplicate model_id")
    if not pool:
        raise ValidationError(f"{path}: empty model pool")
    return pool


def write_pool(path, pool: Iterable[ModelMeta]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POOL_HEADER)
        for m in pool:
            mods = "+".join(x for x in ("text", "image") if x in m.supported_modalities)
            w.writerow([m.model_id, m.display_name, m.tier,
                        repr(float(m.price_per_million_output_tokens)),
                        "" if m.context_length is None else m.context_length, mods])


# ---------------------------------------------------------------------------
# outcome file


def _parse_optional(field_: str) -> float:
    field_ = field_.strip()
    return math.nan if field_ == "" else float(field_)


def load_outcomes(path, pool: Sequence[ModelMeta], normalize: bool = False) -> OutcomeTable:
    """Read a long-format outcome file into a dense table.

    Rows are sorted by ``instance_id``; columns follow ``pool`` order.
    Cells with no row, or with an empty field, are missing (NaN).  With
    ``normalize=True`` the cost column is treated as raw and rescaled with
    :func:`normalize_costs` over per-model mean raw cost.
    """
    path = Path(path)
    col = {m.model_id: j for j, m in enumerate(pool)}
    inst: dict[str, Instance] = {}
    cells: dict[tuple[str, int], tuple[float, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OUTCOME_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(OUTCOME_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(OUTCOME_HEADER):
                raise ValidationError(
                    f"expected {len(OUTCOME_HEADER)} fields, got {len(row)}", lineno)
            iid, ds, sc, mt, mi, mid, ut, co = (f.strip() for f in row)
            if not iid:
                raise ValidationError("empty instance_id", lineno)
            if mid not in col:
                raise ValidationError(f"model_id {mid!r} not in model pool", lineno)
            try:
                mask = (int(mt), int(mi))
                u = _parse_optional(ut)
                c = _parse_optional(co)
            except ValueError as exc:
                raise ValidationError(f"malformed field ({exc})", lineno) from None
            if not math.isnan(u) and not 0.0 <= u <= 1.0:
                raise ValidationError(
                    f"utility {ut} outside [0,1] for cell ({iid}, {mid})", lineno)
            if not math.isnan(c) and not c >= 0.0:
                raise ValidationError(f"negative cost {co} for cell ({iid}, {mid})", lineno)
            try:
                instance = Instance(iid, ds, sc, mask)
            except ValidationError as exc:
                raise ValidationError(str(exc), lineno) from None
            prev = inst.setdefault(iid, instance)
            if (prev.dataset, prev.scenario, prev.modality_mask) != (ds, sc, mask):
                raise ValidationError(f"instance {iid!r} metadata disagrees with earlier row", lineno)
            key = (iid, col[mid])
            if key in cells:
                raise ValidationError(f"duplicate (instance, model) pair ({iid}, {mid})", lineno)
            cells[key] = (u, c)

    ids = sorted(inst)
    row_of = {iid: i for i, iid in enumerate(ids)}
    u = np.full((len(ids), len(pool)), np.nan)
    c = np.full((len(ids), len(pool)), np.nan)
    for (iid, j), (uu, cc) in cells.items():
        u[row_of[iid], j] = uu
        c[row_of[iid], j] = cc
    if normalize:
        scale = _model_mean_costs(c)
        c = c / normalization_scale(scale)
    return OutcomeTable(tuple(pool), tuple(inst[i] for i in ids), u, c)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_outcomes(path, table: OutcomeTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_HEADER)
        for i, inst in enumerate(table.instances):
            for j, m in enumerate(table.models):
                u, c = table.utilities[i, j], table.costs[i, j]
                if math.isnan(u) and math.isnan(c):
                    continue
                w.writerow([inst.instance_id, inst.dataset, inst.scenario,
                            inst.modality_mask[0], inst.modality_mask[1],
                            m.model_id, _fmt(u), _fmt(c)])


# ---------------------------------------------------------------------------
# costs


def _model_mean_costs(costs: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        counts = (~np.isnan(costs)).sum(axis=0)
        sums = np.nansum(costs, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def normalization_scale(raw) -> float:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0 or np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("raw costs must be finite and nonnegative")
    top = float(raw.max())
    if top <= 0:
        raise ValueError("cannot normalize costs: all raw costs are zero")
    return top


def normalize_costs(raw) -> np.ndarray:
    """Scale raw per-model costs so the most expensive model costs exactly 1."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw / normalization_scale(raw)


def token_cost(output_tokens: int, price_per_million: float) -> float:
    """USD charge for ``output_tokens`` at a $/1M-token price."""
    if output_tokens < 0 or price_per_million < 0:
        raise ValueError("token counts and prices must be nonnegative")
    return output_tokens * price_per_million / 1e6


def instance_raw_cost(meta: ModelMeta, output_tokens: int, input_tokens: int = 0,
                      image_tokens: int = 0) -> float:
    # Only output tokens are priced unless the pool supplies the other rates.
    cost = token_cost(output_tokens, meta.price_per_million_output_tokens)
    if meta.price_per_million_input_tokens is not None:
        cost += token_cost(input_tokens, meta.price_per_million_input_tokens)
    if meta.price_per_million_image_tokens is not None:
        cost += token_cost(image_tokens, meta.price_per_million_image_tokens)
    return cost


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int
    train_fraction: float = 0.2
    val_fraction_of_train: float = 0.25
    instance_ids: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if tr & va or tr & te or va & te:
            raise ValueError("split index sets overlap")

    @property
    def fit_rows(self) -> np.ndarray:
        return np.array(self.train, dtype=int)

    def rows(self, which: str) -> np.ndarray:
        return np.array(getattr(self, which), dtype=int)

    def to_json(self) -> str:
        ids = list(self.instance_ids)
        doc = {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "val_fraction_of_train": self.val_fraction_of_train,
            "train": [ids[i] for i in self.train] if ids else list(self.train),
            "val": [ids[i] for i in self.val] if ids else list(self.val),
            "test": [ids[i] for i in self.test] if ids else list(self.test),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str, table: OutcomeTable) -> "SplitSpec":
        doc = json.loads(text)
        row_of = {iid: i for i, iid in enumerate(table.instance_ids)}
        try:
            sets = {k: tuple(sorted(row_of[i] for i in doc[k])) for k in ("train", "val", "test")}
        except KeyError as exc:
            raise ValidationError(f"split references unknown instance {exc}") from None
        spec = cls(sets["train"], sets["val"], sets["test"], int(doc["seed"]),
                   float(doc["train_fraction"]), float(doc["val_fraction_of_train"]),
                   tuple(table.instance_ids))
        if len(spec.train) + len(spec.val) + len(spec.test) != table.n:
            raise ValidationError("split does not cover every instance")
        return spec


def _apportion(sizes: Sequence[int], fraction: float) -> list[int]:
    # largest-remainder allocation so the total is round(sum * fraction)
    total = int(round(sum(sizes) * fraction))
    exact = [s * fraction for s in sizes]
    take = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - take[i]), i))
    for i in order[: total - sum(take)]:
        take[i] += 1
    return take


def make_splits(table: OutcomeTable, train_fraction: float = 0.2,
                val_fraction_of_train: float = 0.25, seed: int = 0) -> SplitSpec:
    """Seeded dataset-stratified train/val/test split.

    ``round(n * train_fraction)`` instances go to train+val; val is carved
    out of that share; everything else is test.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if not 0 <= val_fraction_of_train < 1:
        raise ValueError(f"val_fraction_of_train must be in [0, 1), got {val_fraction_of_train}")
    rng = np.random.default_rng(seed)
    groups = [table.dataset_rows(ds) for ds in table.datasets()]
    n_train = _apportion([len(g) for g in groups], train_fraction)
    shuffled = [g[rng.permutation(len(g))] for g in groups]
    n_val = _apportion(n_train, val_fraction_of_train)
    train, val, test = [], [], []
    for g, nt, nv in zip(shuffled, n_train, n_val):
        val.extend(g[:nv].tolist())
        train.extend(g[nv:nt].tolist())
        test.extend(g[nt:].tolist())
    return SplitSpec(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), int(seed),
                     float(train_fraction), float(val_fraction_of_train),
                     tuple(table.instance_ids))


# ---------------------------------------------------------------------------
# single-model references


@dataclass(frozen=True)
class SingleModelReference:
    model_id: str
    p_best: float
    c_best: float
    c_min: float
    c_max: float
    mean_utility: tuple[float, ...] = ()
    mean_cost: tuple[float, ...] = ()


def best_single_model(table: OutcomeTable, rows: Sequence[int] | None = None) -> SingleModelReference:
    """Most accurate fully-observed model on ``rows`` plus the cost range.

    Ties on mean utility go to the cheaper model.  ``c_min``/``c_max`` are
    the mean costs of the cheapest and most expensive single-model policies.
    """
    rows = np.arange(table.n) if rows is None else np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ValueError("no rows to evaluate")
    full = table.observed[rows].all(axis=0)
    if not full.any():
        raise ValueError("no model is fully observed on these rows")
    mu = table.utilities[rows].mean(axis=0)
    mc = table.costs[rows].mean(axis=0)
    cand = np.flatnonzero(full)
    best = min(cand, key=lambda j: (-mu[j], mc[j], j))
    return SingleModelReference(
        model_id=table.models[best].model_id, p_best=float(mu[best]), c_best=float(mc[best]),
        c_min=float(mc[cand].min()), c_max=float(mc[cand].max()),
        mean_utility=tuple(float(x) if f else math.nan for x, f in zip(mu, full)),
        mean_cost=tuple(float(x) if f else math.nan for x, f in zip(mc, full)))
