"""Offline cost-aware routing over a pool of multimodal models."""

from .evaluation import (Frontier, OperatingPoint, aggregate, curve_value, default_lambda_grid,
                         evaluate_policy, nauc, pareto_envelope, peak_score, qnc, sweep_lambda)
from .fusion import (EmbeddingSet, Featurizer, FusionConfig, adaptive_fuse, equal_fuse,
                     load_embeddings, mask_modality, modality_confidence, write_embeddings)
from .outcome_store import (Instance, ModelMeta, OutcomeTable, SplitSpec, ValidationError,
                            best_single_model, load_outcomes, load_pool, make_splits,
                            normalize_costs, token_cost, write_outcomes, write_pool)
from .routers import RouterConfig, make_router, select

__version__ = "0.1.0"
