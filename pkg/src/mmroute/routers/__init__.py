from .base import (DEFAULT_FEATURES, ROUTER_KINDS, Prediction, Router, RouterConfig,
                   point_mass, select, select_rows)
from .baselines import OracleAccessError, OracleRouter, RandomRouter
from .neighbors import KMeansRouter, KNNRouter, kmeans, kmeans_pp, lloyd
from .nn import MLPMFRouter, MLPRouter, TrainingDivergence
from .regression import LinearMFRouter, LinearRouter, ridge_fit, truncated_svd_basis

ROUTER_CLASSES = {
    "random": RandomRouter,
    "oracle": OracleRouter,
    "kmeans": KMeansRouter,
    "knn": KNNRouter,
    "linear": LinearRouter,
    "mlp": MLPRouter,
    "linear_mf": LinearMFRouter,
    "mlp_mf": MLPMFRouter,
}


def make_router(config: RouterConfig, allow_oracle: bool = False) -> Router:
    if config.kind == "oracle":
        return OracleRouter(config, allow_ground_truth=allow_oracle)
    return ROUTER_CLASSES[config.kind](config)


__all__ = [
    "DEFAULT_FEATURES", "ROUTER_KINDS", "ROUTER_CLASSES", "Prediction", "Router", "RouterConfig",
    "point_mass", "select", "select_rows", "make_router", "OracleAccessError", "OracleRouter",
    "RandomRouter", "KMeansRouter", "KNNRouter", "kmeans", "kmeans_pp", "lloyd", "MLPRouter",
    "MLPMFRouter", "TrainingDivergence", "LinearRouter", "LinearMFRouter", "ridge_fit",
    "truncated_svd_basis",
]
