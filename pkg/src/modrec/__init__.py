"""Recommenders over item content, plus the benchmark harness around them.

Light submodules (datasets, features, keywords, neighbors, evaluation,
factor) import eagerly; ``graph`` pulls in torch and loads on first access.
"""

__version__ = "0.1.0"

from . import binio, datasets, evaluation, features, keywords, neighbors  # noqa: F401
from .base import BaseRecommender, TrainingDivergedError  # noqa: F401
from .datasets import (  # noqa: F401
    DatasetStats,
    InteractionDataset,
    RawInteraction,
    compute_stats,
    kcore_filter,
    load_interactions,
    split_holdout,
)
from .evaluation import RankingRequest, evaluate_topk, paired_significance  # noqa: F401
from .features import (  # noqa: F401
    FeatureTable,
    align_to_dataset,
    concat_features,
    fit_moments,
    gen_gaussian_noise,
    gen_multivariate_noise,
    load_features,
    save_features,
)
from .keywords import (  # noqa: F401
    AttributeMatrix,
    PromptSchema,
    build_attribute_matrix,
    build_vocabulary,
    encode_one_hot,
    normalize_keyword,
    parse_structured_answer,
)
from .neighbors import AttributeItemKNN, ItemKNN, MostPop, RandomRec  # noqa: F401


def __getattr__(name):
    if name in ("graph", "factor", "experiments", "cli"):
        import importlib

        return importlib.import_module(f".{name}", __name__)
    if name in ("BPRMF", "VBPR"):
        from . import factor

        return getattr(factor, name)
    if name in ("LightGCN", "LATTICE", "FREEDOM", "BM3"):
        from . import graph

        return getattr(graph, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
