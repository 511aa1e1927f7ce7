"""Zero-shot sketch-based image retrieval with a Wasserstein cross-modal
semantic network, in plain numpy.

Submodules:

- :mod:`wadcmsn.nn` — dense MLP substrate, RMSprop, weight clipping
- :mod:`wadcmsn.losses` — adversarial, cycle, classification and
  identity-matching losses with analytic gradients
- :mod:`wadcmsn.semantics` — taxonomy similarities, text vectors and the
  auto-encoder that fuses them into per-class codes
- :mod:`wadcmsn.data` — feature files, zero-shot splits, batching and a
  synthetic fixture
- :mod:`wadcmsn.trainer` — the alternating training loop and checkpoints
- :mod:`wadcmsn.retrieval` — ranking, AP / mAP / Prec@k, 1-D Wasserstein
- :mod:`wadcmsn.cli` — the ``wadcmsn`` command
"""
from .data import (FeatureRecord, SyntheticSpec, ZeroShotSplit, batch_iter, gen_synthetic,
                   load_features, make_split, save_features)
from .errors import (CheckpointError, ConfigError, IncompatibleCheckpointError, NumericError,
                     ParseError, ShapeError, StaleTapeError, ValidationError, WadCmsnError)
from .losses import Batch, LossReport, LossWeights, aggregate, loss_and_grads
from .model import Architecture, ModelBundle, build_bundle
from .retrieval import (average_precision, build_index, evaluate, mean_ap, precision_at_k,
                        retrieve, wasserstein_1d)
from .semantics import (SemanticTable, Taxonomy, TextEmbeddingTable, build_semantic_table,
                        fit_combiner, jiang_conrath_similarity, path_similarity)
from .trainer import TrainConfig, checkpoint_load, checkpoint_save, train

__version__ = "0.1.0"

__all__ = [
    "Architecture", "Batch", "CheckpointError", "ConfigError", "FeatureRecord",
    "IncompatibleCheckpointError", "LossReport", "LossWeights", "ModelBundle",
    "NumericError", "ParseError", "SemanticTable", "ShapeError", "StaleTapeError",
    "SyntheticSpec", "Taxonomy", "TextEmbeddingTable", "TrainConfig", "ValidationError",
    "WadCmsnError", "ZeroShotSplit", "aggregate", "average_precision", "batch_iter",
    "build_bundle", "build_index", "build_semantic_table", "checkpoint_load",
    "checkpoint_save", "evaluate", "fit_combiner", "gen_synthetic",
    "jiang_conrath_similarity", "load_features", "loss_and_grads", "make_split",
    "mean_ap", "path_similarity", "precision_at_k", "retrieve", "save_features", "train",
    "wasserstein_1d",
]
