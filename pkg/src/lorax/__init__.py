"""Class-incremental image attribution with per-task low-rank adapter
feature extractors over one frozen backbone, a growing unified classifier,
herding-based exemplar rehearsal, and continual-learning evaluation."""

from .backbone import AdapterCombo, Backbone, BackboneConfig, SiteKind, WeightSite, build_backbone, list_sites
from .engine import (
    FinetuneClassifier,
    FullRankExpansionClassifier,
    LoraxClassifier,
    OracleClassifier,
    RunRecord,
    Scenario,
    Strategy,
    StrategyKind,
    run_oracle,
    run_scenario,
)
from .errors import (
    ConfigurationError,
    DataError,
    InputError,
    LoraxError,
    ManifestError,
    StateError,
    UndefinedMetricError,
)
from .expansion import ExpandingClassifier, FullRankNetwork, LoraxNetwork
from .lora import AdapterSet, LoraAdapter, adapted_forward, count_all, count_trainable, init_adapter_set, merge
from .losses import (
    DivTargetMap,
    LossConfig,
    build_div_target_map,
    classification_loss,
    diversity_loss,
    total_loss,
)
from .metrics import (
    AccuracyMatrix,
    MultiRealMap,
    average_accuracy,
    average_accuracy_final,
    backward_transfer,
    metrics_summary,
    multi_real_correct,
    task_accuracy,
)
from .rehearsal import ExemplarBuffer, herd_order, training_set
from .data import FingerprintSpec, TaskSpec, generate_stream, load_manifest, preprocess

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
