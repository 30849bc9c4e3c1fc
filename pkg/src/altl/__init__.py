"""Batch active learning for long-tailed multi-label classification."""

from .acquisition import (
    AcquisitionConfig,
    select_batch_altl,
    select_batch_coreset,
    select_batch_maxentropy,
    select_batch_random,
)
from .clustering import APConfig, ClusterResult, affinity_propagation, centroids
from .data import (
    Dataset,
    Example,
    LabelVocabulary,
    Pool,
    SynthConfig,
    label_frequencies,
    load_dataset,
    save_dataset,
    split,
    synth_generate,
)
from .engine import (
    ExperimentConfig,
    ModelArch,
    RunResult,
    SimulatedOracle,
    pca_projection,
    run_experiment,
    run_single,
    sweep_lambda,
    write_results,
)
from .metrics import MetricsRecord, f1, labels_discovered, lrap
from .model import (
    ModelConfig,
    ModelParams,
    TrainConfig,
    features,
    init,
    loss,
    predict_labels,
    scores,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
