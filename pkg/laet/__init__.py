"""
Layer-wise adaptive ensemble tuning package.
"""
# Errors
from .errors import (
    LaetError, InvalidArgument, ContractViolation, NumericError, NumericDivergence,
    DatasetParseError, CorruptCheckpoint, PipelineError,
)

# Numerics and model
from .numerics import Tensor, ComputationRecord, backward, softmax, cross_entropy, finite_diff_gradient
from .model import (
    Tokenizer, ModelConfig, LayeredModel, LayerRepresentations,
    extract_representation, set_trainable,
)

# Method stages
from .probe import (
    ProbeClassifier, ProbeDataset, ProbeConfig, LayerMetricsTable, LabeledExample,
    extract_probe_dataset, train_probe, evaluate_layer, probe_all_layers, run_probe,
)
from .selection import (
    SelectionConfig, SelectionResult, compute_margins,
    select_dominance, select_threshold, select_first_std, select_layers,
)
from .finetune import FinetuneConfig, TrainingTrace, combined_loss, finetune
from .ensemble import EnsembleVote, predict_layer, majority_vote, ensemble_error_bound
from .evalmetrics import ConfusionMatrix, accuracy, f1_scores, mcc, rmse

# Data, persistence and orchestration
from .datakit import DatasetRecord, LabelCodec, load_jsonl, write_jsonl, format_prompt, split, synth_generate
from .checkpoint import save_checkpoint, load_checkpoint, model_digest
from .harness import ExperimentConfig, RunReport, run_pipeline, sweep_alpha_beta, compare_probe_strategies

__all__ = [
    # Errors
    'LaetError', 'InvalidArgument', 'ContractViolation', 'NumericError', 'NumericDivergence',
    'DatasetParseError', 'CorruptCheckpoint', 'PipelineError',
    # Numerics and model
    'Tensor', 'ComputationRecord', 'backward', 'softmax', 'cross_entropy', 'finite_diff_gradient',
    'Tokenizer', 'ModelConfig', 'LayeredModel', 'LayerRepresentations',
    'extract_representation', 'set_trainable',
    # Method stages
    'ProbeClassifier', 'ProbeDataset', 'ProbeConfig', 'LayerMetricsTable', 'LabeledExample',
    'extract_probe_dataset', 'train_probe', 'evaluate_layer', 'probe_all_layers', 'run_probe',
    'SelectionConfig', 'SelectionResult', 'compute_margins',
    'select_dominance', 'select_threshold', 'select_first_std', 'select_layers',
    'FinetuneConfig', 'TrainingTrace', 'combined_loss', 'finetune',
    'EnsembleVote', 'predict_layer', 'majority_vote', 'ensemble_error_bound',
    'ConfusionMatrix', 'accuracy', 'f1_scores', 'mcc', 'rmse',
    # Data, persistence and orchestration
    'DatasetRecord', 'LabelCodec', 'load_jsonl', 'write_jsonl', 'format_prompt', 'split', 'synth_generate',
    'save_checkpoint', 'load_checkpoint', 'model_digest',
    'ExperimentConfig', 'RunReport', 'run_pipeline', 'sweep_alpha_beta', 'compare_probe_strategies',
]
