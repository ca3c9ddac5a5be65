"""
End-to-end orchestration: probe -> select -> finetune -> predict -> report,
the alpha/beta sweep, the probing-strategy comparison and the staged
artifacts the CLI reads and writes.
"""
import copy
import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from constants import PROMPT_TEMPLATE, PROBE_STRATEGIES, REPORT_DECIMALS
from .checkpoint import save_checkpoint, load_checkpoint, model_digest
from .datakit import LabelCodec, load_jsonl, synth_generate, split, to_examples
from .ensemble import ensemble_predict, ensemble_error_bound
from .errors import InvalidArgument, ContractViolation, PipelineError
from .evalmetrics import accuracy, f1_scores, mcc, rmse
from .finetune import FinetuneConfig, finetune
from .model import LayeredModel, ModelConfig
from .probe import ProbeConfig, LayerMetricsTable, run_probe, classifier_for_selection
from .selection import SelectionConfig, SelectionResult, select_layers, select_all

logger = logging.getLogger(__name__)

PROBE_CHECKPOINT = 'probe.ckpt'
METRICS_FILE = 'metrics.json'
SELECTION_FILE = 'selection.json'
MODEL_CHECKPOINT = 'model.ckpt'
TRACE_FILE = 'trace.json'
PREDICTIONS_FILE = 'predictions.jsonl'
REPORT_FILE = 'report.json'
SWEEP_FILE = 'sweep.csv'
STRATEGIES_FILE = 'strategies.csv'


@dataclass
class ExperimentConfig:
    data_path: str = None
    synth: str = None
    size: int = 2000
    classes: int = 3
    noise: float = 0.0
    template: str = PROMPT_TEMPLATE
    fractions: tuple = (0.8, 0.1, 0.1)
    model: ModelConfig = field(default_factory=ModelConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    all_layers: bool = False
    seed: int = 0
    out: str = 'runs/latest'

    def to_dict(self):
        echo = asdict(self)
        echo['fractions'] = list(self.fractions)
        return echo


@dataclass
class PreparedData:
    codec: LabelCodec
    train: list
    validation: list
    test: list
    train_examples: list
    validation_examples: list
    test_examples: list

    def sizes(self):
        return {'train': len(self.train), 'validation': len(self.validation), 'test': len(self.test)}


@dataclass
class RunReport:
    config: dict
    data: dict
    probe: dict
    selection: dict
    training: dict
    test: dict
    per_layer_test: dict
    bound: dict
    parameters: dict
    model_digest: str

    def to_dict(self):
        return _rounded(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'


def _rounded(value):
    if isinstance(value, float):
        return round(value, REPORT_DECIMALS)
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    return value


def _write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix='.tmp-', dir=path.parent)
    with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(text)
    os.replace(tmp_name, path)
    return path


def write_json(path, payload):
    return _write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + '\n')


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"missing artifact: {path}")
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def write_csv(path, header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([_rounded(row[key]) for key in header])
    return _write_atomic(path, buffer.getvalue())


class StageTracker:
    """Current stage name plus every file written, for cleanup on failure"""

    def __init__(self, out):
        self.out = Path(out)
        self.stage = 'setup'
        self.written = []

    def enter(self, stage):
        self.stage = stage
        logger.info(f"Stage '{stage}'")

    def path(self, name):
        target = self.out / name
        self.written.append(target)
        return target

    def cleanup(self):
        for target in self.written:
            if target.exists():
                target.unlink()
                logger.debug(f"Removed partial output {target}")
        self.written = []


# Function to build the three splits as rendered prompts
def prepare_data(config):
    if config.data_path:
        records, codec = load_jsonl(config.data_path)
    elif config.synth:
        records = synth_generate(config.synth, config.size, config.classes, config.noise, config.seed)
        codec = LabelCodec.infer(records)
    else:
        raise InvalidArgument("no dataset: set data.path or data.synth")
    train, validation, test = split(records, config.fractions, config.seed, codec)
    if not train or not test:
        raise InvalidArgument("split left the train or test set empty")
    logger.info(f"Data: {len(train)} train / {len(validation)} validation / {len(test)} test ({codec.mode})")
    return PreparedData(
        codec, train, validation, test,
        to_examples(train, codec, config.template),
        to_examples(validation, codec, config.template),
        to_examples(test, codec, config.template),
    )


def probe_phase(config, data):
    """Fresh model plus the probing outcome; the model must come out untouched"""
    model = LayeredModel(config.model)
    before = model_digest(model)
    outcome = run_probe(model, data.train_examples, config.probe, data.codec.num_classes, data.codec.regression)
    if model_digest(model) != before:
        raise ContractViolation("probing modified model parameters")
    return model, outcome


def probe_summary(outcome):
    history = outcome.history
    return {
        'table': outcome.table.to_dict(),
        'initial_loss': list(history.initial),
        'final_loss': list(history.epochs[-1]) if history.epochs else [],
        'final_grad_norm': history.grad_norms[-1] if history.grad_norms else None,
    }


# Function to pick B, or every layer for the full-tuning baseline
def choose_layers(config, table):
    if config.all_layers:
        return select_all(table)
    return select_layers(table, config.selection)


def predict_examples(model, classifier, selection, records, examples, codec, strategy):
    """One prediction row per example: gold and predicted index, tie flag, per-layer votes"""
    rows = []
    for index, (record, example) in enumerate(zip(records, examples)):
        vote = ensemble_predict(model, classifier, model.tokenize(example.text), selection.selected, strategy)
        rows.append({
            'index': index,
            'label': example.target,
            'prediction': vote.prediction,
            'answer': str(record.answer),
            'predicted_answer': str(codec.decode(vote.prediction)),
            'tie': vote.tie,
            'votes': {str(l): v[0] for l, v in vote.layer_votes.items()},
        })
    return rows


def write_predictions(path, rows):
    return _write_atomic(path, ''.join(json.dumps(row, sort_keys=True) + '\n' for row in rows))


def read_predictions(path):
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"missing artifact: {path}")
    with open(path, 'r', encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]


def score_predictions(rows, selected, regression):
    """Ensemble and per-layer scores recomputed from prediction rows"""
    labels = [row['label'] for row in rows]
    preds = [row['prediction'] for row in rows]
    per_layer = {str(l): [row['votes'][str(l)] for row in rows] for l in selected}
    if regression:
        test = {'rmse': rmse(preds, labels), 'ensemble': 'average (extension of voting)'}
        layers = {l: {'rmse': rmse(v, labels)} for l, v in per_layer.items()}
        return test, layers
    micro, macro, _ = f1_scores(preds, labels)
    test = {
        'accuracy': accuracy(preds, labels),
        'f1_micro': micro,
        'f1_macro': macro,
        'mcc': mcc(preds, labels),
        'ties': sum(1 for row in rows if row['tie']),
        'ensemble': 'majority vote',
    }
    layers = {l: {'accuracy': accuracy(v, labels)} for l, v in per_layer.items()}
    return test, layers


def estimated_bound(model, classifier, selection, examples, strategy):
    """exp bound from mean validation error of the selected layers"""
    if classifier.regression or not examples:
        return {'estimated_bound': None, 'avg_validation_error': None, 'ensemble_size': len(selection.selected)}
    labels = [e.target for e in examples]
    votes = {l: [] for l in selection.selected}
    for example in examples:
        vote = ensemble_predict(model, classifier, model.tokenize(example.text), selection.selected, strategy)
        for l, (cls, _) in vote.layer_votes.items():
            votes[l].append(cls)
    errors = {l: 1.0 - accuracy(v, labels) for l, v in votes.items()}
    avg_error = float(np.mean(list(errors.values())))
    result = {
        'estimated_bound': None,
        'avg_validation_error': avg_error,
        'ensemble_size': len(selection.selected),
        'layer_validation_error': {str(l): e for l, e in errors.items()},
    }
    if avg_error >= 0.5:
        logger.warning(f"Average validation error {avg_error:.3f} >= 0.5; the ensemble bound does not apply")
        return result
    result['estimated_bound'] = ensemble_error_bound(avg_error, len(selection.selected))
    return result


def parameter_summary(model, classifier, selection):
    per_layer = model.layer_parameter_count()
    head = classifier.parameter_count()
    trainable = len(selection.selected) * per_layer + head
    total = model.parameter_count() + head
    return {
        'model_total': model.parameter_count(),
        'per_layer': per_layer,
        'classifier': head,
        'trainable': trainable,
        'trainable_fraction': trainable / total,
    }


def compile_report(config, data, probe_info, selection, training, model, classifier, rows):
    test, per_layer = score_predictions(rows, selection.selected, data.codec.regression)
    bound = estimated_bound(model, classifier, selection, data.validation_examples, config.probe.strategy)
    return RunReport(
        config=config.to_dict(),
        data={'mode': data.codec.mode, 'classes': data.codec.to_dict()['classes'], 'sizes': data.sizes()},
        probe=probe_info,
        selection=selection.to_dict(),
        training=training,
        test=test,
        per_layer_test=per_layer,
        bound=bound,
        parameters=parameter_summary(model, classifier, selection),
        model_digest=model_digest(model, classifier),
    )


def finish_pipeline(config, data, model, outcome, tracker):
    """Select, finetune, predict and report from a shared probing result.

    Works on copies so one probing phase can feed many runs.
    """
    # Selection from the probing table
    tracker.enter('select')
    selection = choose_layers(config, outcome.table)
    write_json(tracker.path(SELECTION_FILE), selection.to_dict())

    # Fine-tune copies so the shared probing model stays pristine
    tracker.enter('finetune')
    model = copy.deepcopy(model)
    classifier = copy.deepcopy(classifier_for_selection(outcome, selection.selected))
    ft_config = replace(config.finetune, strategy=config.probe.strategy)
    model, classifier, trace = finetune(model, classifier, selection, data.train_examples, ft_config)
    training = trace.summary()
    save_checkpoint(model, classifier, tracker.path(MODEL_CHECKPOINT), extra={
        'codec': data.codec.to_dict(), 'selection': selection.to_dict(), 'strategy': config.probe.strategy,
    })
    write_json(tracker.path(TRACE_FILE), training)

    # Majority vote over B on the test split
    tracker.enter('predict')
    rows = predict_examples(model, classifier, selection, data.test, data.test_examples,
                            data.codec, config.probe.strategy)
    write_predictions(tracker.path(PREDICTIONS_FILE), rows)

    tracker.enter('report')
    report = compile_report(config, data, probe_summary(outcome), selection, training, model, classifier, rows)
    _write_atomic(tracker.path(REPORT_FILE), report.to_json())
    logger.info(f"Report written to {tracker.out / REPORT_FILE}")
    return report


# Function to run a stage body and remove its partial outputs on failure
def _guarded(tracker, action):
    try:
        return action()
    except PipelineError:
        tracker.cleanup()
        raise
    except Exception as exc:
        tracker.cleanup()
        raise PipelineError(tracker.stage, exc) from exc


def run_pipeline(config):
    """Probe, select, finetune, predict and report; every artifact lands in config.out"""
    tracker = StageTracker(config.out)

    # Data and probing once, then the shared tail
    def run():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('probe')
        model, outcome = probe_phase(config, data)
        write_json(tracker.path(METRICS_FILE), probe_summary(outcome))
        return finish_pipeline(config, data, model, outcome, tracker)

    return _guarded(tracker, run)


def sweep_alpha_beta(config, grid):
    """One row per (alpha, beta) cell; probing runs once and is shared"""
    grid = list(grid)
    if not grid:
        raise InvalidArgument("the sweep grid is empty")
    tracker = StageTracker(config.out)

    def shared():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('probe')
        model, outcome = probe_phase(config, data)
        write_json(tracker.path(METRICS_FILE), probe_summary(outcome))
        return data, model, outcome

    data, model, outcome = _guarded(tracker, shared)
    # Each cell reselects and fine-tunes from the same probing outcome
    rows = []
    for alpha, beta in grid:
        cell = replace(
            config,
            selection=SelectionConfig(alpha, beta, config.selection.strategy),
            out=str(Path(config.out) / f"alpha{alpha}_beta{beta}"),
        )
        cell_tracker = StageTracker(cell.out)
        row = {'alpha': alpha, 'beta': beta, 'layers': None, 'selected': '', 'trainable_parameters': None,
               'accuracy': None, 'f1': None, 'status': 'ok'}
        try:
            report = _guarded(cell_tracker, lambda: finish_pipeline(cell, data, model, outcome, cell_tracker))
        except PipelineError as exc:
            logger.error(f"Sweep cell alpha={alpha} beta={beta} failed: {exc}")
            row['status'] = f"failed: {exc.stage}"
            rows.append(row)
            continue
        row.update({
            'layers': len(report.selection['selected']),
            'selected': ' '.join(str(l) for l in report.selection['selected']),
            'trainable_parameters': report.parameters['trainable'],
            'accuracy': report.test.get('accuracy', -report.test.get('rmse', 0.0)),
            'f1': report.test.get('f1_macro', -report.test.get('rmse', 0.0)),
        })
        rows.append(row)
    header = ['alpha', 'beta', 'layers', 'selected', 'trainable_parameters', 'accuracy', 'f1', 'status']
    write_csv(Path(config.out) / SWEEP_FILE, header, rows)
    return rows


def compare_probe_strategies(config):
    """Per-layer (m1, m2) for LT, SaT and AvT on identical data and seeds"""
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('data')
        data = prepare_data(config)
        rows = []
        for strategy in PROBE_STRATEGIES:
            tracker.enter(f'probe-{strategy}')
            cell = replace(config, probe=replace(config.probe, strategy=strategy))
            _, outcome = probe_phase(cell, data)
            for entry in outcome.table.rows():
                rows.append({'layer': entry['layer'], 'strategy': strategy, 'm1': entry['m1'], 'm2': entry['m2']})
        write_csv(tracker.path(STRATEGIES_FILE), ['layer', 'strategy', 'm1', 'm2'], rows)
        return rows

    return _guarded(tracker, run)


def mean_by_strategy(rows):
    means = {}
    for strategy in PROBE_STRATEGIES:
        values = [row['m1'] for row in rows if row['strategy'] == strategy]
        means[strategy] = float(np.mean(values)) if values else None
    return means


# Staged entry points: each reads the previous stage's artifacts from config.out

def stage_probe(config):
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('probe')
        model, outcome = probe_phase(config, data)
        save_checkpoint(model, outcome.classifier, tracker.path(PROBE_CHECKPOINT))
        if outcome.layer_classifiers is not None:
            for layer, layer_classifier in enumerate(outcome.layer_classifiers, start=1):
                save_checkpoint(model, layer_classifier, tracker.path(f"probe-layer-{layer}.ckpt"))
        summary = probe_summary(outcome)
        write_json(tracker.path(METRICS_FILE), summary)
        return summary

    return _guarded(tracker, run)


def stage_select(config):
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('select')
        table = LayerMetricsTable.from_dict(read_json(tracker.out / METRICS_FILE)['table'])
        selection = choose_layers(config, table)
        write_json(tracker.path(SELECTION_FILE), selection.to_dict())
        return selection

    return _guarded(tracker, run)


def _staged_classifier(config, out, model_classifier, table, selected):
    if not config.probe.independent:
        return model_classifier
    best = max(selected, key=lambda l: (table.m1[l - 1] + table.m2[l - 1], -l))
    _, classifier = load_checkpoint(out / f"probe-layer-{best}.ckpt")
    return classifier


def stage_finetune(config):
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('finetune')
        model, classifier = load_checkpoint(tracker.out / PROBE_CHECKPOINT)
        selection = SelectionResult.from_dict(read_json(tracker.out / SELECTION_FILE))
        table = LayerMetricsTable.from_dict(read_json(tracker.out / METRICS_FILE)['table'])
        classifier = _staged_classifier(config, tracker.out, classifier, table, selection.selected)
        ft_config = replace(config.finetune, strategy=config.probe.strategy)
        model, classifier, trace = finetune(model, classifier, selection, data.train_examples, ft_config)
        training = trace.summary()
        save_checkpoint(model, classifier, tracker.path(MODEL_CHECKPOINT), extra={
            'codec': data.codec.to_dict(), 'selection': selection.to_dict(), 'strategy': config.probe.strategy,
        })
        write_json(tracker.path(TRACE_FILE), training)
        return training

    return _guarded(tracker, run)


def stage_predict(config):
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('predict')
        model, classifier = load_checkpoint(tracker.out / MODEL_CHECKPOINT)
        selection = SelectionResult.from_dict(read_json(tracker.out / SELECTION_FILE))
        rows = predict_examples(model, classifier, selection, data.test, data.test_examples,
                                data.codec, config.probe.strategy)
        write_predictions(tracker.path(PREDICTIONS_FILE), rows)
        return rows

    return _guarded(tracker, run)


def stage_report(config):
    tracker = StageTracker(config.out)

    def run():
        tracker.enter('data')
        data = prepare_data(config)
        tracker.enter('report')
        model, classifier = load_checkpoint(tracker.out / MODEL_CHECKPOINT)
        selection = SelectionResult.from_dict(read_json(tracker.out / SELECTION_FILE))
        probe_info = read_json(tracker.out / METRICS_FILE)
        training = read_json(tracker.out / TRACE_FILE)
        rows = read_predictions(tracker.out / PREDICTIONS_FILE)
        report = compile_report(config, data, probe_info, selection, training, model, classifier, rows)
        _write_atomic(tracker.path(REPORT_FILE), report.to_json())
        return report

    return _guarded(tracker, run)
