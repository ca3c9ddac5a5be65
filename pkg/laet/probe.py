"""
Layer probing: one shared classifier F_phi trained on every layer's
representations, then scored layer by layer.
"""
import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.preprocessing import StandardScaler

from constants import probe_hidden_widths
from .errors import InvalidArgument, ContractViolation, NumericError, NumericDivergence
from .evalmetrics import accuracy, f1_scores, mcc, rmse
from .model import extract_representation
from .numerics import Tensor, ComputationRecord, backward, global_grad_norm

logger = logging.getLogger(__name__)


@dataclass
class LabeledExample:
    """A rendered prompt with its class index (or scalar target)"""
    text: str
    target: float


class ProbeClassifier:
    """Three affine maps d -> 128 -> 64 -> k with ReLU after the first two.

    Inputs go through a per-layer standardization first. Its shift and scale
    are fitted once on probe-train representations and never trained, so the
    one shared head sees every layer (and every pooling) on the same footing.
    """

    def __init__(self, input_dim, num_outputs, seed=0, regression=False, scaled_layers=None):
        if regression:
            num_outputs = 1
        if input_dim < 1 or num_outputs < 1:
            raise InvalidArgument("probe dimensions must be positive")
        self.input_dim = input_dim
        self.num_outputs = num_outputs
        self.regression = regression
        rng = np.random.default_rng(seed)
        widths = (input_dim,) + probe_hidden_widths + (num_outputs,)
        self.params = {}
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"w{index}"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                              requires_grad=True, name=f"classifier.w{index}")
            self.params[f"b{index}"] = Tensor(rng.uniform(-bound, bound, fan_out),
                                              requires_grad=True, name=f"classifier.b{index}")
        # identity until fit_scaling runs; checkpoints restore the fitted shape
        self.scaling = None
        if scaled_layers:
            self.scaling = {
                'shift': Tensor(np.zeros((scaled_layers, input_dim)), name='classifier.input_shift'),
                'inv_scale': Tensor(np.ones((scaled_layers, input_dim)), name='classifier.input_inv_scale'),
            }

    @property
    def scaled_layers(self):
        return None if self.scaling is None else self.scaling['shift'].shape[0]

    def fit_scaling(self, layer_representations):
        """Fit one StandardScaler per layer on N x d representation matrices"""
        shifts, inv_scales = [], []
        for reps in layer_representations:
            scaler = StandardScaler().fit(np.asarray(reps, dtype=np.float64))
            shifts.append(scaler.mean_)
            inv_scales.append(1.0 / scaler.scale_)
        self.scaling = {
            'shift': Tensor(np.array(shifts), name='classifier.input_shift'),
            'inv_scale': Tensor(np.array(inv_scales), name='classifier.input_inv_scale'),
        }
        return self

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        for name, tensor in self.params.items():
            yield f"classifier.{name}", tensor

    def named_buffers(self):
        """Fitted, never-trained tensors that still belong in a checkpoint"""
        if self.scaling is not None:
            yield 'classifier.input_shift', self.scaling['shift']
            yield 'classifier.input_inv_scale', self.scaling['inv_scale']

    def parameter_count(self):
        return sum(t.size for t in self.params.values())

    def _standardize(self, rec, x, layer):
        if self.scaling is None:
            return x
        if layer is None or not 1 <= layer <= self.scaled_layers:
            raise ContractViolation(f"scaled probe head needs a layer in 1..{self.scaled_layers}, got {layer}")
        shift = Tensor(self.scaling['shift'].data[layer - 1])
        inv_scale = Tensor(self.scaling['inv_scale'].data[layer - 1])
        return rec.mul(rec.sub(x, shift), inv_scale)

    def forward(self, rec, x, layer=None):
        p = self.params
        x = self._standardize(rec, x, layer)
        h = rec.relu(rec.add(rec.matmul(x, p['w1']), p['b1']))
        h = rec.relu(rec.add(rec.matmul(h, p['w2']), p['b2']))
        return rec.add(rec.matmul(h, p['w3']), p['b3'])

    def loss(self, rec, x, targets, layer=None):
        out = self.forward(rec, x, layer)
        if self.regression:
            return rec.mean_squared_error(out, targets)
        return rec.softmax_cross_entropy(out, np.asarray(targets, dtype=np.int64))

    def outputs(self, representations, layer=None):
        """Logits (or scalar predictions) for an N x d array, no recording"""
        rec = ComputationRecord.inference()
        return self.forward(rec, Tensor(np.atleast_2d(representations)), layer).data


@dataclass
class ProbeDataset:
    """Per-layer representation matrices R_1..R_L sharing one label vector"""
    layers: list
    labels: np.ndarray
    split: str = 'probe-train'

    def __post_init__(self):
        n = len(self.labels)
        if any(r.shape[0] != n for r in self.layers):
            raise InvalidArgument("every layer must hold one representation per label")

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def size(self):
        return len(self.labels)

    def check_layer(self, layer):
        if not 1 <= layer <= self.num_layers:
            raise InvalidArgument(f"layer {layer} outside 1..{self.num_layers}")


@dataclass
class LayerMetricsTable:
    m1: list
    m2: list
    m1_name: str = 'accuracy'
    m2_name: str = 'f1'

    @property
    def num_layers(self):
        return len(self.m1)

    def rows(self):
        return [{'layer': l, 'm1': a, 'm2': b}
                for l, (a, b) in enumerate(zip(self.m1, self.m2), start=1)]

    def to_dict(self):
        return {'m1_name': self.m1_name, 'm2_name': self.m2_name, 'rows': self.rows()}

    @classmethod
    def from_dict(cls, data):
        rows = sorted(data['rows'], key=lambda r: r['layer'])
        return cls([r['m1'] for r in rows], [r['m2'] for r in rows], data['m1_name'], data['m2_name'])


@dataclass
class ProbeConfig:
    epochs: int = 200
    learning_rate: float = 2e-4
    batch_size: int = 32
    seed: int = 0
    strategy: str = 'lt'
    metric: str = 'f1'
    independent: bool = False
    validation_fraction: float = 0.2
    schedule_t0: float = None

    def __post_init__(self):
        finite = (self.learning_rate, self.validation_fraction, self.schedule_t0 or 1.0)
        if not all(math.isfinite(value) for value in finite):
            raise InvalidArgument("learning rate, validation fraction and schedule must be finite")
        if self.learning_rate <= 0:
            raise InvalidArgument("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch size must be positive")
        if self.metric not in ('f1', 'mcc'):
            raise InvalidArgument(f"unknown metric '{self.metric}'")


@dataclass
class ProbeHistory:
    """initial[l]: loss before any update; epochs[e][l]: mean batch loss"""
    initial: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)


@dataclass
class ProbeOutcome:
    table: LayerMetricsTable
    classifier: ProbeClassifier
    history: ProbeHistory
    train: ProbeDataset
    validation: ProbeDataset
    layer_classifiers: list = None


def extract_probe_dataset(model, data, strategy='lt', split='probe-train'):
    """Run M in inference mode over every example and keep all L layers"""
    if not data:
        raise InvalidArgument("cannot probe an empty dataset")
    per_layer = [[] for _ in range(model.num_layers)]
    for example in data:
        reps = model.forward_all_layers(model.tokenize(example.text))
        for layer in range(1, model.num_layers + 1):
            per_layer[layer - 1].append(extract_representation(reps, layer, strategy))
    labels = np.array([example.target for example in data])
    return ProbeDataset([np.array(rows) for rows in per_layer], labels, split)


def learning_rate_at(base, step, t0):
    """Constant rate, or base / (1 + t / t0) when a schedule is set"""
    return base if not t0 else base / (1.0 + step / t0)


def _sgd_step(params, lr, weight_decay=0.0):
    for t in params:
        if t.grad is None:
            continue
        update = t.grad + weight_decay * t.data if weight_decay else t.grad
        t.data -= lr * update
        t.grad = None


def _initial_loss(classifier, dataset, layer):
    rec = ComputationRecord.inference()
    return classifier.loss(rec, Tensor(dataset.layers[layer - 1]), dataset.labels, layer).item()


def train_probe(dataset, config, classifier=None, num_outputs=None, regression=False, layers=None):
    """Shared-weight training: every epoch cycles layers, then mini-batches.

    Returns the classifier and a ProbeHistory. The model never sees an update:
    only phi moves.
    """
    if dataset.size == 0:
        raise InvalidArgument("cannot train a probe on an empty dataset")
    if classifier is None:
        outputs = num_outputs or int(dataset.labels.max()) + 1
        classifier = ProbeClassifier(dataset.layers[0].shape[1], outputs, config.seed, regression)
        classifier.fit_scaling(dataset.layers)
    layers = list(layers or range(1, dataset.num_layers + 1))
    history = ProbeHistory(initial=[_initial_loss(classifier, dataset, l) for l in layers])
    rng = np.random.default_rng(config.seed)
    step = 0
    for epoch in range(config.epochs):
        # one shuffle per epoch, reused by every layer
        order = rng.permutation(dataset.size)
        epoch_losses, epoch_norms = [], []
        for layer in layers:
            reps = dataset.layers[layer - 1]
            batch_losses = []
            for start in range(0, dataset.size, config.batch_size):
                idx = order[start:start + config.batch_size]
                rec = ComputationRecord()
                try:
                    loss = classifier.loss(rec, Tensor(reps[idx]), dataset.labels[idx], layer)
                except NumericError as exc:
                    raise NumericDivergence(f"probe loss diverged on layer {layer}: {exc}", epoch) from exc
                backward(rec, loss)
                epoch_norms.append(global_grad_norm(classifier.parameters()))
                _sgd_step(classifier.parameters(), learning_rate_at(config.learning_rate, step, config.schedule_t0))
                batch_losses.append(loss.item())
                step += 1
            epoch_losses.append(float(np.mean(batch_losses)))
        if not np.isfinite(epoch_losses).all():
            raise NumericDivergence("probe loss is not finite", epoch)
        history.epochs.append(epoch_losses)
        history.grad_norms.append(float(np.mean(epoch_norms)))
        if epoch == 0 or (epoch + 1) % max(1, config.epochs // 5) == 0:
            logger.info(f"Probe epoch {epoch + 1}/{config.epochs}: mean loss {np.mean(epoch_losses):.4f}")
    return classifier, history


def evaluate_layer(classifier, dataset, layer, metric='f1'):
    """(m1, m2) on one layer: (accuracy, macro-F1 or MCC), or (-RMSE, -RMSE)"""
    dataset.check_layer(layer)
    outputs = classifier.outputs(dataset.layers[layer - 1], layer)
    if classifier.regression:
        error = rmse(outputs[:, 0], dataset.labels)
        return -error, -error
    preds = np.argmax(outputs, axis=1)
    labels = dataset.labels.astype(np.int64)
    m1 = accuracy(preds, labels)
    if metric == 'mcc':
        return m1, mcc(preds, labels)
    return m1, f1_scores(preds, labels)[1]


def stratified_holdout(examples, fraction, seed, regression=False):
    """Split off `fraction` of the examples per label, seeded"""
    rng = np.random.default_rng(seed)
    groups = {}
    for index, example in enumerate(examples):
        key = 0 if regression else example.target
        groups.setdefault(key, []).append(index)
    held = []
    for key in sorted(groups):
        members = np.array(groups[key])
        members = members[rng.permutation(len(members))]
        held.extend(members[:int(round(fraction * len(members)))].tolist())
    held = set(held)
    keep = [e for i, e in enumerate(examples) if i not in held]
    out = [e for i, e in enumerate(examples) if i in held]
    return keep, out


def run_probe(model, data, config, num_outputs=None, regression=False):
    """Extract on a stratified split, train the probe(s) and score every layer on the held-out part"""
    if not data:
        raise InvalidArgument("cannot probe an empty dataset")
    train_part, validation_part = stratified_holdout(data, config.validation_fraction, config.seed, regression)
    if not validation_part:
        validation_part = train_part
    logger.info(f"Probing {model.num_layers} layers on {len(train_part)} examples "
                f"({len(validation_part)} held out, strategy {config.strategy})")
    train = extract_probe_dataset(model, train_part, config.strategy, 'probe-train')
    validation = extract_probe_dataset(model, validation_part, config.strategy, 'probe-validation')
    outputs = num_outputs or int(max(train.labels.max(), validation.labels.max())) + 1

    layer_classifiers = None
    if config.independent:
        layer_classifiers, histories = [], []
        for layer in range(1, model.num_layers + 1):
            fresh = ProbeClassifier(train.layers[0].shape[1], outputs, config.seed, regression)
            fresh.fit_scaling(train.layers)
            fresh, layer_history = train_probe(train, config, fresh, layers=[layer])
            layer_classifiers.append(fresh)
            histories.append(layer_history)
        history = ProbeHistory(
            initial=[h.initial[0] for h in histories],
            epochs=[[h.epochs[e][0] for h in histories] for e in range(config.epochs)],
            grad_norms=[float(np.mean([h.grad_norms[e] for h in histories])) for e in range(config.epochs)],
        )
        scores = [evaluate_layer(layer_classifiers[l - 1], validation, l, config.metric)
                  for l in range(1, model.num_layers + 1)]
        classifier = layer_classifiers[int(np.argmax([a + b for a, b in scores]))]
    else:
        classifier = ProbeClassifier(train.layers[0].shape[1], outputs, config.seed, regression)
        classifier.fit_scaling(train.layers)
        classifier, history = train_probe(train, config, classifier)
        scores = [evaluate_layer(classifier, validation, l, config.metric)
                  for l in range(1, model.num_layers + 1)]

    m1_name, m2_name = ('neg_rmse', 'neg_rmse') if regression else ('accuracy', config.metric)
    table = LayerMetricsTable([s[0] for s in scores], [s[1] for s in scores], m1_name, m2_name)
    return ProbeOutcome(table, classifier, history, train, validation, layer_classifiers)


def probe_all_layers(model, data, config, num_outputs=None, regression=False):
    return run_probe(model, data, config, num_outputs, regression).table


def classifier_for_selection(outcome, selected):
    """The shared phi, or in independent mode the best selected layer's probe"""
    if outcome.layer_classifiers is None:
        return outcome.classifier
    best = max(selected, key=lambda l: (outcome.table.m1[l - 1] + outcome.table.m2[l - 1], -l))
    return copy.deepcopy(outcome.layer_classifiers[best - 1])
