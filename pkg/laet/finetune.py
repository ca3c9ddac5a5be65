"""
Joint fine-tuning of the selected layers theta_B and the shared classifier
phi against the mean of the per-layer losses over B.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ContractViolation, NumericError, NumericDivergence
from .model import pool
from .numerics import ComputationRecord, backward
from .probe import learning_rate_at

logger = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    epochs: int = 50
    model_lr: float = 2e-5
    classifier_lr: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    schedule_t0: float = None
    clip_norm: float = 1.0
    strategy: str = 'lt'
    max_steps: int = None

    def __post_init__(self):
        rates = (self.model_lr, self.classifier_lr, self.weight_decay, self.clip_norm or 0.0, self.schedule_t0 or 1.0)
        if not all(math.isfinite(value) for value in rates):
            raise InvalidArgument("rates, decay, clip norm and schedule must be finite")
        if self.model_lr <= 0 or self.classifier_lr <= 0:
            raise InvalidArgument("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch size must be positive")


@dataclass
class EpochTrace:
    loss: float
    layer_losses: dict
    seconds: float


@dataclass
class TrainingTrace:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    def summary(self):
        """Loss endpoints only; wall-clock stays out of reports"""
        if not self.epochs:
            return {'epochs': 0}
        return {
            'epochs': len(self.epochs),
            'first_loss': self.epochs[0].loss,
            'final_loss': self.epochs[-1].loss,
            'final_layer_losses': {str(l): v for l, v in self.epochs[-1].layer_losses.items()},
        }


def combined_loss(per_layer_losses):
    """L = (1/|B|) sum of L_l"""
    if len(per_layer_losses) == 0:
        raise ContractViolation("combined loss over an empty layer set")
    return float(np.mean(per_layer_losses))


# Function to rescale all gradients together when their global norm exceeds max_norm
def _clip(params, max_norm):
    grads = [t.grad for t in params if t.grad is not None]
    norm = float(np.sqrt(sum(float((g ** 2).sum()) for g in grads)))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for t in params:
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


# Function to take one decoupled-decay SGD step and clear the gradients
def _apply(params, lr, weight_decay):
    for t in params:
        if t.grad is None:
            continue
        t.data -= lr * (t.grad + weight_decay * t.data)
        t.grad = None


def finetune(model, classifier, selection, data, config):
    """Only theta_B and phi move; every other layer stays bit-identical"""
    selected = sorted(selection.selected)
    if not selected:
        raise ContractViolation("fine-tuning needs a non-empty layer set")
    # Unfreeze B only; E, P and every other layer keep requires_grad off
    model.set_trainable(selected)
    if not data:
        raise InvalidArgument("cannot fine-tune on an empty dataset")
    model_params = model.trainable_parameters()
    classifier_params = classifier.parameters()
    sequences = [model.tokenize(example.text) for example in data]
    targets = np.array([example.target for example in data])
    # Layers above max(B) cannot affect any loss term, so the forward stops there
    top = max(selected)
    rng = np.random.default_rng(config.seed)
    trace = TrainingTrace()
    step = 0
    logger.info(f"Fine-tuning layers {selected} ({sum(t.size for t in model_params)} model + "
                f"{classifier.parameter_count()} classifier parameters) for {config.epochs} epochs")

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(sequences))
        batch_totals, batch_layers = [], {l: [] for l in selected}
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            if config.max_steps is not None and step >= config.max_steps:
                break
            idx = order[start:start + config.batch_size]
            rec = ComputationRecord()
            # Forward once, then score every selected layer with the shared head
            try:
                hidden, lengths = model.forward_batch([sequences[i] for i in idx], rec, upto=top)
                layer_losses = [
                    classifier.loss(rec, pool(rec, hidden[l], lengths, config.strategy), targets[idx], l)
                    for l in selected
                ]
                total = rec.scale(rec.add_n(layer_losses), 1.0 / len(selected))
            except NumericError as exc:
                raise NumericDivergence(f"fine-tune loss diverged: {exc}", epoch, batch_index) from exc
            backward(rec, total)
            # Clip jointly, then step model and head at their own rates
            _clip(model_params + classifier_params, config.clip_norm)
            _apply(model_params, learning_rate_at(config.model_lr, step, config.schedule_t0), config.weight_decay)
            _apply(classifier_params, learning_rate_at(config.classifier_lr, step, config.schedule_t0), 0.0)
            batch_totals.append(total.item())
            # Record losses for the epoch trace
            for l, loss in zip(selected, layer_losses):
                batch_layers[l].append(loss.item())
            step += 1
        if not batch_totals:
            break
        entry = EpochTrace(
            loss=combined_loss([float(np.mean(batch_layers[l])) for l in selected]),
            layer_losses={l: float(np.mean(batch_layers[l])) for l in selected},
            seconds=time.perf_counter() - started,
        )
        trace.epochs.append(entry)
        logger.info(f"Fine-tune epoch {epoch + 1}/{config.epochs}: loss {entry.loss:.4f} ({entry.seconds:.1f}s)")
    return model, classifier, trace
