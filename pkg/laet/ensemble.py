"""
Majority-vote prediction over the selected layers and the exponential
error bound reported next to it.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ContractViolation
from .model import extract_representation
from .numerics import softmax


@dataclass
class EnsembleVote:
    """Per-layer votes for one input; prediction is the reduced class (or mean scalar)"""
    layer_votes: dict = field(default_factory=dict)
    prediction: float = 0
    tie: bool = False

    def to_dict(self):
        return {
            'prediction': self.prediction,
            'tie': self.tie,
            'votes': {str(l): v[0] for l, v in self.layer_votes.items()},
        }


def _vote_from_outputs(classifier, outputs):
    if classifier.regression:
        value = float(outputs[0])
        return value, np.array([value])
    probs = softmax(outputs)
    # np.argmax keeps the lowest index on ties
    return int(np.argmax(probs)), probs


def predict_layer(model, classifier, tokens, layer, selected, strategy='lt', reps=None):
    """(class, probabilities) from one selected layer's representation"""
    if layer not in selected:
        raise InvalidArgument(f"layer {layer} was not selected for prediction")
    reps = reps if reps is not None else model.forward_all_layers(tokens)
    outputs = classifier.outputs(extract_representation(reps, layer, strategy), layer)[0]
    return _vote_from_outputs(classifier, outputs)


def majority_vote(votes):
    """Most votes; ties go to the largest summed probability, then the lowest index"""
    if not votes:
        raise ContractViolation("majority vote over no votes")
    counts = {}
    for cls, _ in votes:
        counts[cls] = counts.get(cls, 0) + 1
    top = max(counts.values())
    leaders = sorted(c for c, n in counts.items() if n == top)
    if len(leaders) == 1:
        return leaders[0], False
    # probability mass each tied class collects across every voter
    mass = {c: sum(float(probs[c]) for _, probs in votes) for c in leaders}
    best_mass = max(mass.values())
    return min(c for c in leaders if mass[c] == best_mass), True


def average_vote(values):
    """Regression analogue of the vote: mean of the per-layer scalars"""
    if not values:
        raise ContractViolation("average over no predictions")
    return float(np.mean(values))


def ensemble_predict(model, classifier, tokens, selected, strategy='lt'):
    reps = model.forward_all_layers(tokens)
    vote = EnsembleVote()
    for layer in sorted(selected):
        vote.layer_votes[layer] = predict_layer(model, classifier, tokens, layer, selected, strategy, reps)
    if classifier.regression:
        vote.prediction = average_vote([v[0] for v in vote.layer_votes.values()])
    else:
        vote.prediction, vote.tie = majority_vote(list(vote.layer_votes.values()))
    return vote


def ensemble_error_bound(avg_error, ensemble_size):
    """exp(-2 |B| (0.5 - eps)^2) for independent voters with mean error eps < 0.5"""
    if not 0.0 <= avg_error < 0.5:
        raise InvalidArgument("average error must lie in [0, 0.5)")
    if ensemble_size < 1:
        raise InvalidArgument("ensemble size must be at least 1")
    return math.exp(-2.0 * ensemble_size * (0.5 - avg_error) ** 2)


def simulate_majority_error(avg_error, ensemble_size, trials, seed=0):
    """Empirical majority-vote error of independent binary voters.

    Ties count as errors, which only makes the estimate conservative.
    """
    rng = np.random.default_rng(seed)
    wrong = rng.random((trials, ensemble_size)) < avg_error
    failures = 2 * wrong.sum(axis=1) >= ensemble_size
    return float(failures.mean())
