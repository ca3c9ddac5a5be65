"""Per-layer voting, tie-breaking and the majority-vote error bound."""

import math

import numpy as np
import pytest

from laet.ensemble import (
    average_vote, ensemble_error_bound, ensemble_predict, majority_vote,
    predict_layer, simulate_majority_error,
)
from laet.errors import ContractViolation, InvalidArgument
from laet.model import LayeredModel, ModelConfig
from laet.probe import ProbeClassifier


def model_and_head(layers=3, regression=False):
    model = LayeredModel(ModelConfig(num_layers=layers, hidden_dim=8, num_heads=2, max_context=32, seed=1))
    return model, ProbeClassifier(8, 3, seed=1, regression=regression)


class TestPredictLayer:

    def test_equal_logits_pick_class_zero(self):
        model, head = model_and_head()
        head.params['w3'].data[:] = 0.0
        head.params['b3'].data[:] = 0.25
        cls, probs = predict_layer(model, head, [1, 2, 3], 2, [2])
        assert cls == 0
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-15)

    def test_probabilities_sum_to_one(self):
        model, head = model_and_head()
        cls, probs = predict_layer(model, head, [5, 6, 7], 1, [1, 3])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert cls == int(np.argmax(probs))

    def test_unselected_layer(self):
        model, head = model_and_head()
        with pytest.raises(InvalidArgument):
            predict_layer(model, head, [1, 2], 2, [1, 3])


class TestMajorityVote:

    def test_clear_majority(self):
        votes = [(2, np.array([0.1, 0.1, 0.8])), (2, np.array([0.2, 0.2, 0.6])), (0, np.array([0.9, 0.05, 0.05]))]
        assert majority_vote(votes) == (2, False)

    def test_tie_broken_by_probability_mass(self):
        votes = [(0, np.array([0.7, 0.3])), (1, np.array([0.4, 0.6]))]
        # mass: class 0 collects 1.1, class 1 collects 0.9
        assert majority_vote(votes) == (0, True)
        votes = [(0, np.array([0.55, 0.45])), (1, np.array([0.1, 0.9]))]
        assert majority_vote(votes) == (1, True)

    def test_full_tie_goes_to_lowest_index(self):
        votes = [(1, np.array([0.4, 0.6])), (0, np.array([0.6, 0.4]))]
        assert majority_vote(votes) == (0, True)

    def test_empty(self):
        with pytest.raises(ContractViolation):
            majority_vote([])

    def test_order_of_voters_irrelevant(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            k = int(rng.integers(2, 5))
            votes = []
            for _ in range(int(rng.integers(1, 8))):
                # multiples of 1/8 keep every mass sum exact
                probs = rng.multinomial(8, np.ones(k) / k) / 8.0
                votes.append((int(np.argmax(probs)), probs))
            expected = majority_vote(votes)
            for _ in range(3):
                shuffled = [votes[i] for i in rng.permutation(len(votes))]
                assert majority_vote(shuffled) == expected

    def test_average_vote(self):
        assert average_vote([1.0, 2.0, 6.0]) == 3.0
        with pytest.raises(ContractViolation):
            average_vote([])


class TestEnsemblePredict:

    def test_votes_cover_selected_layers(self):
        model, head = model_and_head()
        vote = ensemble_predict(model, head, [4, 5, 6], [3, 1])
        assert list(vote.layer_votes) == [1, 3]
        assert vote.prediction in {v[0] for v in vote.layer_votes.values()}

    def test_matches_single_layer_predictions(self):
        model, head = model_and_head()
        vote = ensemble_predict(model, head, [9, 8, 7], [1, 2, 3])
        for layer in (1, 2, 3):
            cls, probs = predict_layer(model, head, [9, 8, 7], layer, [1, 2, 3])
            assert vote.layer_votes[layer][0] == cls
            np.testing.assert_array_equal(vote.layer_votes[layer][1], probs)

    def test_single_layer_is_that_layer(self):
        model, head = model_and_head()
        vote = ensemble_predict(model, head, [9, 8, 7], [2])
        assert vote.prediction == vote.layer_votes[2][0]
        assert not vote.tie

    def test_regression_averages(self):
        model, head = model_and_head(regression=True)
        vote = ensemble_predict(model, head, [1, 2, 3], [1, 2])
        values = [vote.layer_votes[l][0] for l in (1, 2)]
        assert vote.prediction == pytest.approx(np.mean(values))

    def test_to_dict(self):
        model, head = model_and_head()
        payload = ensemble_predict(model, head, [1, 2], [1, 3]).to_dict()
        assert set(payload['votes']) == {'1', '3'}


class TestErrorBound:

    def test_known_value(self):
        assert ensemble_error_bound(0.3, 5) == pytest.approx(math.exp(-0.4))
        assert ensemble_error_bound(0.3, 5) == pytest.approx(0.6703, abs=1e-4)

    def test_doubling_size_squares(self):
        for eps in (0.0, 0.1, 0.3, 0.45):
            assert ensemble_error_bound(eps, 6) == pytest.approx(ensemble_error_bound(eps, 3) ** 2)

    def test_monotone(self):
        sizes = [ensemble_error_bound(0.2, n) for n in range(1, 10)]
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        errors = [ensemble_error_bound(e, 4) for e in np.linspace(0.0, 0.49, 10)]
        assert all(a < b for a, b in zip(errors, errors[1:]))

    def test_domain(self):
        with pytest.raises(InvalidArgument):
            ensemble_error_bound(0.5, 3)
        with pytest.raises(InvalidArgument):
            ensemble_error_bound(-0.1, 3)
        with pytest.raises(InvalidArgument):
            ensemble_error_bound(0.2, 0)

    @pytest.mark.parametrize('eps', [0.05, 0.15, 0.25, 0.35])
    @pytest.mark.parametrize('size', [1, 3, 5, 9])
    def test_simulation_stays_under_bound(self, eps, size):
        trials = 100_000
        empirical = simulate_majority_error(eps, size, trials, seed=size)
        bound = ensemble_error_bound(eps, size)
        assert empirical <= bound + 3 * math.sqrt(bound * (1 - bound) / trials)

    def test_simulation_single_voter(self):
        assert simulate_majority_error(0.25, 1, 100_000, seed=3) == pytest.approx(0.25, abs=0.01)
