"""Margin computation and the three layer-selection rules against brute-force oracles."""

import numpy as np
import pytest

from laet.errors import InvalidArgument
from laet.probe import LayerMetricsTable
from laet.selection import (
    SelectionConfig, SelectionResult, compute_margins,
    select_dominance, select_threshold, select_first_std, select_layers, select_all,
)

M1 = [0.5, 0.7, 0.9, 0.88]
M2 = [0.4, 0.6, 0.85, 0.86]


def table(m1, m2):
    return LayerMetricsTable(list(m1), list(m2))


def brute_dominance(m1, m2, alpha, beta):
    d1 = alpha * float(np.std(m1))
    d2 = beta * float(np.std(m2))
    kept = []
    for l in range(len(m1)):
        excluded = False
        for o in range(len(m1)):
            if o == l:
                continue
            if (m1[o] >= m1[l] + d1 and m2[o] >= m2[l] + d2
                    and (m1[o] > m1[l] or m2[o] > m2[l])):
                excluded = True
                break
        if not excluded:
            kept.append(l + 1)
    return kept


def brute_threshold(m1, m2, alpha, beta):
    d1 = alpha * float(np.std(m1))
    d2 = beta * float(np.std(m2))
    kept = [l + 1 for l in range(len(m1)) if m1[l] >= max(m1) - d1 and m2[l] >= max(m2) - d2]
    if not kept:
        sums = [a + b for a, b in zip(m1, m2)]
        kept = [sums.index(max(sums)) + 1]
    return kept


def random_tables(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        size = int(rng.integers(2, 49))
        yield rng.uniform(0, 1, size).tolist(), rng.uniform(0, 1, size).tolist(), rng


class TestMargins:

    def test_constant_column(self):
        sigma_m1, sigma_m2, delta_m1, delta_m2 = compute_margins(table([0.4] * 5, [0.7] * 5), 0.5, 0.5)
        assert sigma_m1 == 0.0 and sigma_m2 == 0.0
        assert delta_m1 == 0.0 and delta_m2 == 0.0

    def test_population_std(self):
        sigma_m1, _, delta_m1, _ = compute_margins(table(M1, M2), 0.5, 0.5)
        assert sigma_m1 == pytest.approx(0.16148, abs=1e-5)
        assert delta_m1 == pytest.approx(0.08074, abs=1e-5)

    def test_alpha_is_linear(self):
        _, _, single, _ = compute_margins(table(M1, M2), 0.3, 0.5)
        _, _, double, _ = compute_margins(table(M1, M2), 0.6, 0.5)
        assert double == 2 * single

    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            SelectionConfig(alpha=-0.1)
        with pytest.raises(InvalidArgument):
            SelectionConfig(strategy='pareto')

    @pytest.mark.parametrize('alpha, beta', [(float('nan'), 0.5), (0.5, float('nan')), (float('inf'), 0.5)])
    def test_non_finite_margins_rejected(self, alpha, beta):
        with pytest.raises(InvalidArgument):
            SelectionConfig(alpha, beta)
        with pytest.raises(InvalidArgument):
            compute_margins(table(M1, M2), alpha, beta)


class TestDominance:

    def test_single_layer(self):
        assert select_dominance(table([0.3], [0.2]), SelectionConfig()).selected == [1]

    def test_identical_layers_all_kept(self):
        for alpha in (0.0, 0.5, 2.0):
            result = select_dominance(table([0.6] * 6, [0.6] * 6), SelectionConfig(alpha, alpha))
            assert result.selected == [1, 2, 3, 4, 5, 6]

    def test_worked_example(self):
        result = select_dominance(table(M1, M2), SelectionConfig(0.5, 0.5))
        assert result.selected == [3, 4]
        assert result.strategy == 'dominance'

    def test_oracle_equivalence(self):
        for m1, m2, rng in random_tables(1000, 21):
            alpha, beta = rng.uniform(0, 2, 2)
            result = select_dominance(table(m1, m2), SelectionConfig(alpha, beta))
            assert result.selected == brute_dominance(m1, m2, alpha, beta)


class TestThreshold:

    def test_single_layer(self):
        assert select_threshold(table([0.1], [0.9]), SelectionConfig(strategy='threshold')).selected == [1]

    def test_worked_example(self):
        result = select_threshold(table(M1, M2), SelectionConfig(0.5, 0.5, 'threshold'))
        assert result.selected == brute_threshold(M1, M2, 0.5, 0.5) == [3, 4]

    def test_zero_margin_unique_maximizer(self):
        result = select_threshold(table([0.2, 0.9, 0.5], [0.3, 0.8, 0.1]), SelectionConfig(0, 0, 'threshold'))
        assert result.selected == [2]
        assert not result.fallback

    def test_fallback_when_empty(self):
        result = select_threshold(table([1.0, 0.0], [0.0, 1.0]), SelectionConfig(0, 0, 'threshold'))
        assert result.selected == [1]
        assert result.fallback

    def test_oracle_equivalence(self):
        for m1, m2, rng in random_tables(1000, 22):
            alpha, beta = rng.uniform(0, 2, 2)
            result = select_threshold(table(m1, m2), SelectionConfig(alpha, beta, 'threshold'))
            assert result.selected == brute_threshold(m1, m2, alpha, beta)

    def test_monotone_in_margins(self):
        for m1, m2, rng in random_tables(300, 23):
            alpha, beta = rng.uniform(0, 1, 2)
            small = set(select_threshold(table(m1, m2), SelectionConfig(alpha, beta)).selected)
            large = set(select_threshold(table(m1, m2), SelectionConfig(alpha + 0.3, beta + 0.2)).selected)
            if not select_threshold(table(m1, m2), SelectionConfig(alpha, beta)).fallback:
                assert small <= large
            assert len(large) >= len(small)


class TestFirstStd:

    def test_constant_table(self):
        assert select_first_std(table([0.5] * 4, [0.5] * 4)).selected == [1, 2, 3, 4]

    def test_superset_of_half_margin(self):
        for m1, m2, _ in random_tables(300, 24):
            wide = select_first_std(table(m1, m2)).selected
            narrow = select_threshold(table(m1, m2), SelectionConfig(0.5, 0.5)).selected
            assert len(wide) >= len(narrow)

    def test_oracle_equivalence(self):
        for m1, m2, _ in random_tables(1000, 25):
            assert select_first_std(table(m1, m2)).selected == brute_threshold(m1, m2, 1.0, 1.0)


class TestSelectionProperties:

    @pytest.mark.parametrize('strategy', ['dominance', 'threshold', 'first-std'])
    def test_never_empty(self, strategy):
        for m1, m2, rng in random_tables(200, 26):
            config = SelectionConfig(*rng.uniform(0, 1, 2), strategy=strategy)
            result = select_layers(table(m1, m2), config)
            assert result.selected
            assert set(result.selected) <= set(range(1, len(m1) + 1))

    @pytest.mark.parametrize('strategy', ['dominance', 'threshold', 'first-std'])
    def test_permutation_equivariance(self, strategy):
        for m1, m2, rng in random_tables(200, 27):
            config = SelectionConfig(0.5, 0.5, strategy)
            base = select_layers(table(m1, m2), config)
            if base.fallback:
                continue
            perm = rng.permutation(len(m1))
            permuted = select_layers(table(np.array(m1)[perm], np.array(m2)[perm]), config)
            # new position i holds old layer perm[i] + 1
            assert sorted(int(perm[l - 1]) + 1 for l in permuted.selected) == base.selected

    @pytest.mark.parametrize('strategy', ['dominance', 'threshold', 'first-std'])
    def test_shift_invariance(self, strategy):
        for m1, m2, _ in random_tables(200, 28):
            config = SelectionConfig(0.5, 0.5, strategy)
            base = select_layers(table(m1, m2), config).selected
            shifted = select_layers(table(np.array(m1) + 0.25, np.array(m2) - 0.125), config).selected
            assert shifted == base

    def test_select_all(self):
        result = select_all(table(M1, M2))
        assert result.selected == [1, 2, 3, 4]
        assert result.strategy == 'all'

    def test_result_round_trip(self):
        result = select_dominance(table(M1, M2), SelectionConfig())
        assert SelectionResult.from_dict(result.to_dict()) == result
