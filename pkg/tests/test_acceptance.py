"""Desk-scale end-to-end runs on the synthetic tasks.

These train the default 8-layer model and take minutes; run with `-m slow`.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from config import load_config
from laet import harness
from laet.probe import LayerMetricsTable
from laet.selection import SelectionConfig, select_dominance, select_first_std

pytestmark = pytest.mark.slow


def keyword_config(out, **overrides):
    params = {'data.synth': 'keyword', 'data.size': 2000, 'data.classes': 3, 'data.noise': 0.05,
              'run.seed': 7, 'run.out': str(out)}
    params.update(overrides)
    return load_config(overrides=params)


@pytest.fixture(scope='module')
def keyword_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp('keyword')
    selective = harness.run_pipeline(keyword_config(root / 'laet'))
    baseline = harness.run_pipeline(keyword_config(root / 'all', **{'finetune.all_layers': True}))
    return selective, baseline


class TestEfficiency:

    def test_fewer_layers_same_accuracy(self, keyword_runs):
        selective, baseline = keyword_runs
        assert len(selective.selection['selected']) <= 5
        assert selective.test['accuracy'] >= 0.90
        assert baseline.test['accuracy'] >= 0.90
        assert abs(selective.test['accuracy'] - baseline.test['accuracy']) <= 0.02

    def test_dominance_not_wider_than_first_std(self, keyword_runs):
        selective, _ = keyword_runs
        table = LayerMetricsTable.from_dict(selective.probe['table'])
        narrow = select_dominance(table, SelectionConfig(0.5, 0.5)).selected
        wide = select_first_std(table).selected
        assert len(narrow) <= len(wide)
        if len(narrow) == len(wide):
            assert len(wide) == table.num_layers


class TestLossSanity:

    def test_initial_probe_loss_near_log_k(self, keyword_runs):
        selective, _ = keyword_runs
        assert abs(np.mean(selective.probe['initial_loss']) - math.log(3)) < 0.1

    def test_finetune_loss_decreases(self, keyword_runs):
        for report in keyword_runs:
            assert report.training['final_loss'] < report.training['first_loss']


class TestProbingStrategies:

    def test_last_token_leads_on_suffix_task(self, tmp_path):
        config = load_config(overrides={'data.synth': 'suffix', 'data.size': 2000, 'data.classes': 3,
                                        'run.seed': 7, 'run.out': str(tmp_path)})
        means = harness.mean_by_strategy(harness.compare_probe_strategies(config))
        assert means['lt'] >= means['sat'] + 0.03
        assert means['lt'] >= means['avt'] + 0.03


class TestDeterminism:

    def test_identical_runs(self, tmp_path):
        config = keyword_config(tmp_path, **{'data.size': 300, 'probe.epochs': 5, 'finetune.epochs': 2})
        harness.run_pipeline(config)
        report = (tmp_path / harness.REPORT_FILE).read_bytes()
        checkpoint = (tmp_path / harness.MODEL_CHECKPOINT).read_bytes()
        harness.run_pipeline(replace(config))
        assert (tmp_path / harness.REPORT_FILE).read_bytes() == report
        assert (tmp_path / harness.MODEL_CHECKPOINT).read_bytes() == checkpoint
