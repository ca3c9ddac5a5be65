"""Command-line surface and exit codes."""

import json

import pytest

import main

SMALL = """\
data.synth = keyword
data.size = 40
data.classes = 2
model.layers = 2
model.dim = 8
model.heads = 2
model.context = 64
probe.epochs = 2
finetune.epochs = 1
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'small.conf'
    path.write_text(SMALL, encoding='utf-8')
    return str(path)


def last_json(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    return json.loads(lines[-1])


class TestExitCodes:

    def test_synth(self, tmp_path, capsys):
        target = tmp_path / 'suffix.jsonl'
        code = main.run(['--seed', '3', 'synth', '--synth', 'suffix', '--size', '30', '--classes', '3',
                         '--output', str(target)])
        assert code == main.EXIT_OK
        assert last_json(capsys) == {'path': str(target), 'records': 30}
        assert len(target.read_text(encoding='utf-8').splitlines()) == 30

    def test_pipeline(self, tmp_path, small_config, capsys):
        out = tmp_path / 'run'
        code = main.run(['--config', small_config, '--out', str(out), 'pipeline'])
        assert code == main.EXIT_OK
        assert (out / 'report.json').exists()
        payload = last_json(capsys)
        assert payload['selected']
        assert 'accuracy' in payload['test']

    def test_staged_commands(self, tmp_path, small_config):
        out = str(tmp_path / 'run')
        for command in ('probe', 'select', 'finetune', 'predict', 'report'):
            assert main.run(['--config', small_config, '--out', out, command]) == main.EXIT_OK
        assert (tmp_path / 'run' / 'report.json').exists()

    def test_flags_override_config(self, tmp_path, small_config, capsys):
        out = tmp_path / 'run'
        code = main.run(['--config', small_config, '--out', str(out), 'pipeline', '--all-layers'])
        assert code == main.EXIT_OK
        assert last_json(capsys)['selected'] == [1, 2]

    def test_unknown_option(self, small_config):
        assert main.run(['--config', small_config, 'pipeline', '--gamma', '2']) == main.EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / 'bad.conf'
        path.write_text("model.depth = 3\n", encoding='utf-8')
        assert main.run(['--config', str(path), 'pipeline']) == main.EXIT_USAGE

    def test_out_of_range_flag(self, small_config):
        assert main.run(['--config', small_config, 'pipeline', '--alpha', '-1']) == main.EXIT_USAGE

    def test_missing_dataset(self, tmp_path):
        code = main.run(['--out', str(tmp_path), 'pipeline', '--data', str(tmp_path / 'absent.jsonl')])
        assert code == main.EXIT_USAGE

    def test_bad_grid(self, tmp_path, small_config):
        code = main.run(['--config', small_config, '--out', str(tmp_path), 'sweep', '--grid', '0.5'])
        assert code == main.EXIT_USAGE

    def test_stage_without_inputs(self, tmp_path, small_config):
        code = main.run(['--config', small_config, '--out', str(tmp_path / 'empty'), 'select'])
        assert code == main.EXIT_PIPELINE

    def test_malformed_dataset(self, tmp_path, small_config):
        data = tmp_path / 'broken.jsonl'
        data.write_text('{"instruction": "i", "text": "t", "answer": "a"}\n{oops\n', encoding='utf-8')
        code = main.run(['--config', small_config, '--out', str(tmp_path / 'run'), 'pipeline', '--data', str(data)])
        assert code == main.EXIT_PIPELINE


class TestSweepCommand:

    def test_rows_emitted(self, tmp_path, small_config, capsys):
        code = main.run(['--config', small_config, '--out', str(tmp_path), 'sweep', '--grid', '0.5:0.5,1:1'])
        assert code == main.EXIT_OK
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]
        assert [(r['alpha'], r['beta']) for r in rows] == [(0.5, 0.5), (1.0, 1.0)]
        assert (tmp_path / 'sweep.csv').exists()

    def test_strategies(self, tmp_path, small_config, capsys):
        code = main.run(['--config', small_config, '--out', str(tmp_path), 'strategies'])
        assert code == main.EXIT_OK
        assert set(last_json(capsys)['mean_m1']) == {'lt', 'sat', 'avt'}
