import pathlib

import pandas as pd
import pytest
import ujson

from drift_se.app_metadata import version
from drift_se.main import build_parser, main

CONFIGS = pathlib.Path(__file__).parents[1] / 'configs'

SMALL_TOY = """
[experiment]
task = toy2d
seed = 3
steps = 12
epochs = 2
snapshot_epochs = 2

[train]
batch_size = 16
paradigm = conditional

[noise]
kind = fixed_zero

[encoder]
kind = identity
taps = 0

[generator]
paradigm = conditional
input_dim = 2
hidden_dims = 8
output_dim = 2

[data]
toy_eval_samples = 32
"""


@pytest.fixture
def small_toy(tmp_path):
    path = tmp_path / 'toy.ini'
    path.write_text(SMALL_TOY)
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(['--version'])
    assert info.value.code == 0
    assert version in capsys.readouterr().out


def test_unknown_task_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(['train-everything'])
    assert info.value.code == 2


def test_toy_run_exits_cleanly(tmp_path, small_toy):
    out_dir = tmp_path / 'run'
    assert main(['toy2d', '--config', str(small_toy), '--out', str(out_dir)]) == 0
    summary = ujson.loads((out_dir / 'summary.json').read_text())
    assert (summary['task'], summary['seed'], summary['steps']) == ('toy2d', 3, 12)


def test_seed_flag_overrides_the_file(tmp_path, small_toy):
    out_dir = tmp_path / 'run'
    assert main(['toy2d', '--config', str(small_toy), '--seed', '9', '--out', str(out_dir)]) == 0
    assert ujson.loads((out_dir / 'summary.json').read_text())['seed'] == 9


def test_resume_continues_a_run(tmp_path, small_toy):
    out_dir = tmp_path / 'run'
    args = ['toy2d', '--config', str(small_toy), '--out', str(out_dir)]
    assert main(args) == 0
    assert main(args + ['--resume', str(out_dir / 'checkpoint.bin')]) == 0
    # training already reached its final epoch, so nothing is added
    assert ujson.loads((out_dir / 'summary.json').read_text())['steps'] == 12


@pytest.mark.parametrize(
    'args',
    [
        ['toy2d'],
        ['toy2d', '--config', 'does-not-exist.ini'],
        ['toy2d', '--seed', '0', '--resume', 'missing.bin'],
        ['denoise', '--config', str(CONFIGS / 'toy2d.ini')],
    ],
)
def test_configuration_problems_exit_with_1(tmp_path, args):
    assert main(args + ['--out', str(tmp_path / 'run')]) == 1


def test_drift_eval_exit_codes(tmp_path):
    args = ['drift-eval', '--config', str(CONFIGS / 'drift_eval.ini')]
    assert main(args + ['--out', str(tmp_path / 'ok')]) == 0
    assert main(args + ['--out', str(tmp_path / 'perturbed'), '--perturb']) == 3
    summary = ujson.loads((tmp_path / 'perturbed' / 'summary.json').read_text())
    assert summary['perturb'] is True
    assert summary['failed'] == ['oracle_equivalence']


def test_stft_check_exits_cleanly(tmp_path):
    assert main(['stft-check', '--seed', '0', '--out', str(tmp_path)]) == 0
    assert (tmp_path / 'stft_check.csv').is_file()


@pytest.mark.slow
def test_toy_acceptance(tmp_path):
    oracle = ujson.loads((pathlib.Path(__file__).parent / 'data' / 'toy2d_oracle.json').read_text())
    config = str(CONFIGS / oracle['config'])
    args = ['toy2d', '--config', config, '--seed', str(oracle['seed']), '--out', str(tmp_path)]
    assert main(args) == 0
    summary = ujson.loads((tmp_path / 'summary.json').read_text())
    assert summary['steps'] == oracle['steps']
    assert summary['mmd_ratio'] < oracle['max_mmd_ratio']


@pytest.mark.slow
def test_denoise_acceptance(tmp_path):
    assert main(['denoise', '--config', str(CONFIGS / 'denoise.ini'), '--out', str(tmp_path)]) == 0
    summary = ujson.loads((tmp_path / 'summary.json').read_text())
    assert summary['si_sdr_improvement'] >= 5.0


@pytest.mark.slow
def test_snapshot_acceptance(tmp_path):
    config = str(CONFIGS / 'denoise_snapshots.ini')
    assert main(['denoise', '--config', config, '--out', str(tmp_path)]) == 0
    summary = ujson.loads((tmp_path / 'summary.json').read_text())
    assert set(summary['centroid_distance']) == {'1', '10', '25', '100'}
    assert summary['centroid_ratio'] < 0.5


@pytest.mark.slow
def test_noise_injected_denoise_runs(tmp_path):
    config = str(CONFIGS / 'denoise_sigma.ini')
    assert main(['denoise', '--config', config, '--out', str(tmp_path)]) == 0
    steps = pd.read_csv(tmp_path / 'steps.csv')
    assert steps['sigma_mean'].between(0.01, 0.3).all()


@pytest.mark.slow
def test_unpaired_acceptance(tmp_path):
    config = str(CONFIGS / 'unpaired.ini')
    assert main(['unpaired', '--config', config, '--out', str(tmp_path)]) == 0
    summary = ujson.loads((tmp_path / 'summary.json').read_text())
    assert summary['mmd_ratio'] < 0.3
    assert summary['si_sdr_gap'] > 0
