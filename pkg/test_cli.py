"""
命令行测试
小语料上跑完 synth -> train -> predict -> evaluate -> report，检查产物和退出码
"""

import csv
import json
import os

import pytest

from casdetect.models import CAS_KINDS, DetectedEvent
from casdetect.nn.checkpoint import load_checkpoint, save_checkpoint
from casdetect.postprocess import write_events, read_events
from casdetect.signal_io import read_manifest, read_labels
from main import main

TINY_MODEL = ['--width-scale', '0.05', '--gru-hidden', '4']


def _run(*argv):
    return main([str(arg) for arg in argv])


def _read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    """训练语料、测试语料、两折训练结果和一次预测"""
    root = tmp_path_factory.mktemp('pipeline')
    paths = {
        'train': root / 'train',
        'test': root / 'test',
        'model': root / 'model',
        'pred': root / 'pred',
    }
    assert _run('synth', '--out', paths['train'], '--n', 6, '--seed', 11) == 0
    assert _run('synth', '--out', paths['test'], '--n', 3, '--split', 'test', '--prefix', 'test',
                '--seed', 12) == 0
    assert _run('train', '--manifest', paths['train'] / 'manifest.txt', '--out', paths['model'],
                '--folds', 2, '--max-epochs', 1, '--seed', 0, *TINY_MODEL) == 0
    paths['checkpoint'] = paths['model'] / 'fold_0' / 'model.ckpt'
    assert _run('predict', '--checkpoint', paths['checkpoint'], '--manifest', paths['test'] / 'manifest.txt',
                '--out', paths['pred'], '--seed', 0) == 0
    return paths


def test_synth_writes_corpus(pipeline):
    entries = read_manifest(str(pipeline['train'] / 'manifest.txt'))
    assert len(entries) == 6
    for wav_path, label_path in entries:
        assert os.path.exists(wav_path) and os.path.exists(label_path)
    statistics = _read_json(pipeline['train'] / 'statistics.json')
    assert statistics['seed'] == 11


def test_train_writes_folds(pipeline):
    summary = _read_json(pipeline['model'] / 'train_summary.json')
    assert [fold['fold'] for fold in summary['folds']] == [0, 1]
    assert summary['model_spec']['gru_hidden'] == 4
    assert summary['train_config']['max_epochs'] == 1
    for fold in (0, 1):
        fold_dir = pipeline['model'] / f"fold_{fold}"
        with open(fold_dir / 'history.csv', 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1
        _, extra = load_checkpoint(str(fold_dir / 'model.ckpt'))
        assert extra['fold'] == fold
        assert 0.0 <= extra['threshold'] <= 1.0


def test_predict_writes_one_file_pair_per_recording(pipeline):
    index = _read_json(pipeline['pred'] / 'predictions.json')
    assert [record['id'] for record in index['recordings']] == [f"test_{i:04d}" for i in range(3)]
    assert index['hop_s'] == pytest.approx(0.032)
    for record in index['recordings']:
        with open(pipeline['pred'] / record['probabilities'], 'r', encoding='utf-8') as f:
            values = [float(line) for line in f]
        assert len(values) == record['steps'] == 469
        assert all(0.0 < v < 1.0 for v in values)
        assert (pipeline['pred'] / record['event_file']).exists()


def test_predict_parallel_matches_serial(pipeline, tmp_path):
    out = tmp_path / 'parallel'
    assert _run('predict', '--checkpoint', pipeline['checkpoint'], '--manifest',
                pipeline['test'] / 'manifest.txt', '--out', out, '--seed', 0, '--jobs', 2) == 0
    for name in sorted(os.listdir(pipeline['pred'])):
        if name.endswith('.txt'):
            assert (out / name).read_bytes() == (pipeline['pred'] / name).read_bytes()


def test_evaluate_is_deterministic(pipeline, tmp_path):
    manifest = pipeline['test'] / 'manifest.txt'
    assert _run('evaluate', '--predictions', pipeline['pred'], '--manifest', manifest, '--out', tmp_path / 'a') == 0
    assert _run('evaluate', '--predictions', pipeline['pred'], '--manifest', manifest, '--out', tmp_path / 'b') == 0
    assert (tmp_path / 'a' / 'metrics.json').read_bytes() == (tmp_path / 'b' / 'metrics.json').read_bytes()

    report = _read_json(tmp_path / 'a' / 'metrics.json')
    assert report['recordings'] == 3
    confusion = report['segment']['confusion']
    assert sum(confusion.values()) == 3 * 469


def test_zero_head_above_half_finds_nothing(pipeline, tmp_path):
    model, extra = load_checkpoint(str(pipeline['checkpoint']))
    dense = model.head[1]
    dense.weights['kernel'][:] = 0.0
    dense.weights['bias'][:] = 0.0
    checkpoint = str(tmp_path / 'zero.ckpt')
    save_checkpoint(checkpoint, model, extra=extra)

    out = tmp_path / 'pred'
    assert _run('predict', '--checkpoint', checkpoint, '--manifest', pipeline['test'] / 'manifest.txt',
                '--out', out, '--threshold', 0.6) == 0
    index = _read_json(out / 'predictions.json')
    assert index['threshold'] == 0.6
    for record in index['recordings']:
        assert record['events'] == 0
        assert record['occupation_rate'] == 0.0
        assert read_events(str(out / record['event_file'])) == []


def test_evaluate_perfect_events(pipeline, tmp_path):
    # 事件文件直接写成真值标签
    predictions = tmp_path / 'pred'
    predictions.mkdir()
    index = _read_json(pipeline['pred'] / 'predictions.json')
    for record in index['recordings']:
        (predictions / record['probabilities']).write_bytes((pipeline['pred'] / record['probabilities']).read_bytes())
    (predictions / 'predictions.json').write_text(json.dumps(index), encoding='utf-8')

    n_truth = 0
    for wav_path, label_path in read_manifest(str(pipeline['test'] / 'manifest.txt')):
        rid = os.path.splitext(os.path.basename(wav_path))[0]
        cas = [label for label in read_labels(label_path) if label.kind in CAS_KINDS]
        n_truth += len(cas)
        write_events(str(predictions / f"{rid}.events.txt"),
                     [DetectedEvent(t_start=label.t_start, t_end=label.t_end) for label in cas])

    assert _run('evaluate', '--predictions', predictions, '--manifest', pipeline['test'] / 'manifest.txt',
                '--out', tmp_path / 'eval') == 0
    report = _read_json(tmp_path / 'eval' / 'metrics.json')
    assert report['event']['counts'] == {'tp': n_truth, 'fp': 0, 'fn': 0}
    if n_truth:
        assert report['event']['metrics']['F1'] == 1.0


def test_report_comparison_and_architecture(pipeline, tmp_path):
    metrics_dir = tmp_path / 'metrics'
    assert _run('evaluate', '--predictions', pipeline['pred'], '--manifest', pipeline['test'] / 'manifest.txt',
                '--out', metrics_dir) == 0
    run_config = tmp_path / 'run.env'
    run_config.write_text('GRU_HIDDEN=8\n', encoding='utf-8')

    out = tmp_path / 'report'
    assert _run('report', '--out', out, '--variant', 'Baseline', 'MultiPath', '--config', run_config,
                '--metrics', f"tiny={metrics_dir / 'metrics.json'}",
                '--wav', read_manifest(str(pipeline['test'] / 'manifest.txt'))[0][0]) == 0
    multipath = _read_json(out / 'architecture_MultiPath.json')
    baseline = _read_json(out / 'architecture_Baseline.json')
    assert multipath['total_params'] - baseline['total_params'] == 67968
    assert (out / 'comparison.json').exists() and (out / 'comparison.txt').exists()
    assert (out / 'test_0000_spectrogram.svg').exists()


def test_missing_arguments_is_usage_error(capsys):
    assert _run('train') == 1
    assert _run('predict', '--checkpoint', 'x.ckpt', '--out', 'somewhere') == 1
    assert _run('nonsense') == 1
    error = capsys.readouterr().err
    assert '"code": 1' in error


def test_missing_manifest_is_data_error(tmp_path, capsys):
    assert _run('train', '--manifest', tmp_path / 'missing.txt', '--out', tmp_path / 'out') == 2
    assert 'missing file' in capsys.readouterr().err


def test_unknown_run_config_key_is_usage_error(tmp_path):
    run_config = tmp_path / 'run.env'
    run_config.write_text('LEARNING_SPEED=3\n', encoding='utf-8')
    assert _run('synth', '--out', tmp_path / 'out', '--n', 1, '--config', run_config) == 1


def test_checkpoint_of_wrong_kind_is_data_error(tmp_path):
    junk = tmp_path / 'junk.ckpt'
    junk.write_bytes(b'garbage!' * 4)
    assert _run('predict', '--checkpoint', junk, '--wav', tmp_path / 'a.wav', '--out', tmp_path / 'out',
                '--threshold', 0.5) == 2


def test_benchmark_rejects_few_repetitions(tmp_path):
    assert _run('benchmark', '--out', tmp_path, '--repetitions', 5, *TINY_MODEL) == 1


def test_benchmark_tiny_models(tmp_path):
    assert _run('benchmark', '--out', tmp_path, '--variants', 'CNN96', '--repetitions', 30, '--warmup', 1,
                '--frames', 100, *TINY_MODEL) == 0
    with open(tmp_path / 'benchmark.csv', 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [row['variant'] for row in rows] == ['Baseline', 'CNN96']
    assert float(rows[0]['ratio']) == 1.0
    assert 'ratio' in (tmp_path / 'benchmark.txt').read_text(encoding='utf-8')


@pytest.mark.slow
def test_benchmark_latency_ordering(tmp_path):
    assert _run('benchmark', '--out', tmp_path, '--variants', 'MultiPath', 'CNN96', 'CNN128',
                '--repetitions', 30) == 0
    with open(tmp_path / 'benchmark.csv', 'r', encoding='utf-8', newline='') as f:
        ratios = {row['variant']: float(row['ratio']) for row in csv.DictReader(f)}
    assert ratios['Baseline'] == 1.0
    assert 0.85 <= ratios['MultiPath'] <= 1.15
    assert ratios['CNN128'] > ratios['CNN96'] > 1.0


def _full_chain(root):
    """synth -> train -> predict -> evaluate，返回 (metrics.json, fold_0检查点)"""
    assert _run('synth', '--out', root / 'train', '--n', 6, '--seed', 11) == 0
    assert _run('synth', '--out', root / 'test', '--n', 3, '--split', 'test', '--prefix', 'test',
                '--seed', 12) == 0
    assert _run('train', '--manifest', root / 'train' / 'manifest.txt', '--out', root / 'model',
                '--folds', 2, '--max-epochs', 1, '--seed', 0, *TINY_MODEL) == 0
    checkpoint = root / 'model' / 'fold_0' / 'model.ckpt'
    assert _run('predict', '--checkpoint', checkpoint, '--manifest', root / 'test' / 'manifest.txt',
                '--out', root / 'pred', '--seed', 0) == 0
    assert _run('evaluate', '--predictions', root / 'pred', '--manifest', root / 'test' / 'manifest.txt',
                '--out', root / 'eval', '--seed', 0) == 0
    return root / 'eval' / 'metrics.json', checkpoint


def test_full_rerun_is_byte_identical(tmp_path):
    first_metrics, first_checkpoint = _full_chain(tmp_path / 'first')
    second_metrics, second_checkpoint = _full_chain(tmp_path / 'second')
    assert first_checkpoint.read_bytes() == second_checkpoint.read_bytes()
    assert first_metrics.read_bytes() == second_metrics.read_bytes()

    report = _read_json(first_metrics)
    selected = report['test_selected']
    assert selected['event'] is not None
    assert selected['segment']['metrics']['ACC'] >= report['segment']['metrics']['ACC']


@pytest.mark.slow
def test_postprocessing_beats_raw_events(tmp_path):
    run_config = tmp_path / 'run.env'
    run_config.write_text('LR0=1e-3\n', encoding='utf-8')
    assert _run('synth', '--out', tmp_path / 'train', '--n', 200, '--seed', 0) == 0
    assert _run('synth', '--out', tmp_path / 'test', '--n', 50, '--split', 'test', '--prefix', 'test',
                '--seed', 1) == 0
    assert _run('train', '--manifest', tmp_path / 'train' / 'manifest.txt', '--out', tmp_path / 'model',
                '--variant', 'MultiPath', '--width-scale', 0.25, '--gru-hidden', 32, '--folds', 2,
                '--max-epochs', 60, '--jobs', 2, '--config', run_config, '--seed', 0) == 0
    checkpoint = tmp_path / 'model' / 'fold_0' / 'model.ckpt'
    manifest = tmp_path / 'test' / 'manifest.txt'

    assert _run('predict', '--checkpoint', checkpoint, '--manifest', manifest, '--out', tmp_path / 'merged') == 0
    assert _run('predict', '--checkpoint', checkpoint, '--manifest', manifest, '--out', tmp_path / 'raw',
                '--raw-events', '--threshold', 0.5) == 0
    for name in ('merged', 'raw'):
        assert _run('evaluate', '--predictions', tmp_path / name, '--manifest', manifest,
                    '--out', tmp_path / f"{name}_eval") == 0

    merged = _read_json(tmp_path / 'merged_eval' / 'metrics.json')['event']['metrics']['F1']
    raw = _read_json(tmp_path / 'raw_eval' / 'metrics.json')['event']['metrics']['F1'] or 0.0
    assert merged >= 0.80
    assert merged > raw
