"""
模型结构测试
参数量核算、输出长度、推理、检查点
"""

import numpy as np
import pytest

from casdetect.architectures import (ModelSpec, Variant, build_model, count_params, architecture_report,
                                     format_architecture_report, predict, REFERENCE_PARAM_COUNTS)
from casdetect.features import assemble_features
from casdetect.models import FrameGrid, FeatureMatrix
from casdetect.nn import Conv2D, Dense, ResidualBlock, layer_forward
from casdetect.nn.checkpoint import save_checkpoint, load_checkpoint, read_checkpoint_header
from casdetect.utils.exceptions import DataError, ShapeError, UsageError


def _tiny(variant=Variant.BASELINE, seed=0):
    return build_model(ModelSpec(variant=variant, width_scale=0.05, gru_hidden=4, seed=seed))


def _features(rng, n_frames=40):
    return FeatureMatrix(spec_block=rng.standard_normal((129, n_frames)),
                         mfcc_block=rng.standard_normal((60, n_frames)),
                         energy_block=rng.standard_normal((4, n_frames)),
                         grid=FrameGrid(n_frames=n_frames, hop_s=0.016), normalized=True)


def _conv_stack_params(channels):
    return (6 * 6 * 1 * channels + channels) + (4 * 4 * channels * channels + channels)


def test_hand_counts():
    assert Dense('dense', 4, 3).param_count() == 15
    assert Conv2D('conv', 1, 64, 6).param_count() == 2368


def test_multipath_adds_exactly_one_conv_stack():
    baseline = build_model(ModelSpec(variant=Variant.BASELINE, gru_hidden=8))
    multipath = build_model(ModelSpec(variant=Variant.MULTIPATH, gru_hidden=8))
    difference = count_params(multipath)['total'] - count_params(baseline)['total']

    aux_layers = {name: n for name, n in count_params(multipath)['layers'].items() if name.startswith('aux_path/')}
    assert difference == sum(aux_layers.values())
    assert difference == _conv_stack_params(64) == 67968

    head = ('bigru', 'dense')
    for name in head:
        assert count_params(multipath)['layers'][name] == count_params(baseline)['layers'][name]


def test_flattened_widths_match():
    multipath = architecture_report(build_model(ModelSpec(variant=Variant.MULTIPATH, gru_hidden=8)))
    concat = next(row for row in multipath['rows'] if row['name'] == 'concat')
    assert concat['output_shape'] == [469, 6144]

    baseline = architecture_report(build_model(ModelSpec(variant=Variant.BASELINE, gru_hidden=8)))
    flatten = next(row for row in baseline['rows'] if row['name'] == 'cnn/flatten')
    assert flatten['output_shape'] == [469, 64 * 96]


def test_param_count_monotonic_in_kernels():
    totals = {v: count_params(build_model(ModelSpec(variant=v, gru_hidden=8)))['total']
              for v in (Variant.BASELINE, Variant.CNN96, Variant.CNN128)}
    assert totals[Variant.CNN128] > totals[Variant.CNN96] > totals[Variant.BASELINE]


@pytest.mark.slow
def test_default_multipath_close_to_baseline():
    baseline = count_params(build_model(ModelSpec(variant=Variant.BASELINE)))['total']
    multipath = count_params(build_model(ModelSpec(variant=Variant.MULTIPATH)))['total']
    assert abs(multipath - baseline) / baseline < 0.02
    published = REFERENCE_PARAM_COUNTS['MultiPath'] - REFERENCE_PARAM_COUNTS['Baseline']
    assert abs((multipath - baseline) - published) < 1000


def test_rb2_has_four_three_by_three_convs():
    model = build_model(ModelSpec(variant=Variant.RB2, gru_hidden=4, width_scale=0.1))
    convs = [leaf for _, leaf in model._leaves() if isinstance(leaf, Conv2D)]
    assert sum(1 for conv in convs if conv.kernel_h == 3) == 4
    # 第一个残差块 1 -> C 通道，带1x1投影
    assert sum(1 for conv in convs if conv.kernel_h == 1) == 1


def test_residual_block_identity_with_zero_convs(rng):
    block = ResidualBlock('block', 3, 3, rng=rng)
    for conv in (block.conv1, block.conv2):
        conv.weights['kernel'][:] = 0.0
    x = rng.standard_normal((2, 3, 5, 4))
    y, _ = layer_forward(block, x)
    np.testing.assert_array_equal(y, np.maximum(x, 0.0))


@pytest.mark.parametrize('variant', list(Variant))
@pytest.mark.parametrize('n_frames', [938, 470, 100])
def test_output_length(variant, n_frames, rng):
    model = _tiny(variant)
    probabilities, _ = model.forward(rng.standard_normal((1, 193, n_frames)))
    assert probabilities.shape == (1, n_frames // 2)
    assert model.output_length(n_frames) == n_frames // 2
    assert np.all((probabilities > 0) & (probabilities < 1))


def test_predict_zero_head_gives_half(rng):
    model = _tiny(Variant.MULTIPATH)
    model.head[1].weights['kernel'][:] = 0.0
    probabilities, grid = predict(model, _features(rng))
    assert np.all(probabilities == 0.5)
    assert grid == FrameGrid(n_frames=20, hop_s=0.032)


def test_predict_is_deterministic(wheeze_entry):
    model = _tiny(Variant.RB1)
    features = assemble_features(wheeze_entry.recording)
    first, grid = predict(model, features)
    second, _ = predict(model, features)
    assert first.shape == (469,)
    assert grid.n_frames == 469
    np.testing.assert_array_equal(first, second)


def test_predict_rejects_raw_features(rng):
    features = _features(rng)
    features.normalized = False
    with pytest.raises(DataError, match='normalized'):
        predict(_tiny(), features)


def test_forward_rejects_wrong_feature_count(rng):
    with pytest.raises(ShapeError):
        _tiny().forward(rng.standard_normal((1, 190, 20)))


@pytest.mark.parametrize('kwargs', [
    {'variant': 'MultiPath', 'conv_kernels': 96},
    {'variant': 'Baseline', 'conv_kernels': 80},
    {'variant': 'Wide'},
    {'variant': 'Baseline', 'gru_hidden': 0},
    {'variant': 'Baseline', 'width_scale': 0.0},
])
def test_invalid_spec(kwargs):
    with pytest.raises(UsageError):
        ModelSpec(**kwargs)


def test_spec_from_mapping_casts_strings():
    spec = ModelSpec.from_mapping({'variant': 'CNN96', 'gru_hidden': '32', 'unrelated': 'x'}, width_scale=0.5)
    assert spec.variant is Variant.CNN96
    assert spec.conv_kernels == 96 and spec.gru_hidden == 32 and spec.width_scale == 0.5


def test_architecture_report_table():
    model = _tiny(Variant.BASELINE)
    report = architecture_report(model, n_frames=938)
    assert report['total_params'] == count_params(model)['total']
    assert report['output_length'] == 469
    assert report['rows'][0] == {'name': 'cnn/input', 'output_shape': [1, 938, 193], 'params': 0}
    assert report['rows'][-1]['output_shape'] == [469, 1]
    assert sum(row['params'] for row in report['rows']) == report['total_params']
    text = format_architecture_report(report)
    assert 'total trainable params' in text and 'cnn/conv1' in text


def test_checkpoint_is_byte_stable(tmp_path):
    save_checkpoint(str(tmp_path / 'a.ckpt'), _tiny(Variant.RB2, seed=3), extra={'fold': 1})
    save_checkpoint(str(tmp_path / 'b.ckpt'), _tiny(Variant.RB2, seed=3), extra={'fold': 1})
    assert (tmp_path / 'a.ckpt').read_bytes() == (tmp_path / 'b.ckpt').read_bytes()
    assert (tmp_path / 'a.ckpt').read_bytes()[:8] == b'CASCKPT1'


def test_checkpoint_roundtrip_preserves_predictions(tmp_path, rng):
    model = _tiny(Variant.RB1, seed=5)
    # BatchNorm滑动统计量也要保存
    model.forward(rng.standard_normal((2, 193, 30)), training=True, rng=rng)
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, model, extra={'threshold': 0.42})

    loaded, extra = load_checkpoint(path)
    features = _features(rng)
    np.testing.assert_array_equal(predict(loaded, features)[0], predict(model, features)[0])
    assert extra == {'threshold': 0.42}
    header, _ = read_checkpoint_header(path)
    assert header['model_spec']['variant'] == 'RB1'
    assert header['seed'] == 5


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / 'junk.ckpt'
    path.write_bytes(b'NOTACKPT' + b'\0' * 16)
    with pytest.raises(DataError, match='not a checkpoint'):
        load_checkpoint(str(path))


def test_set_tensor_shape_checked():
    model = _tiny()
    name = next(iter(model.named_params()))
    with pytest.raises(ShapeError):
        model.set_tensor(name, np.zeros((1, 2, 3, 4, 5)))
    with pytest.raises(DataError, match='unknown tensor'):
        model.set_tensor('nope/kernel', np.zeros(1))
