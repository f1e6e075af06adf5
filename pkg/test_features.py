"""
特征提取测试
形状链、滤波器响应、MFCC独立实现对照、分组归一化
"""

import numpy as np
import pytest

from casdetect import features
from casdetect.features import (FeatureConfig, highpass_80, stft, mfcc60, band_energy, normalize_group,
                                assemble_features, save_feature_dump, load_feature_dump)
from casdetect.models import Recording, FrameGrid, Spectrogram
from casdetect.utils.exceptions import DataError
from conftest import make_tone


def _spectrogram(magnitudes, sample_rate=4000):
    grid = FrameGrid(n_frames=magnitudes.shape[1], hop_s=64 / sample_rate)
    return Spectrogram(magnitudes=magnitudes, sample_rate=sample_rate, n_fft=256, grid=grid)


def _slaney_mel(hz):
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = hz / f_sp
    log_region = hz >= 1000.0
    mels[log_region] = 1000.0 / f_sp + np.log(hz[log_region] / 1000.0) / (np.log(6.4) / 27.0)
    return mels


def _slaney_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    hz = mels * f_sp
    min_log_mel = 1000.0 / f_sp
    log_region = mels >= min_log_mel
    hz[log_region] = 1000.0 * np.exp((np.log(6.4) / 27.0) * (mels[log_region] - min_log_mel))
    return hz


def _reference_mfcc(power, sample_rate=4000, n_fft=256, n_mels=40, fmax=2000.0, n_mfcc=20):
    """直接按三角滤波器与DCT-II定义写出的静态MFCC"""
    fft_freqs = np.linspace(0, sample_rate / 2, 1 + n_fft // 2)
    edges = _slaney_hz(np.linspace(_slaney_mel(np.array([0.0]))[0], _slaney_mel(np.array([fmax]))[0], n_mels + 2))
    bank = np.zeros((n_mels, fft_freqs.size))
    for i in range(n_mels):
        lower = (fft_freqs - edges[i]) / (edges[i + 1] - edges[i])
        upper = (edges[i + 2] - fft_freqs) / (edges[i + 2] - edges[i + 1])
        bank[i] = np.maximum(0, np.minimum(lower, upper)) * 2.0 / (edges[i + 2] - edges[i])

    log_mel = np.log(np.maximum(bank @ power, 1e-10))
    n = np.arange(n_mels)
    basis = np.array([np.cos(np.pi * k * (2 * n + 1) / (2 * n_mels)) for k in range(n_mfcc)])
    basis *= np.sqrt(2.0 / n_mels)
    basis[0] *= np.sqrt(0.5)
    return basis @ log_mel


def test_stft_shape_for_fifteen_seconds():
    spectrogram = stft(np.zeros(60000), 4000)
    assert spectrogram.magnitudes.shape == (129, 938)
    assert spectrogram.grid.n_frames == 938
    assert spectrogram.freq_resolution == 15.625
    assert np.all(spectrogram.magnitudes == 0.0)


@pytest.mark.parametrize('n_samples', [256, 1000, 4097, 60001])
def test_frame_count_follows_centered_framing(n_samples):
    assert stft(np.ones(n_samples), 4000).magnitudes.shape[1] == 1 + n_samples // 64


def test_stft_rejects_short_signal():
    with pytest.raises(DataError, match='shorter than one'):
        stft(np.zeros(255), 4000)


def test_stft_sine_peaks_at_expected_bin():
    spectrogram = stft(make_tone(500.0, duration_s=2.0, amplitude=1.0).samples, 4000)
    interior = spectrogram.magnitudes[:, 4:-4]
    assert np.all(np.argmax(interior, axis=0) == 32)

    power = interior ** 2
    near = power[30:35].sum(axis=0)
    assert np.all(near >= 0.9 * power.sum(axis=0))


def test_highpass_removes_dc():
    recording = Recording(id='dc', samples=np.full(16000, 0.5))
    out = highpass_80(recording)
    assert out.shape == recording.samples.shape
    assert np.max(np.abs(out[2000:-2000])) < 1e-3


def test_highpass_passband_and_stopband():
    passband = highpass_80(make_tone(500.0, duration_s=4.0, amplitude=1.0))
    expected = 1.0 / (1.0 + (80.0 / 500.0) ** 8)
    assert np.max(np.abs(passband[4000:-4000])) == pytest.approx(expected, rel=0.01)

    stopband = highpass_80(make_tone(10.0, duration_s=30.0, amplitude=1.0))
    assert np.max(np.abs(stopband[40000:-40000])) < 1e-5


def test_highpass_rejects_low_sample_rate():
    with pytest.raises(DataError, match='too low'):
        highpass_80(Recording(id='slow', samples=np.zeros(1000), sample_rate=150))


def test_mfcc_shape_and_constant_deltas():
    column = np.random.default_rng(3).random(129) + 0.1
    spectrogram = _spectrogram(np.tile(column[:, np.newaxis], (1, 938)))
    mfcc = mfcc60(spectrogram)
    assert mfcc.shape == (60, 938)
    assert np.max(np.abs(mfcc[20:])) < 1e-9


def test_mfcc_static_matches_reference(rng):
    spectrogram = _spectrogram(rng.random((129, 50)) * 3.0)
    static = mfcc60(spectrogram)[:20]
    reference = _reference_mfcc(spectrogram.power())
    np.testing.assert_allclose(static, reference, rtol=1e-9, atol=1e-9)


def test_band_energy_single_bin():
    magnitudes = np.zeros((129, 5))
    magnitudes[19] = 2.0  # 296.875 Hz
    energy = band_energy(_spectrogram(magnitudes))
    assert energy.shape == (4, 5)
    assert np.all(energy[0] == 0) and np.all(energy[2] == 0)
    assert np.all(energy[1] == 4.0) and np.all(energy[3] == 4.0)


def test_band_energy_full_band_covers_subbands(rng):
    spectrogram = _spectrogram(rng.random((129, 938)))
    energy = band_energy(spectrogram)
    assert energy.shape == (4, 938)
    assert np.all(energy[3] >= energy[:3].sum(axis=0) - 1e-12)
    np.testing.assert_allclose(energy[3], spectrogram.power().sum(axis=0))


def test_normalize_group(rng):
    values = rng.normal(3.0, 2.0, size=(7, 40))
    out = normalize_group(values)
    assert abs(out.mean()) < 1e-9
    assert out.var() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(normalize_group(out), out, atol=1e-9)
    assert np.all(normalize_group(np.full((3, 3), 5.0)) == 0.0)


def test_assemble_features_shapes_and_groups(wheeze_entry):
    matrix = assemble_features(wheeze_entry.recording)
    assert matrix.stacked().shape == (193, 938)
    assert matrix.normalized
    groups = [matrix.spec_block, matrix.mfcc_block[:20], matrix.mfcc_block[20:40], matrix.mfcc_block[40:]]
    groups += [matrix.energy_block[i] for i in range(4)]
    for group in groups:
        assert abs(group.mean()) < 1e-6
        assert group.std() == pytest.approx(1.0, abs=1e-6)


def test_assemble_features_zero_recording():
    matrix = assemble_features(Recording(id='silent', samples=np.zeros(60000)))
    assert np.all(matrix.stacked() == 0.0)


def test_assemble_features_is_deterministic(wheeze_entry):
    first = assemble_features(wheeze_entry.recording).stacked()
    second = assemble_features(wheeze_entry.recording).stacked()
    assert np.array_equal(first, second)


def test_wheeze_ridge_in_spectrogram(wheeze_entry):
    matrix = assemble_features(wheeze_entry.recording)
    frames = np.arange(938) * 64 / 4000
    labelled = (frames >= 1.05) & (frames < 1.95)
    peaks = np.argmax(matrix.spec_block[:, labelled], axis=0)
    assert np.all(np.abs(peaks - 400 / 15.625) <= 1)


def test_groups_do_not_share_statistics(wheeze_entry, monkeypatch, rng):
    baseline = assemble_features(wheeze_entry.recording)
    original = features.band_energy
    replacement = rng.random(938) * 50

    def perturbed(spectrogram, bands=features.ENERGY_BANDS_HZ):
        energy = original(spectrogram, bands)
        energy[0] = replacement
        return energy

    monkeypatch.setattr(features, 'band_energy', perturbed)
    changed = assemble_features(wheeze_entry.recording)
    assert not np.allclose(changed.energy_block[0], baseline.energy_block[0])
    np.testing.assert_array_equal(changed.energy_block[1:], baseline.energy_block[1:])
    np.testing.assert_array_equal(changed.spec_block, baseline.spec_block)
    np.testing.assert_array_equal(changed.mfcc_block, baseline.mfcc_block)


def test_feature_dump_roundtrip(tmp_path, wheeze_entry):
    matrix = assemble_features(wheeze_entry.recording)
    path = tmp_path / 'wheeze.npz'
    save_feature_dump(str(path), matrix)
    loaded = load_feature_dump(str(path))
    np.testing.assert_array_equal(loaded.stacked(), matrix.stacked())
    np.testing.assert_array_equal(loaded.spectrogram.magnitudes, matrix.spectrogram.magnitudes)
    assert loaded.grid == matrix.grid
    assert loaded.normalized


def test_feature_dump_rejects_unknown_version(tmp_path):
    path = tmp_path / 'old.npz'
    np.savez(path, format_version=np.array(99))
    with pytest.raises(DataError, match='version 99'):
        load_feature_dump(str(path))


def test_feature_config_from_config():
    from config.config import TestingConfig
    config = FeatureConfig.from_config(TestingConfig)
    assert config.n_fft == 256 and config.hop_length == 64
    assert config.n_mfcc == 20 and config.n_mels == 40
