"""
信号输入输出测试
"""

import struct

import numpy as np
import pytest
import soundfile as sf

from casdetect.models import Recording, LabelEvent, LabelKind, Dataset, DatasetEntry, Split
from casdetect.signal_io import (read_wav, write_wav, read_labels, write_labels, read_manifest, write_manifest,
                                 load_dataset, filter_cas_dataset, dataset_statistics, conform_sample_rate)
from casdetect.utils.exceptions import DataError


def _entry(rec_id, kinds):
    recording = Recording(id=rec_id, samples=np.zeros(400))
    labels = [LabelEvent(kind=k, t_start=0.01 * i, t_end=0.01 * i + 0.005) for i, k in enumerate(kinds)]
    return DatasetEntry(recording=recording, labels=labels)


def test_read_wav_duration(tmp_path):
    path = tmp_path / 'a.wav'
    sf.write(path, np.zeros(60000), 4000, subtype='PCM_16')
    recording = read_wav(str(path))
    assert recording.duration_s == 15.0
    assert recording.sample_rate == 4000
    assert recording.id == 'a'
    assert np.all(recording.samples == 0.0)


def test_read_wav_pcm_scaling(tmp_path):
    path = tmp_path / 'scale.wav'
    sf.write(path, np.array([0.5, -0.5, 0.25]), 4000, subtype='PCM_16')
    samples = read_wav(str(path)).samples
    np.testing.assert_allclose(samples, [0.5, -0.5, 0.25], atol=2 / 32768)


def test_read_wav_rejects_stereo(tmp_path):
    path = tmp_path / 'stereo.wav'
    sf.write(path, np.zeros((100, 2)), 4000, subtype='PCM_16')
    with pytest.raises(DataError, match='channel count 2 unsupported'):
        read_wav(str(path))


def test_read_wav_rejects_float_codec(tmp_path):
    path = tmp_path / 'float.wav'
    sf.write(path, np.zeros(100), 4000, subtype='FLOAT')
    with pytest.raises(DataError, match='codec'):
        read_wav(str(path))


def test_read_wav_truncated(tmp_path):
    path = tmp_path / 'cut.wav'
    sf.write(path, np.zeros(1000), 4000, subtype='PCM_16')
    data = path.read_bytes()
    path.write_bytes(data[:-500])
    with pytest.raises(DataError, match='truncated'):
        read_wav(str(path))


def test_read_wav_missing():
    with pytest.raises(DataError, match='missing file'):
        read_wav('/nonexistent/x.wav')


def test_write_wav_roundtrip_is_byte_stable(tmp_path):
    recording = Recording(id='r', samples=np.sin(np.arange(4000) / 10.0) * 0.3)
    write_wav(str(tmp_path / 'one.wav'), recording)
    write_wav(str(tmp_path / 'two.wav'), recording)
    assert (tmp_path / 'one.wav').read_bytes() == (tmp_path / 'two.wav').read_bytes()
    header = (tmp_path / 'one.wav').read_bytes()[:12]
    assert header[:4] == b'RIFF' and header[8:] == b'WAVE'
    assert struct.unpack('<I', header[4:8])[0] > 0


def test_read_labels_parses_and_sorts(tmp_path):
    path = tmp_path / 'l.txt'
    path.write_text('E 3.0 4.5\nW 1.25 2.10\n\n', encoding='utf-8')
    labels = read_labels(str(path))
    assert [l.kind for l in labels] == [LabelKind.WHEEZE, LabelKind.EXHALATION]
    assert labels[0].t_start == 1.25 and labels[0].t_end == 2.10


def test_read_labels_empty_file(tmp_path):
    path = tmp_path / 'empty.txt'
    path.write_text('', encoding='utf-8')
    assert read_labels(str(path)) == []


@pytest.mark.parametrize('content,line,message', [
    ('W 2.0 1.0\n', 1, 't_end ≤ t_start'),
    ('W 0.5 1.0\nX 1.0 2.0\n', 2, 'unknown label kind'),
    ('W 0.5\n', 1, 'expected 3 fields'),
    ('I 0 1\nW a 2\n', 2, 'non-numeric'),
])
def test_read_labels_errors_carry_line(tmp_path, content, line, message):
    path = tmp_path / 'bad.txt'
    path.write_text(content, encoding='utf-8')
    with pytest.raises(DataError, match=message) as info:
        read_labels(str(path))
    assert info.value.details['line'] == line


def test_labels_write_read_identity(tmp_path):
    labels = [LabelEvent(kind="W", t_start=1.2344, t_end=2.0), LabelEvent(kind='I', t_start=0.0, t_end=1.5)]
    path = tmp_path / 'out.txt'
    write_labels(str(path), labels)
    back = read_labels(str(path))
    assert [(l.kind, l.t_start, l.t_end) for l in back] == [
        (LabelKind.INHALATION, 0.0, 1.5), (LabelKind.WHEEZE, 1.234, 2.0)]


def test_manifest_relative_paths(tmp_path):
    (tmp_path / 'wav').mkdir()
    pairs = [(str(tmp_path / 'wav' / 'a.wav'), str(tmp_path / 'a.txt'))]
    manifest = tmp_path / 'manifest.txt'
    write_manifest(str(manifest), pairs)
    assert manifest.read_text(encoding='utf-8').strip() == 'wav/a.wav a.txt'
    assert read_manifest(str(manifest)) == pairs


def test_load_dataset_validates_label_span(tmp_path):
    sf.write(tmp_path / 'a.wav', np.zeros(4000), 4000, subtype='PCM_16')
    (tmp_path / 'a.txt').write_text('W 0.5 2.0\n', encoding='utf-8')
    write_manifest(str(tmp_path / 'm.txt'), [(str(tmp_path / 'a.wav'), str(tmp_path / 'a.txt'))])
    with pytest.raises(DataError, match='exceeds recording duration'):
        load_dataset(str(tmp_path / 'm.txt'))


def test_load_dataset_rejects_other_rate_without_resample(tmp_path):
    sf.write(tmp_path / 'a.wav', np.zeros(8000), 8000, subtype='PCM_16')
    (tmp_path / 'a.txt').write_text('W 0.1 0.5\n', encoding='utf-8')
    write_manifest(str(tmp_path / 'm.txt'), [(str(tmp_path / 'a.wav'), str(tmp_path / 'a.txt'))])
    with pytest.raises(DataError, match='sample rate'):
        load_dataset(str(tmp_path / 'm.txt'))
    dataset = load_dataset(str(tmp_path / 'm.txt'), Split.TEST, resample=True, expected_duration_s=1.0)
    assert dataset[0].recording.sample_rate == 4000
    assert dataset[0].recording.samples.size == 4000
    assert dataset.split is Split.TEST


def test_conform_sample_rate_interpolates():
    recording = Recording(id='r', samples=np.linspace(-0.5, 0.5, 8000), sample_rate=8000)
    out = conform_sample_rate(recording, 4000, resample=True)
    assert out.samples.size == 4000
    np.testing.assert_allclose(out.samples[:3], recording.samples[:6:2])


def test_filter_cas_dataset():
    dataset = Dataset(entries=[_entry('ie', ['I', 'E']), _entry('r', ['R']), _entry('mixed', ['I', 'W']),
                               _entry('none', [])])
    filtered = filter_cas_dataset(dataset)
    assert filtered.ids() == ['r', 'mixed']
    assert filter_cas_dataset(filtered).ids() == filtered.ids()
    assert len(filter_cas_dataset(Dataset())) == 0


def test_dataset_statistics():
    dataset = Dataset(entries=[_entry('a', ['W', 'R', 'I']), _entry('b', ['E'])])
    stats = dataset_statistics(dataset)
    assert stats['recordings'] == 2
    assert stats['recordings_with_cas'] == 1
    assert stats['kinds']['CAS']['count'] == 2
    assert stats['kinds']['W']['count'] == 1
    assert stats['kinds']['S']['mean_duration_s'] is None
    assert stats['kinds']['W']['mean_duration_s'] == pytest.approx(0.005)


def test_recording_rejects_out_of_range():
    with pytest.raises(ValueError):
        Recording(id='x', samples=np.array([0.0, 1.5]))
    with pytest.raises(ValueError):
        Recording(id='x', samples=np.array([np.nan]))
