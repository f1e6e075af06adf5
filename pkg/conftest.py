"""
测试公共配置
强制测试环境，注册slow标记，提供小型合成录音
"""

import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
os.environ['CAS_ENV'] = 'testing'
os.environ['LOG_TO_FILE'] = '0'

import numpy as np
import pytest

from casdetect import create_app
from casdetect.models import Recording, LabelEvent, LabelKind, DatasetEntry

create_app('testing')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='运行耗时的验收测试')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: 耗时的验收测试，需要 --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tone(freq_hz, duration_s=15.0, sample_rate=4000, amplitude=0.5, t_start=0.0, t_end=None, rec_id='tone'):
    """正弦录音，可只在 [t_start, t_end) 内发声"""
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    samples = amplitude * np.sin(2 * np.pi * freq_hz * t)
    if t_end is not None:
        samples[(t < t_start) | (t >= t_end)] = 0.0
    return Recording(id=rec_id, samples=samples, sample_rate=sample_rate)


@pytest.fixture
def tone_recording():
    return make_tone(400.0)


@pytest.fixture
def wheeze_entry():
    """15 s录音，1.0-2.0 s 有一段400 Hz喘鸣，其余是弱噪声"""
    noise = np.random.default_rng(7).standard_normal(60000) * 0.01
    tone = make_tone(400.0, t_start=1.0, t_end=2.0).samples
    recording = Recording(id='wheeze', samples=np.clip(noise + tone, -1, 1))
    labels = [LabelEvent(kind=LabelKind.INHALATION, t_start=0.0, t_end=1.5),
              LabelEvent(kind=LabelKind.WHEEZE, t_start=1.0, t_end=2.0)]
    return DatasetEntry(recording=recording, labels=labels)
