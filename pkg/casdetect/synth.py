"""
合成语料模块
生成带精确标签的合成肺音：粉红噪声呼吸背景 + 谐波正弦CAS事件
频率轮廓覆盖 flat / wiggle / V / W / inverted-V 几种形态
"""

import enum
import os
from dataclasses import dataclass, field

import numpy as np

from casdetect.models import CAS_KINDS, Recording, LabelEvent, LabelKind, Dataset, DatasetEntry, Split
from casdetect.signal_io import write_wav, write_labels, write_manifest
from casdetect.utils.exceptions import UsageError
from casdetect.utils.logger import get_logger

logger = get_logger('synth')

RAMP_S = 0.010
BREATH_PERIOD_S = 3.75
INSPIRATION_FRACTION = 0.4
MIN_EVENT_GAP_S = 0.6
MIN_EVENT_DURATION_S = 0.2
MAX_EVENT_DURATION_S = 2.0
EDGE_MARGIN_S = 0.1
PEAK_LEVEL = 0.9
POLYPHONIC_RATIO = 1.45
RHONCHUS_MAX_F0 = 200.0


class Contour(str, enum.Enum):
    FLAT = 'flat'
    WIGGLE = 'wiggle'
    V = 'V'
    W = 'W'
    INVERTED_V = 'inverted-V'


class BreathPhase(str, enum.Enum):
    INSPIRATORY = 'inspiratory'
    EXPIRATORY = 'expiratory'
    BOTH = 'both'


# (时间比例, 频率偏移比例)；偏移乘以sweep_hz
# V 在中点达到最高频，inverted-V 在中点最低
_CONTOUR_POINTS = {
    Contour.FLAT: ((0.0, 0.0), (1.0, 0.0)),
    Contour.WIGGLE: ((0.0, 0.0), (0.2, 0.5), (0.4, -0.5), (0.6, 0.5), (0.8, -0.5), (1.0, 0.0)),
    Contour.V: ((0.0, 0.0), (0.5, 1.0), (1.0, 0.0)),
    Contour.W: ((0.0, 1.0), (0.25, 0.0), (0.5, 1.0), (0.75, 0.0), (1.0, 1.0)),
    Contour.INVERTED_V: ((0.0, 1.0), (0.5, 0.0), (1.0, 1.0)),
}


@dataclass
class SynthSpec:
    """
    单个CAS事件的合成参数
    kind: W(喘鸣) / S(喘鸣音/stridor) / R(干啰音) / C
    """

    f0: float = 400.0
    n_harmonics: int = 2
    contour: Contour = Contour.FLAT
    phase: BreathPhase = BreathPhase.EXPIRATORY
    polyphonic: bool = False
    snr_db: float = 15.0
    seed: int = 0
    kind: LabelKind = LabelKind.WHEEZE
    sweep_hz: float = 100.0
    harmonic_decay: float = 0.5
    rhonchus_harmonics: bool = False

    def __post_init__(self):
        try:
            self.contour = Contour(self.contour)
            self.phase = BreathPhase(self.phase)
            self.kind = LabelKind(self.kind)
        except ValueError as e:
            raise UsageError(f"invalid synth spec: {e}")
        if self.kind not in CAS_KINDS:
            raise UsageError(f"synth events must be a CAS kind, got {self.kind.value}")
        if self.n_harmonics < 0:
            raise UsageError(f"n_harmonics must be >= 0, got {self.n_harmonics}")
        if self.kind is LabelKind.RHONCHUS:
            if not 0 < self.f0 < RHONCHUS_MAX_F0:
                raise UsageError(f"rhonchus f0 must be below {RHONCHUS_MAX_F0} Hz, got {self.f0}")
        elif not 100.0 <= self.f0 <= 1000.0:
            raise UsageError(f"wheeze/stridor f0 must be in [100, 1000] Hz, got {self.f0}")

    @property
    def effective_harmonics(self):
        if self.kind is LabelKind.RHONCHUS and not self.rhonchus_harmonics:
            return 0
        return self.n_harmonics

    def frequency_contour(self, t_fraction):
        """基频轨迹 f(t)，t_fraction ∈ [0, 1]"""
        points = _CONTOUR_POINTS[self.contour]
        offsets = np.interp(t_fraction, [p[0] for p in points], [p[1] for p in points])
        sweep = self.sweep_hz
        if self.kind is LabelKind.RHONCHUS:
            # 干啰音的轨迹不越过200 Hz
            sweep = min(sweep, RHONCHUS_MAX_F0 - self.f0 - 1.0)
        return self.f0 + offsets * max(sweep, 0.0)


def _raised_cosine_envelope(n, sample_rate, ramp_s=RAMP_S):
    envelope = np.ones(n)
    ramp = min(int(round(ramp_s * sample_rate)), n // 2)
    if ramp > 0:
        edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        envelope[:ramp] = edge
        envelope[n - ramp:] = edge[::-1]
    return envelope


def _tone(freqs, sample_rate, phase0):
    return np.sin(phase0 + 2.0 * np.pi * np.cumsum(freqs) / sample_rate)


def synth_cas(spec, duration_s, t_start, sample_rate=4000, recording_duration_s=15.0):
    """
    合成单个CAS事件

    参数:
        spec: SynthSpec
        duration_s: 事件时长
        t_start: 事件起点（秒）
        sample_rate: 采样率
        recording_duration_s: 所在录音的总时长

    返回:
        (波形片段（单位RMS）, LabelEvent)
    """
    if duration_s <= 0 or t_start < 0 or t_start + duration_s > recording_duration_s + 1e-9:
        raise UsageError(f"event [{t_start}, {t_start + duration_s}) does not fit in {recording_duration_s}s")

    nyquist = sample_rate / 2.0
    n = int(round(duration_s * sample_rate))
    t_fraction = np.linspace(0.0, 1.0, n)
    fundamental = spec.frequency_contour(t_fraction)
    if fundamental.max() >= nyquist:
        raise UsageError(f"contour reaches {fundamental.max():.1f} Hz, above Nyquist {nyquist:.1f} Hz")

    rng = np.random.default_rng(spec.seed)
    components = [(1.0, fundamental)]
    for k in range(2, spec.effective_harmonics + 2):
        if (k * fundamental).max() < nyquist:
            components.append((spec.harmonic_decay ** (k - 1), k * fundamental))
    if spec.polyphonic and (POLYPHONIC_RATIO * fundamental).max() < nyquist:
        components.append((0.7, POLYPHONIC_RATIO * fundamental))

    waveform = sum(amplitude * _tone(freqs, sample_rate, rng.uniform(0, 2 * np.pi))
                   for amplitude, freqs in components)
    waveform *= _raised_cosine_envelope(n, sample_rate)
    waveform /= np.sqrt(np.mean(waveform ** 2))
    # W/S/R 是CAS的细分类型，都在CAS_KINDS里
    label = LabelEvent(kind=spec.kind, t_start=t_start, t_end=t_start + n / sample_rate)
    return waveform, label


def pink_noise(n, rng):
    """1/f功率谱的噪声，单位RMS"""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = np.inf
    noise = np.fft.irfft(spectrum / np.sqrt(freqs), n)
    return noise / np.sqrt(np.mean(noise ** 2))


def breathing_windows(duration_s, phase):
    """呼吸周期内给定相位的时间窗 [(start, end), ...]"""
    windows = []
    cycle = 0.0
    split = INSPIRATION_FRACTION * BREATH_PERIOD_S
    while cycle < duration_s - 1e-9:
        inspiration = (cycle, min(cycle + split, duration_s))
        expiration = (cycle + split, min(cycle + BREATH_PERIOD_S, duration_s))
        if phase is BreathPhase.INSPIRATORY:
            windows.append(inspiration)
        elif phase is BreathPhase.EXPIRATORY:
            windows.append(expiration)
        else:
            windows.append((cycle, min(cycle + BREATH_PERIOD_S, duration_s)))
        cycle += BREATH_PERIOD_S
    return [(s, e) for s, e in windows if e > s]


@dataclass
class SynthMix:
    """
    语料分布
    event_count_weights[i] 为一条录音含 i 个CAS事件的概率
    """

    event_count_weights: tuple = (0.1, 0.25, 0.3, 0.2, 0.15)
    mean_duration_s: float = 0.84
    duration_shape: float = 6.0
    kind_weights: dict = field(default_factory=lambda: {'W': 0.7, 'S': 0.1, 'R': 0.2})
    contours: tuple = tuple(c.value for c in Contour)
    phases: tuple = tuple(p.value for p in BreathPhase)
    harmonics: tuple = (0, 1, 2, 3)
    snr_db_range: tuple = (10.0, 20.0)
    polyphonic_probability: float = 0.2
    duration_s: float = 15.0
    sample_rate: int = 4000
    breath_labels: bool = True

    def __post_init__(self):
        weights = np.asarray(self.event_count_weights, dtype=np.float64)
        if weights.size == 0 or weights.min() < 0 or weights.sum() <= 0:
            raise UsageError(f"invalid event_count_weights {self.event_count_weights}")
        self.event_count_weights = tuple((weights / weights.sum()).tolist())

    @classmethod
    def no_events(cls, **kwargs):
        return cls(event_count_weights=(1.0,), **kwargs)


def _event_spec(mix, rng):
    kinds = sorted(mix.kind_weights)
    weights = np.array([mix.kind_weights[k] for k in kinds], dtype=np.float64)
    kind = LabelKind(kinds[rng.choice(len(kinds), p=weights / weights.sum())])
    if kind is LabelKind.RHONCHUS:
        f0 = rng.uniform(100.0, 180.0)
        sweep = rng.uniform(0.0, RHONCHUS_MAX_F0 - f0 - 1.0)
    else:
        f0 = rng.uniform(150.0, 800.0)
        sweep = rng.uniform(30.0, 150.0)
    return SynthSpec(
        f0=f0,
        n_harmonics=int(rng.choice(mix.harmonics)),
        contour=mix.contours[rng.integers(len(mix.contours))],
        polyphonic=bool(rng.random() < mix.polyphonic_probability),
        snr_db=rng.uniform(*mix.snr_db_range),
        seed=int(rng.integers(2 ** 31)),
        kind=kind,
        sweep_hz=sweep,
    )


def _place_events(mix, rng, n_events, phase):
    windows = breathing_windows(mix.duration_s, phase)
    if n_events == 0 or not windows:
        return []
    chosen = sorted(rng.choice(len(windows), size=min(n_events, len(windows)), replace=False).tolist())

    placed = []
    for index in chosen:
        start, end = windows[index]
        start = max(start, EDGE_MARGIN_S)
        end = min(end, mix.duration_s - EDGE_MARGIN_S)
        if placed:
            start = max(start, placed[-1][1] + MIN_EVENT_GAP_S)
        room = end - start
        if room < MIN_EVENT_DURATION_S:
            continue
        duration = rng.gamma(mix.duration_shape, mix.mean_duration_s / mix.duration_shape)
        duration = float(np.clip(duration, MIN_EVENT_DURATION_S, min(MAX_EVENT_DURATION_S, room)))
        t_start = start + rng.uniform(0.0, room - duration)
        # 标签文件保留毫秒，事件起止对齐到整毫秒
        t_start = round(t_start, 3)
        duration = round(duration, 3)
        placed.append((t_start, t_start + duration))
    return placed


def synth_recording(recording_id, mix, rng):
    """
    生成一条合成录音

    返回:
        DatasetEntry
    """
    sr = mix.sample_rate
    n = int(round(mix.duration_s * sr))
    t = np.arange(n) / sr

    background = pink_noise(n, rng)
    background *= 0.6 + 0.4 * np.sin(np.pi * t / BREATH_PERIOD_S) ** 2
    noise_rms = np.sqrt(np.mean(background ** 2))

    n_events = int(rng.choice(len(mix.event_count_weights), p=mix.event_count_weights))
    phase = BreathPhase(mix.phases[rng.integers(len(mix.phases))])

    signal = background.copy()
    labels = []
    for t_start, t_end in _place_events(mix, rng, n_events, phase):
        spec = _event_spec(mix, rng)
        spec.phase = phase
        segment, label = synth_cas(spec, t_end - t_start, t_start, sr, mix.duration_s)
        first = int(round(t_start * sr))
        signal[first:first + segment.size] += segment * noise_rms * 10.0 ** (spec.snr_db / 20.0)
        labels.append(label)

    if mix.breath_labels:
        for s, e in breathing_windows(mix.duration_s, BreathPhase.INSPIRATORY):
            labels.append(LabelEvent(kind=LabelKind.INHALATION, t_start=round(s, 3), t_end=round(e, 3)))
        for s, e in breathing_windows(mix.duration_s, BreathPhase.EXPIRATORY):
            labels.append(LabelEvent(kind=LabelKind.EXHALATION, t_start=round(s, 3), t_end=round(e, 3)))

    signal *= PEAK_LEVEL / np.max(np.abs(signal))
    labels.sort(key=lambda label: (label.t_start, label.kind.value))
    return DatasetEntry(recording=Recording(id=recording_id, samples=signal, sample_rate=sr), labels=labels)


def synth_corpus(n_recordings, mix=None, seed=0, split=Split.TRAIN, prefix='synth'):
    """
    生成合成语料

    参数:
        n_recordings: 录音数
        mix: SynthMix
        seed: 根种子，每条录音用SeedSequence派生子种子
        split: 数据集划分
        prefix: 录音id前缀

    返回:
        Dataset
    """
    if n_recordings < 1:
        raise UsageError(f"n_recordings must be >= 1, got {n_recordings}")
    mix = mix or SynthMix()
    children = np.random.SeedSequence(seed).spawn(n_recordings)
    entries = [synth_recording(f"{prefix}_{i:04d}", mix, np.random.default_rng(child))
               for i, child in enumerate(children)]
    n_events = sum(len(entry.cas_labels()) for entry in entries)
    logger.info(f"合成语料: {n_recordings} 条录音, {n_events} 个CAS事件 (seed={seed})")
    return Dataset(entries=entries, split=split)


def write_corpus(dataset, out_dir, manifest_name='manifest.txt'):
    """
    写出 wav/、labels/ 和清单文件

    返回:
        清单路径
    """
    wav_dir = os.path.join(out_dir, 'wav')
    label_dir = os.path.join(out_dir, 'labels')
    os.makedirs(wav_dir, exist_ok=True)
    os.makedirs(label_dir, exist_ok=True)

    pairs = []
    for entry in dataset:
        wav_path = os.path.join(wav_dir, f"{entry.recording.id}.wav")
        label_path = os.path.join(label_dir, f"{entry.recording.id}.txt")
        write_wav(wav_path, entry.recording)
        write_labels(label_path, entry.labels)
        pairs.append((wav_path, label_path))

    manifest_path = os.path.join(out_dir, manifest_name)
    write_manifest(manifest_path, pairs)
    return manifest_path
