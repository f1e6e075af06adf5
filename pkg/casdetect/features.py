"""
特征提取模块
高通滤波 -> STFT幅度谱 -> {MFCC60, 频带能量} -> 分组归一化 -> 193维帧特征
"""

from dataclasses import dataclass

import numpy as np
import librosa
import scipy.fft
import scipy.signal

from casdetect.models import FrameGrid, Spectrogram, FeatureMatrix
from casdetect.utils.exceptions import DataError
from casdetect.utils.logger import get_logger, log_performance

logger = get_logger('features')

FEATURE_DUMP_VERSION = 1

# (下限, 上限) Hz，上限达到奈奎斯特频率时包含该频点
ENERGY_BANDS_HZ = ((0.0, 250.0), (250.0, 500.0), (500.0, 1000.0), (0.0, 2000.0))


@dataclass
class FeatureConfig:
    """预处理参数，默认值来自config.Config"""

    sample_rate: int = 4000
    highpass_cutoff_hz: float = 80.0
    highpass_order: int = 4
    n_fft: int = 256
    hop_length: int = 64
    n_mels: int = 40
    mel_fmin_hz: float = 0.0
    mel_fmax_hz: float = 2000.0
    log_floor: float = 1e-10
    n_mfcc: int = 20
    delta_half_width: int = 2

    @classmethod
    def from_config(cls, config):
        return cls(
            sample_rate=config.SAMPLE_RATE,
            highpass_cutoff_hz=config.HIGHPASS_CUTOFF_HZ,
            highpass_order=config.HIGHPASS_ORDER,
            n_fft=config.N_FFT,
            hop_length=config.HOP_LENGTH,
            n_mels=config.N_MELS,
            mel_fmin_hz=config.MEL_FMIN_HZ,
            mel_fmax_hz=config.MEL_FMAX_HZ,
            log_floor=config.LOG_FLOOR,
            n_mfcc=config.N_MFCC,
            delta_half_width=config.DELTA_HALF_WIDTH,
        )


def highpass_80(recording, cutoff_hz=80.0, order=4):
    """
    Butterworth高通滤波，前向-后向零相位

    参数:
        recording: Recording
        cutoff_hz: 截止频率
        order: 滤波器阶数

    返回:
        与输入等长的ndarray
    """
    if recording.sample_rate <= 2 * cutoff_hz:
        raise DataError(f"sample rate {recording.sample_rate} Hz too low for a {cutoff_hz} Hz cutoff",
                        field='sample_rate')

    sos = scipy.signal.butter(order, cutoff_hz, btype='highpass', fs=recording.sample_rate, output='sos')
    try:
        return scipy.signal.sosfiltfilt(sos, recording.samples)
    except ValueError as e:
        raise DataError(f"recording {recording.id}: too short for zero-phase filtering ({e})", field='samples')


def stft(samples, sample_rate, n_fft=256, hop_length=64):
    """
    Hanning窗幅度谱，窗长n_fft，帧移hop_length，两端各反射填充n_fft/2

    参数:
        samples: 一维信号
        sample_rate: 采样率

    返回:
        Spectrogram，形状 (n_fft/2+1, 1+floor(n/hop))
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < n_fft:
        raise DataError(f"signal of {samples.size} samples shorter than one {n_fft}-sample window",
                        field='samples')

    spectrum = librosa.stft(samples, n_fft=n_fft, hop_length=hop_length, win_length=n_fft,
                            window='hann', center=True, pad_mode='reflect')
    grid = FrameGrid.for_samples(samples.size, sample_rate, hop_length)
    return Spectrogram(magnitudes=np.abs(spectrum), sample_rate=sample_rate, n_fft=n_fft, grid=grid)


def mel_filterbank(sample_rate, n_fft, n_mels=40, fmin=0.0, fmax=2000.0):
    return librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=fmin, fmax=fmax,
                               htk=False, norm='slaney', dtype=np.float64)


def mfcc60(spectrogram, config=None):
    """
    静态MFCC + 一阶差分 + 二阶差分

    参数:
        spectrogram: Spectrogram
        config: FeatureConfig

    返回:
        (3*n_mfcc, F) ndarray，行0-19静态，20-39一阶，40-59二阶
    """
    config = config or FeatureConfig()
    fbank = mel_filterbank(spectrogram.sample_rate, spectrogram.n_fft, config.n_mels,
                           config.mel_fmin_hz, config.mel_fmax_hz)
    mel_power = fbank @ spectrogram.power()
    log_mel = np.log(np.maximum(mel_power, config.log_floor))
    static = scipy.fft.dct(log_mel, type=2, axis=0, norm='ortho')[:config.n_mfcc]

    # 回归窗口 ±delta_half_width，边缘复制
    width = 2 * config.delta_half_width + 1
    delta = librosa.feature.delta(static, width=width, order=1, axis=-1, mode='nearest')
    acceleration = librosa.feature.delta(delta, width=width, order=1, axis=-1, mode='nearest')
    return np.vstack([static, delta, acceleration])


def band_energy(spectrogram, bands=ENERGY_BANDS_HZ):
    """
    各频带的功率和

    参数:
        spectrogram: Spectrogram
        bands: ((lo, hi), ...) Hz

    返回:
        (len(bands), F) ndarray
    """
    freqs = spectrogram.bin_frequencies()
    nyquist = spectrogram.sample_rate / 2.0
    power = spectrogram.power()
    rows = []
    for lo, hi in bands:
        upper = freqs <= hi if hi >= nyquist else freqs < hi
        mask = (freqs >= lo) & upper
        rows.append(power[mask].sum(axis=0))
    return np.vstack(rows)


def normalize_group(values):
    """
    对整组做z-score，方差近0时输出全0

    参数:
        values: 有限值矩阵

    返回:
        同形状ndarray
    """
    values = np.asarray(values, dtype=np.float64)
    sigma = values.std()
    if sigma < 1e-12:
        return np.zeros_like(values)
    return (values - values.mean()) / sigma


@log_performance('features')
def assemble_features(recording, config=None):
    """
    完整预处理，七个归一化组各自独立：
    幅度谱；静态MFCC；一阶MFCC；二阶MFCC；四个能量行

    参数:
        recording: Recording
        config: FeatureConfig

    返回:
        FeatureMatrix (193 x F)，并附带归一化前的幅度谱
    """
    config = config or FeatureConfig()
    filtered = highpass_80(recording, config.highpass_cutoff_hz, config.highpass_order)
    spectrogram = stft(filtered, recording.sample_rate, config.n_fft, config.hop_length)
    mfcc = mfcc60(spectrogram, config)
    energy = band_energy(spectrogram)

    n = config.n_mfcc
    mfcc_block = np.vstack([normalize_group(mfcc[i * n:(i + 1) * n]) for i in range(3)])
    energy_block = np.vstack([normalize_group(row[np.newaxis, :]) for row in energy])

    return FeatureMatrix(
        spec_block=normalize_group(spectrogram.magnitudes),
        mfcc_block=mfcc_block,
        energy_block=energy_block,
        grid=spectrogram.grid,
        normalized=True,
        spectrogram=spectrogram,
    )


def save_feature_dump(path, features):
    """
    保存特征（.npz），附带版本号和网格信息

    参数:
        path: 目标路径
        features: FeatureMatrix
    """
    payload = {
        'format_version': np.array(FEATURE_DUMP_VERSION),
        'spec_block': features.spec_block,
        'mfcc_block': features.mfcc_block,
        'energy_block': features.energy_block,
        'n_frames': np.array(features.grid.n_frames),
        'hop_s': np.array(features.grid.hop_s),
        'normalized': np.array(features.normalized),
    }
    if features.spectrogram is not None:
        payload['raw_magnitudes'] = features.spectrogram.magnitudes
        payload['sample_rate'] = np.array(features.spectrogram.sample_rate)
        payload['n_fft'] = np.array(features.spectrogram.n_fft)
    np.savez_compressed(path, **payload)


def load_feature_dump(path):
    """读取save_feature_dump写出的文件"""
    with np.load(path) as data:
        version = int(data['format_version'])
        if version != FEATURE_DUMP_VERSION:
            raise DataError(f"{path}: feature dump version {version} unsupported", field='format_version')
        grid = FrameGrid(n_frames=int(data['n_frames']), hop_s=float(data['hop_s']))
        spectrogram = None
        if 'raw_magnitudes' in data:
            spectrogram = Spectrogram(magnitudes=data['raw_magnitudes'], sample_rate=int(data['sample_rate']),
                                      n_fft=int(data['n_fft']), grid=grid)
        return FeatureMatrix(spec_block=data['spec_block'], mfcc_block=data['mfcc_block'],
                             energy_block=data['energy_block'], grid=grid,
                             normalized=bool(data['normalized']), spectrogram=spectrogram)
