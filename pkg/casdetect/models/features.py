"""
特征模型
帧网格、幅度谱和193维特征矩阵
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .base import BaseModel


@dataclass(repr=False)
class FrameGrid(BaseModel):
    """
    时间帧网格
    第m帧拥有半开区间 [m*hop_s, (m+1)*hop_s)
    """

    n_frames: int
    hop_s: float

    @property
    def span_s(self):
        return self.n_frames * self.hop_s

    def frame_span(self, m):
        return (m * self.hop_s, (m + 1) * self.hop_s)

    def starts(self):
        return np.arange(self.n_frames) * self.hop_s

    def pooled(self, factor=2):
        """池化后的网格：第s步拥有输入帧 factor*s ... factor*s+factor-1"""
        return FrameGrid(n_frames=self.n_frames // factor, hop_s=self.hop_s * factor)

    @classmethod
    def for_samples(cls, n_samples, sample_rate, hop_length=64):
        # 居中分帧
        return cls(n_frames=1 + n_samples // hop_length, hop_s=hop_length / sample_rate)


@dataclass(repr=False, eq=False)
class Spectrogram(BaseModel):
    """幅度谱，行是频点，列是帧"""

    magnitudes: np.ndarray
    sample_rate: int
    n_fft: int
    grid: FrameGrid

    @property
    def freq_resolution(self):
        return self.sample_rate / self.n_fft

    @property
    def n_bins(self):
        return self.magnitudes.shape[0]

    def bin_frequencies(self):
        return np.arange(self.n_bins) * self.freq_resolution

    def power(self):
        return self.magnitudes ** 2


@dataclass(repr=False, eq=False)
class FeatureMatrix(BaseModel):
    """
    按组存放的特征矩阵
    spec_block 129xF, mfcc_block 60xF (静态/一阶/二阶各20行), energy_block 4xF
    spectrogram 保留归一化前的幅度谱，供后处理计算能量峰
    """

    spec_block: np.ndarray
    mfcc_block: np.ndarray
    energy_block: np.ndarray
    grid: FrameGrid
    normalized: bool = False
    spectrogram: Optional[Spectrogram] = None

    @property
    def n_frames(self):
        return self.spec_block.shape[1]

    @property
    def n_features(self):
        return self.spec_block.shape[0] + self.mfcc_block.shape[0] + self.energy_block.shape[0]

    def stacked(self):
        """按 spectrogram | MFCC | energy 顺序拼接成 (193, F)"""
        return np.vstack([self.spec_block, self.mfcc_block, self.energy_block])

    def to_dict(self, exclude=None):
        return {
            'shape': [self.n_features, self.n_frames],
            'grid': self.grid.to_dict(),
            'normalized': self.normalized,
        }
