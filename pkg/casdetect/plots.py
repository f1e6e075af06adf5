"""
静态SVG报告
ROC曲线、带事件标注的幅度谱
"""

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import numpy as np

from casdetect.models import CAS_KINDS

# 固定SVG内部id和元数据，同样输入得到同样的文件
matplotlib.rcParams['svg.hashsalt'] = 'casdetect'
_SVG_METADATA = {'Date': None, 'Creator': None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=_SVG_METADATA)
    plt.close(fig)
    return path


def plot_roc_svg(curves, path):
    """
    参数:
        curves: {名称: RocCurve}
        path: 输出.svg路径
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], c='grey', alpha=0.5, linestyle='--')
    for name, curve in curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{name} (AUC = {curve.auc:.3f})")
    ax.set_xlabel('False Positive Rate')
    ax.set_ylabel('True Positive Rate')
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.grid(True)
    ax.legend(loc='lower right')
    return _save(fig, path)


def plot_spectrogram_events_svg(spectrogram, path, labels=(), events=(), probabilities=None, output_grid=None,
                                threshold=None, title=None):
    """
    幅度谱(dB) + 真值CAS标签 + 检测事件，可选叠加概率曲线

    参数:
        spectrogram: 归一化前的Spectrogram
        path: 输出.svg路径
        labels: LabelEvent列表（只画CAS）
        events: DetectedEvent列表
        probabilities: (k,) 模型输出
        output_grid: 概率对应的FrameGrid
        threshold: θ
        title: 标题
    """
    rows = 2 if probabilities is not None else 1
    fig, axes = plt.subplots(rows, 1, figsize=(10, 3 * rows), sharex=True, squeeze=False)
    ax = axes[0, 0]

    db = 20.0 * np.log10(np.maximum(spectrogram.magnitudes, 1e-10))
    extent = [0.0, spectrogram.grid.span_s, 0.0, spectrogram.sample_rate / 2.0]
    ax.imshow(db, origin='lower', aspect='auto', extent=extent, cmap='magma', vmin=db.max() - 80.0)
    for label in labels:
        if label.kind in CAS_KINDS:
            ax.axvspan(label.t_start, label.t_end, ymin=0.92, ymax=1.0, color='tab:green', alpha=0.8)
    for event in events:
        ax.axvspan(event.t_start, event.t_end, ymin=0.0, ymax=0.08, color='tab:cyan', alpha=0.8)
        if event.peak_freq is not None:
            ax.hlines(event.peak_freq, event.t_start, event.t_end, colors='white', linewidth=0.8)
    ax.set_ylabel('Frequency (Hz)')
    if title:
        ax.set_title(title)

    if probabilities is not None:
        ax2 = axes[1, 0]
        grid = output_grid
        times = grid.starts() if grid is not None else np.arange(len(probabilities))
        ax2.step(times, probabilities, where='post')
        if threshold is not None:
            ax2.axhline(threshold, color='grey', linestyle='--')
        ax2.set_ylim(0, 1)
        ax2.set_ylabel('P(CAS)')
        ax2.grid(True)
    axes[-1, 0].set_xlabel('Time (s)')
    return _save(fig, path)
