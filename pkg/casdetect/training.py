"""
训练模块
5折交叉验证，Adam(1e-4)，验证损失平台期衰减0.2倍，50个epoch无改进提前停止
"""

import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from casdetect.architectures import build_model
from casdetect.evaluation import rasterize_labels, segment_confusion, segment_metrics, select_threshold
from casdetect.features import FeatureConfig, assemble_features
from casdetect.nn import AdamState, adam_step, bce_loss
from casdetect.signal_io import filter_cas_dataset
from casdetect.utils.exceptions import DataError, NumericError, ShapeError, UsageError
from casdetect.utils.logger import get_logger, LogContext

logger = get_logger('training')

STOP_EARLY = 'early_stop'
STOP_MAX_EPOCHS = 'max_epochs'


@dataclass
class TrainConfig:
    """训练超参数"""

    lr0: float = 1e-4
    decay_factor: float = 0.2
    plateau_patience: int = 10
    early_stop_patience: int = 50
    n_folds: int = 5
    batch_size: int = 16
    max_epochs: int = 200
    seed: int = 0
    show_progress: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.decay_factor < 1:
            raise UsageError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if self.plateau_patience >= self.early_stop_patience:
            raise UsageError(f"plateau_patience ({self.plateau_patience}) must be smaller than "
                             f"early_stop_patience ({self.early_stop_patience})")
        if self.lr0 <= 0:
            raise UsageError(f"lr0 must be positive, got {self.lr0}")
        for name in ('plateau_patience', 'n_folds', 'batch_size', 'max_epochs'):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def from_config(cls, config):
        return cls(lr0=config.LR0, decay_factor=config.DECAY_FACTOR, plateau_patience=config.PLATEAU_PATIENCE,
                   early_stop_patience=config.EARLY_STOP_PATIENCE, n_folds=config.N_FOLDS,
                   batch_size=config.BATCH_SIZE, max_epochs=config.MAX_EPOCHS, seed=config.SEED)

    @classmethod
    def from_mapping(cls, mapping, base=None, **overrides):
        """
        从配置文件的字符串字典构建，未给出的字段沿用base
        """
        casts = {'lr0': float, 'decay_factor': float, 'plateau_patience': int, 'early_stop_patience': int,
                 'n_folds': int, 'batch_size': int, 'max_epochs': int, 'seed': int}
        values = asdict(base) if base is not None else {}
        values.update({key: casts[key](value) for key, value in mapping.items() if key in casts})
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class History:
    """逐epoch记录，lr是该epoch训练时使用的学习率"""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopping_reason: Optional[str] = None

    @property
    def best_val_loss(self):
        if self.best_epoch is None:
            return None
        return self.records[self.best_epoch - 1].val_loss

    def lrs(self):
        return [record.lr for record in self.records]

    def to_dict(self):
        return {
            'records': [asdict(record) for record in self.records],
            'best_epoch': self.best_epoch,
            'stopping_reason': self.stopping_reason,
        }


class PlateauSchedule:
    """
    验证损失调度
    "无改进"指没有出现新的严格最小值。
    plateau计数在新最小值或衰减后清零；提前停止计数只在新最小值时清零。
    """

    def __init__(self, config):
        self.config = config
        self.lr = config.lr0
        self.best = np.inf
        self.since_best = 0
        self.since_plateau = 0
        self.decays = 0

    def step(self, val_loss):
        """
        喂入一个epoch的验证损失

        返回:
            dict: improved, decayed, stop
        """
        improved = val_loss < self.best
        decayed = False
        if improved:
            self.best = val_loss
            self.since_best = 0
            self.since_plateau = 0
        else:
            self.since_best += 1
            self.since_plateau += 1
            if self.since_plateau >= self.config.plateau_patience:
                self.decays += 1
                self.lr = self.config.lr0 * self.config.decay_factor ** self.decays
                self.since_plateau = 0
                decayed = True
        return {'improved': improved, 'decayed': decayed,
                'stop': self.since_best >= self.config.early_stop_patience}


def kfold_split(dataset, n_folds=5, seed=0):
    """
    打乱后切成n_folds份，第i折用第i份做验证

    返回:
        [(train_part, val_part), ...]
    """
    n = len(dataset)
    if n_folds < 2:
        raise UsageError(f"n_folds must be >= 2, got {n_folds}")
    if n < n_folds:
        raise DataError(f"dataset of {n} recordings is smaller than n_folds={n_folds}", field='dataset')

    order = np.random.default_rng(seed).permutation(n)
    folds = []
    for part in np.array_split(order, n_folds):
        val_idx = sorted(part.tolist())
        held_out = set(val_idx)
        train_idx = [i for i in range(n) if i not in held_out]
        folds.append((dataset.subset(train_idx), dataset.subset(val_idx)))
    return folds


def prepare_examples(dataset, feature_config=None, cache=None):
    """
    提取特征并生成输出分辨率上的目标向量

    参数:
        dataset: Dataset（每条录音都必须含CAS）
        feature_config: FeatureConfig
        cache: 可选 {录音id: (x, y)}，跨折复用

    返回:
        (X (N, 193, F), Y (N, F//2))
    """
    feature_config = feature_config or FeatureConfig()
    xs, ys = [], []
    for entry in dataset:
        rid = entry.recording.id
        if not entry.has_cas:
            raise DataError(f"recording {rid} has no CAS label; run filter_cas_dataset first", field='recording')
        if cache is not None and rid in cache:
            x, y = cache[rid]
        else:
            features = assemble_features(entry.recording, feature_config)
            x = features.stacked()
            y = rasterize_labels(entry.labels, features.grid.pooled(2)).astype(np.float64)
            if cache is not None:
                cache[rid] = (x, y)
        xs.append(x)
        ys.append(y)

    frame_counts = {x.shape[1] for x in xs}
    if len(frame_counts) > 1:
        raise ShapeError("recordings differ in length; training needs equal frame counts",
                         expected=min(frame_counts), actual=sorted(frame_counts))
    return np.stack(xs), np.stack(ys)


def _run_batches(model, X, Y, batch_size, order=None, training=False, rng=None, optimizer=None, epoch=None):
    order = np.arange(len(X)) if order is None else order
    total = 0.0
    for batch_index, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        try:
            probs, cache = model.forward(X[idx], training=training, rng=rng)
            loss, dprobs = bce_loss(probs, Y[idx])
            if not np.isfinite(loss):
                raise NumericError("non-finite loss")
            if optimizer is not None:
                grads = model.backward(cache, dprobs)
                adam_step(model.named_params(), grads, optimizer)
        except NumericError as e:
            details = {k: v for k, v in e.details.items() if k not in ('epoch', 'batch')}
            raise NumericError(f"{e.message} at epoch {epoch}, batch {batch_index}",
                               epoch=epoch, batch=batch_index, **details) from e
        total += loss * len(idx)
    return total / len(order)


def train(spec, fold, config=None, feature_config=None, cache=None):
    """
    训练一折

    参数:
        spec: ModelSpec
        fold: (train_part, val_part)
        config: TrainConfig
        feature_config: FeatureConfig
        cache: prepare_examples的特征缓存

    返回:
        (最佳验证epoch的Model, History)
    """
    config = config or TrainConfig()
    train_part, val_part = fold
    if len(train_part) == 0 or len(val_part) == 0:
        raise DataError(f"empty fold: {len(train_part)} train / {len(val_part)} validation recordings",
                        field='fold')

    X_train, Y_train = prepare_examples(train_part, feature_config, cache)
    X_val, Y_val = prepare_examples(val_part, feature_config, cache)

    model = build_model(spec)
    rng = np.random.default_rng(config.seed)
    optimizer = AdamState(lr=config.lr0)
    schedule = PlateauSchedule(config)
    history = History()
    best_snapshot = None
    train_logger = get_logger('training')

    epochs = tqdm(range(1, config.max_epochs + 1), desc=spec.variant.value, unit='epoch',
                  disable=not config.show_progress, file=sys.stderr)
    for epoch in epochs:
        lr = optimizer.lr
        train_loss = _run_batches(model, X_train, Y_train, config.batch_size, order=rng.permutation(len(X_train)),
                                  training=True, rng=rng, optimizer=optimizer, epoch=epoch)
        val_loss = _run_batches(model, X_val, Y_val, config.batch_size, epoch=epoch)
        history.records.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr))

        decision = schedule.step(val_loss)
        if decision['improved']:
            history.best_epoch = epoch
            best_snapshot = model.snapshot()
        if decision['decayed']:
            optimizer.lr = schedule.lr
            train_logger.info(f"epoch {epoch}: 验证损失{config.plateau_patience}个epoch未下降，学习率 -> {schedule.lr:.3g}")
        epochs.set_postfix(train=f"{train_loss:.4f}", val=f"{val_loss:.4f}", lr=f"{lr:.1e}")
        train_logger.debug(f"epoch {epoch}: train_loss={train_loss:.6f} val_loss={val_loss:.6f} lr={lr:.3g}")

        if decision['stop']:
            history.stopping_reason = STOP_EARLY
            break
    else:
        history.stopping_reason = STOP_MAX_EPOCHS

    model.restore(best_snapshot)
    train_logger.info(f"训练结束({history.stopping_reason}): 共{len(history.records)}个epoch，"
                      f"最佳epoch {history.best_epoch}，验证损失 {history.best_val_loss:.6f}")
    return model, history


@dataclass
class FoldResult:
    fold: int
    model: object
    history: History
    threshold: float
    val_metrics: dict

    def summary(self):
        return {
            'fold': self.fold,
            'threshold': self.threshold,
            'best_epoch': self.history.best_epoch,
            'best_val_loss': self.history.best_val_loss,
            'epochs': len(self.history.records),
            'stopping_reason': self.history.stopping_reason,
            'val_metrics': self.val_metrics,
        }


def _fit_fold(spec, fold_index, fold, config, feature_config, cache):
    with LogContext('train_fold', 'training', fold=fold_index, variant=spec.variant.value):
        model, history = train(spec, fold, config, feature_config, cache)

    X_val, Y_val = prepare_examples(fold[1], feature_config, cache)
    probabilities, _ = model.forward(X_val, training=False)
    threshold = select_threshold(probabilities, Y_val)
    metrics = segment_metrics(segment_confusion(probabilities >= threshold, Y_val))
    return FoldResult(fold=fold_index, model=model, history=history, threshold=threshold,
                      val_metrics=metrics.values)


def cross_validate(spec, dataset, config=None, feature_config=None, jobs=1):
    """
    n折交叉验证，每折在自己的验证集上选θ

    参数:
        spec: ModelSpec
        dataset: 训练集（会先做CAS过滤）
        config: TrainConfig
        feature_config: FeatureConfig
        jobs: 并行训练的折数

    返回:
        按折序排列的FoldResult列表
    """
    config = config or TrainConfig()
    feature_config = feature_config or FeatureConfig()
    dataset = filter_cas_dataset(dataset)
    folds = kfold_split(dataset, config.n_folds, config.seed)

    cache = {}
    prepare_examples(dataset, feature_config, cache)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fit_fold, spec, i, fold, config, feature_config, cache)
                       for i, fold in enumerate(folds)]
            results = [future.result() for future in futures]
    else:
        results = [_fit_fold(spec, i, fold, config, feature_config, cache) for i, fold in enumerate(folds)]

    for result in results:
        logger.info(f"fold {result.fold}: θ={result.threshold:.4f}, ACC={result.val_metrics['ACC']}")
    return results


def write_history_csv(path, history):
    """列: epoch, train_loss, val_loss, lr"""
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'train_loss', 'val_loss', 'lr'])
        for record in history.records:
            writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_loss), repr(record.lr)])
