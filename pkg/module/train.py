"""
训练模块
二元交叉熵 + Adam 的小批量训练循环、预测、混淆矩阵与指标、分层交叉验证
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from module.artifacts import atomic_write_text
from module.corpus import FAKE, LABEL_NAMES, REAL, stratified_kfold
from module.errors import ConfigError, DataError, DegenerateCorpusError
from module.nn import ModelGraph, model_forward
from module.seeding import derive_seed, fold_seed, make_rng
from module.tensor import AdamState, ShapeError, Tensor, adam_step, backward, clip, log, mean, zero_grad

logger = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5
LOSS_CLAMP = 1e-12

ModelBuilder = Callable[[np.random.Generator], ModelGraph]


@dataclass
class TrainConfig:
    """训练配置"""

    batch_size: int = 10
    epochs: int = 5
    learning_rate: float = 0.001
    seed: int = 0
    shuffle_each_epoch: bool = True
    patience: int = 0  # 0 表示不早停
    max_workers: int = 1  # 交叉验证的并行折数

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size 必须 ≥ 1，当前为 {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"train.epochs 必须 ≥ 1，当前为 {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"train.learning_rate 必须为正数，当前为 {self.learning_rate}")
        if self.patience < 0 or self.max_workers < 1:
            raise ConfigError("train.patience 不能为负数，train.max_workers 必须 ≥ 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float
    val_acc: Optional[float] = None
    val_loss: Optional[float] = None
    steps: int = 0


@dataclass
class ConfusionMatrix:
    """
    混淆矩阵

    tp = (标签 fake, 预测 fake)，tn = (标签 real, 预测 real)，
    fn = (标签 real, 预测 fake)，fp = (标签 fake, 预测 real)
    """

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def rates(self) -> Dict[str, Dict[str, float]]:
        """按真实标签行归一化的比例"""
        fake_row = self.tp + self.fp
        real_row = self.fn + self.tn
        return {
            "fake": {
                "fake": self.tp / fake_row if fake_row else 0.0,
                "real": self.fp / fake_row if fake_row else 0.0,
            },
            "real": {
                "fake": self.fn / real_row if real_row else 0.0,
                "real": self.tn / real_row if real_row else 0.0,
            },
        }

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    positive_class: int
    confusion: ConfusionMatrix
    rates: Dict[str, Dict[str, float]] = field(default_factory=dict)
    undefined: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "positive_class": LABEL_NAMES[self.positive_class],
            "confusion": self.confusion.to_dict(),
            "rates": self.rates,
            "undefined": list(self.undefined),
        }


@dataclass
class FoldReport:
    fold: int
    train_size: int
    test_size: int
    metrics: MetricsReport
    epochs: List[EpochLog]


@dataclass
class CrossValidationReport:
    k: int
    mean_accuracy: float
    std_accuracy: float
    folds: List[FoldReport]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "folds": [
                {
                    "fold": f.fold,
                    "train_size": f.train_size,
                    "test_size": f.test_size,
                    "metrics": f.metrics.to_dict(),
                    "epochs": [asdict(e) for e in f.epochs],
                }
                for f in self.folds
            ],
        }


# ============================================================================
# 损失与训练
# ============================================================================

def bce_loss(p, y) -> Tensor:
    """
    批平均二元交叉熵，概率先截断到 [1e-12, 1−1e-12]

    Args:
        p: [B] 概率（Tensor 或数组）
        y: [B] 标签 ∈ {0, 1}

    Returns:
        标量 Tensor
    """
    p = p if isinstance(p, Tensor) else Tensor.constant(p)
    labels = np.asarray(y, dtype=np.float64)
    if p.shape != labels.shape:
        raise ShapeError(f"bce_loss: 概率形状 {p.shape} 与标签形状 {labels.shape} 不一致")
    target = Tensor.constant(labels)
    p = clip(p, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    log_likelihood = target * log(p) + (1.0 - target) * log(1.0 - p)
    return -mean(log_likelihood)


def _check_training_data(X: np.ndarray, y: np.ndarray):
    if len(X) == 0:
        raise DegenerateCorpusError("训练数据为空")
    if len(X) != len(y):
        raise DataError(f"样本数 {len(X)} 与标签数 {len(y)} 不一致")
    present = set(int(v) for v in np.unique(y))
    if present != {FAKE, REAL}:
        raise DegenerateCorpusError(f"训练数据必须同时包含 fake 和 real，当前只有 {sorted(LABEL_NAMES[c] for c in present)}")


def train(
    build: ModelBuilder,
    X,
    y,
    config: TrainConfig,
    validation: Optional[Tuple[Any, Any]] = None
) -> Tuple[ModelGraph, List[EpochLog]]:
    """
    小批量训练

    每个 epoch：按 shuffle 子种子打乱 → 按 batch_size 切分（最后一批可以不足）→
    前向 → bce_loss → 反向 → adam_step

    Args:
        build: 接收初始化用随机数生成器、返回新模型的函数
        X: [N, L] 索引矩阵
        y: [N] 标签
        config: 训练配置
        validation: 可选的 (X_val, y_val)，用于记录验证指标和早停

    Returns:
        (训练好的模型, 每个 epoch 的日志)
    """
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_data(X, y)

    model = build(make_rng(derive_seed(config.seed, "init")))
    shuffle_rng = make_rng(derive_seed(config.seed, "shuffle"))
    dropout_rng = make_rng(derive_seed(config.seed, "dropout"))
    state = AdamState(lr=config.learning_rate)
    params = model.params
    n = len(X)

    logs: List[EpochLog] = []
    best_acc = -1.0
    best_state: Optional[Dict[str, np.ndarray]] = None
    stale_epochs = 0

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle_each_epoch else np.arange(n)
        total_loss = 0.0
        correct = 0
        steps = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            zero_grad(params.values())
            probs = model_forward(model, X[batch], training=True, rng=dropout_rng)
            loss = bce_loss(probs, y[batch])
            backward(loss)
            adam_step(params, None, state)
            steps += 1
            total_loss += loss.item() * len(batch)
            correct += int(np.sum((probs.data >= DECISION_THRESHOLD) == (y[batch] == FAKE)))
            logger.debug(f"epoch {epoch} step {steps}: loss={loss.item():.6f}")

        record = EpochLog(epoch=epoch, loss=total_loss / n, train_acc=correct / n, steps=steps)
        if validation is not None:
            val_probs = predict_proba(model, validation[0])
            val_labels = np.asarray(validation[1], dtype=np.int64)
            if len(val_labels):
                record.val_acc = float(np.mean((val_probs >= DECISION_THRESHOLD) == (val_labels == FAKE)))
                record.val_loss = bce_loss(val_probs, val_labels).item()
        logs.append(record)
        logger.info(
            f"epoch {epoch}/{config.epochs}: loss={record.loss:.4f} train_acc={record.train_acc:.4f}"
            + (f" val_acc={record.val_acc:.4f}" if record.val_acc is not None else "")
        )

        if config.patience and record.val_acc is not None:
            if record.val_acc > best_acc:
                best_acc = record.val_acc
                best_state = model.state_dict()
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= config.patience:
                    logger.info(f"验证准确率连续 {stale_epochs} 个 epoch 未提升，提前停止")
                    break

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, logs


# ============================================================================
# 预测与指标
# ============================================================================

def predict_proba(model: ModelGraph, X, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.int64)
    if len(X) == 0:
        return np.zeros(0)
    chunks = [model_forward(model, X[i:i + batch_size], training=False).data for i in range(0, len(X), batch_size)]
    return np.concatenate(chunks)


def predict(model: ModelGraph, X) -> List[Tuple[float, int]]:
    """每条样本的 (概率, 预测标签)；概率 ≥ 0.5 判为 fake"""
    return [(float(p), FAKE if p >= DECISION_THRESHOLD else REAL) for p in predict_proba(model, X)]


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ShapeError(f"预测数 {len(predictions)} 与标签数 {len(labels)} 不一致")
    cm = ConfusionMatrix()
    for predicted, label in zip(predictions, labels):
        if label == FAKE:
            if predicted == FAKE:
                cm.tp += 1
            else:
                cm.fp += 1
        else:
            if predicted == FAKE:
                cm.fn += 1
            else:
                cm.tn += 1
    return cm


def compute_metrics(cm: ConfusionMatrix, positive_class: int = REAL) -> MetricsReport:
    """
    由混淆矩阵计算 accuracy / precision / recall / F1

    Args:
        cm: 混淆矩阵
        positive_class: 正类；REAL 时 precision = tn/(tn+fp)、recall = tn/(tn+fn)，
                        FAKE 时 precision = tp/(tp+fn)、recall = tp/(tp+fp)

    Returns:
        MetricsReport；分母为 0 的指标记为 0 并列入 undefined
    """
    if cm.total == 0:
        raise DataError("混淆矩阵为空，无法计算指标")
    if positive_class == REAL:
        hits, predicted, actual = cm.tn, cm.tn + cm.fp, cm.tn + cm.fn
    elif positive_class == FAKE:
        hits, predicted, actual = cm.tp, cm.tp + cm.fn, cm.tp + cm.fp
    else:
        raise ConfigError(f"未知的正类: {positive_class}")
    undefined = []
    precision = hits / predicted if predicted else 0.0
    if not predicted:
        undefined.append("precision")
    recall = hits / actual if actual else 0.0
    if not actual:
        undefined.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
        positive_class=positive_class,
        confusion=cm,
        rates=cm.rates(),
        undefined=undefined,
    )


def evaluate(model: ModelGraph, X, y, positive_class: int = REAL) -> MetricsReport:
    predictions = [label for _, label in predict(model, X)]
    return compute_metrics(confusion_matrix(predictions, list(np.asarray(y))), positive_class)


# ============================================================================
# 交叉验证
# ============================================================================

FoldEncoder = Callable[[List[int], List[int]], Tuple[np.ndarray, np.ndarray, ModelBuilder]]


def cross_validate(
    build: Optional[ModelBuilder],
    X,
    y,
    k: int,
    config: TrainConfig,
    encode_fold: Optional[FoldEncoder] = None,
    max_workers: Optional[int] = None
) -> CrossValidationReport:
    """
    分层 K 折交叉验证：第 i 折用其余各折训练、在第 i 折上评估

    Args:
        build: 模型构建函数（提供 encode_fold 时可以为 None）
        X: 已编码的 [N, L] 矩阵；提供 encode_fold 时可以是任意序列（如原始文本）
        y: [N] 标签
        k: 折数
        config: 训练配置；第 i 折使用种子 fold_seed(seed, i)
        encode_fold: 可选，(train_indices, test_indices) → (X_train, X_test, build)，
                     用于每折单独建词表
        max_workers: 并行折数，默认取 config.max_workers

    Returns:
        CrossValidationReport（准确率均值与总体标准差）
    """
    labels = np.asarray(y, dtype=np.int64)
    folds = stratified_kfold(list(labels), k, derive_seed(config.seed, "kfold"))

    def run_fold(fold: int) -> FoldReport:
        train_idx = folds.train_indices(fold)
        test_idx = folds.test_indices(fold)
        if encode_fold is not None:
            X_train, X_test, fold_build = encode_fold(train_idx, test_idx)
        else:
            data = np.asarray(X, dtype=np.int64)
            X_train, X_test, fold_build = data[train_idx], data[test_idx], build
        fold_config = replace(config, seed=fold_seed(config.seed, fold))
        model, logs = train(fold_build, X_train, labels[train_idx], fold_config)
        metrics = evaluate(model, X_test, labels[test_idx])
        logger.info(f"第 {fold + 1}/{k} 折: accuracy={metrics.accuracy:.4f}")
        return FoldReport(fold=fold, train_size=len(train_idx), test_size=len(test_idx), metrics=metrics, epochs=logs)

    workers = max_workers if max_workers is not None else config.max_workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_fold, range(k)))
    else:
        reports = [run_fold(fold) for fold in range(k)]

    accuracies = np.array([r.metrics.accuracy for r in reports])
    return CrossValidationReport(
        k=k,
        mean_accuracy=float(accuracies.mean()),
        std_accuracy=float(accuracies.std()),
        folds=reports,
    )


# ============================================================================
# 产物
# ============================================================================

def epoch_log_csv(logs: Sequence[EpochLog]) -> str:
    frame = pd.DataFrame(
        [{"epoch": e.epoch, "loss": e.loss, "train_acc": e.train_acc, "val_acc": e.val_acc, "val_loss": e.val_loss} for e in logs],
        columns=["epoch", "loss", "train_acc", "val_acc", "val_loss"],
    )
    return frame.to_csv(index=False, float_format="%.8f", lineterminator="\n")


def write_epoch_log_csv(path: str, logs: Sequence[EpochLog]):
    atomic_write_text(path, epoch_log_csv(logs))


def metrics_to_json(metrics_by_convention: Dict[str, MetricsReport]) -> Dict[str, Any]:
    return {name: report.to_dict() for name, report in metrics_by_convention.items()}


def write_confusion_csv(path: str, cm: ConfusionMatrix):
    """两行（真实标签 fake / real），列为计数与行归一化比例"""
    rates = cm.rates()
    frame = pd.DataFrame(
        [
            {"label": "fake", "predicted_fake": cm.tp, "predicted_real": cm.fp,
             "rate_fake": rates["fake"]["fake"], "rate_real": rates["fake"]["real"]},
            {"label": "real", "predicted_fake": cm.fn, "predicted_real": cm.tn,
             "rate_fake": rates["real"]["fake"], "rate_real": rates["real"]["real"]},
        ],
        columns=["label", "predicted_fake", "predicted_real", "rate_fake", "rate_real"],
    )
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.8f", lineterminator="\n"))
