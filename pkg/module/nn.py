"""
神经网络模块
层（embedding、dense、conv1d、池化、dropout、GRU/LSTM 单元、双向运行器）以及两种分类模型：
Bi-LSTM 与 CNN + Bi-GRU 集成模型

所有层既接受单条序列 [T, C]，也接受批量 [B, T, C]；内部统一按批量计算
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from module.errors import ConfigError
from module.seeding import make_rng
from module.tensor import (
    ShapeError,
    Tensor,
    activation,
    clip,
    concat,
    gather,
    matmul,
    max_over_axis,
    narrow,
    reshape,
    stack,
    take,
)

logger = logging.getLogger(__name__)

BILSTM = "bilstm"
ENSEMBLE = "ensemble_cnn_bigru"
ARCHITECTURES = (BILSTM, ENSEMBLE)

# 输出概率被限制在开区间 (0, 1) 内
PROBABILITY_FLOOR = 1e-12


@dataclass
class ModelConfig:
    """模型宽度配置；vocab_size 与 max_sequence_length 由预处理结果决定"""

    vocab_size: int = 2
    embed_dim: int = 64
    rnn_hidden: int = 64
    conv_filters: int = 64
    conv_kernel: int = 5
    branch_dense_units: int = 16
    dropout_rate: float = 0.5
    max_sequence_length: int = 64
    cnn_pool: str = "window"
    pool_size: int = 2

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "rnn_hidden", "conv_filters", "conv_kernel",
                     "branch_dense_units", "max_sequence_length", "pool_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} 必须为正整数，当前为 {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate 必须在 [0, 1) 之间，当前为 {self.dropout_rate}")
        if self.cnn_pool not in ("window", "global"):
            raise ConfigError(f"model.cnn_pool 只能是 window 或 global，当前为 {self.cnn_pool!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def conv_output_length(self) -> int:
        return self.max_sequence_length - self.conv_kernel + 1

    def cnn_flat_dim(self) -> int:
        """CNN 分支展平后的维度"""
        if self.cnn_pool == "global":
            return self.conv_filters
        return (self.conv_output_length() // self.pool_size) * self.conv_filters


# ============================================================================
# 初始化
# ============================================================================

def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))


# ============================================================================
# 层
# ============================================================================

def _as_batch(x: Tensor) -> Tuple[Tensor, bool]:
    """[T, C] → [1, T, C]；返回是否原本就是批量"""
    if x.ndim == 3:
        return x, True
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), False
    raise ShapeError(f"期望 [T, C] 或 [B, T, C]，实际为 {x.shape}")


def _unbatch(x: Tensor, batched: bool) -> Tensor:
    return x if batched else reshape(x, x.shape[1:])


class EmbeddingLayer:
    """词向量表 [vocab_size, embed_dim]"""

    def __init__(self, weight: Tensor):
        self.weight = weight

    @classmethod
    def create(cls, vocab_size: int, embed_dim: int, rng: np.random.Generator, name: str = "embedding.weight"):
        return cls(Tensor.parameter(rng.uniform(-0.05, 0.05, size=(vocab_size, embed_dim)), name=name))

    def max_row_norm(self) -> float:
        """最大行范数，不含 PAD 行 0"""
        rows = self.weight.data[1:]
        return float(np.linalg.norm(rows, axis=1).max()) if len(rows) else 0.0


def embedding_forward(layer: EmbeddingLayer, indices) -> Tensor:
    """按行查表：indices 形状 [...] → [..., embed_dim]"""
    return gather(layer.weight, np.asarray(indices, dtype=np.int64))


def dense_forward(W: Tensor, b: Tensor, x: Tensor, activation_kind: str = "identity") -> Tensor:
    """
    全连接层 activation(x·W + b)

    Args:
        W: [in, out]
        b: [out]
        x: [..., in]
        activation_kind: sigmoid / tanh / relu / identity

    Returns:
        [..., out]
    """
    if x.ndim == 0 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: 输入形状 {x.shape} 与权重形状 {W.shape} 不匹配")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, W.shape[0])) if x.ndim != 2 else x
    out = matmul(flat, W) + b
    if x.ndim != 2:
        out = reshape(out, lead + (W.shape[1],))
    return activation(activation_kind, out)


def conv1d_forward(filters: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """
    一维有效卷积（互相关，无填充）+ bias + ReLU

    Args:
        filters: [kernel, in_ch, out_ch]
        bias: [out_ch]
        x: [T, in_ch] 或 [B, T, in_ch]

    Returns:
        [T−kernel+1, out_ch]（批量输入时带 B 维）
    """
    kernel, in_ch, out_ch = filters.shape
    x, batched = _as_batch(x)
    batch, steps, channels = x.shape
    if channels != in_ch:
        raise ShapeError(f"conv1d: 输入通道 {channels} 与卷积核通道 {in_ch} 不一致")
    if steps < kernel:
        raise ShapeError(f"conv1d: 序列长度 {steps} 小于卷积核宽度 {kernel}")
    out_steps = steps - kernel + 1
    # 窗口内第 j 步的第 c 个通道落在展开后的第 j*in_ch + c 列，与 filters 的行主序一致
    windows = concat([narrow(x, 1, j, out_steps) for j in range(kernel)], axis=2)
    flat = reshape(windows, (batch * out_steps, kernel * in_ch))
    out = matmul(flat, reshape(filters, (kernel * in_ch, out_ch))) + bias
    out = activation("relu", reshape(out, (batch, out_steps, out_ch)))
    return _unbatch(out, batched)


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """不重叠窗口的时间维最大池化，末尾不足一个窗口的步被丢弃"""
    if pool < 1:
        raise ShapeError(f"maxpool1d: 池化宽度必须 ≥ 1，当前为 {pool}")
    if pool == 1:
        return x
    x, batched = _as_batch(x)
    batch, steps, channels = x.shape
    windows = steps // pool
    trimmed = narrow(x, 1, 0, windows * pool)
    out = max_over_axis(reshape(trimmed, (batch, windows, pool, channels)), 2)
    return _unbatch(out, batched)


def global_maxpool(x: Tensor) -> Tensor:
    if x.shape[-2] < 1:
        raise ShapeError("global_maxpool: 序列长度必须 ≥ 1")
    return max_over_axis(x, x.ndim - 2)


def dropout_forward(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """反向缩放 dropout：训练时以 rate 概率置零、幸存元素乘 1/(1−rate)；推理时原样返回"""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate 必须在 [0, 1) 之间，当前为 {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("训练模式下的 dropout 需要随机数生成器")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor.constant(mask)


# ============================================================================
# 循环单元
# ============================================================================

def _gate(x: Tensor, W: Tensor, h: Tensor, U: Tensor, b: Tensor) -> Tensor:
    return matmul(x, W) + matmul(h, U) + b


class GruCell:
    """GRU 单元：更新门 z、重置门 r、候选状态 h̃"""

    GATES = ("z", "r", "h")

    def __init__(self, params: Dict[str, Tensor]):
        self.params = params
        self.input_dim, self.hidden = params["Wz"].shape
        for gate in self.GATES:
            if params[f"W{gate}"].shape != (self.input_dim, self.hidden) \
                    or params[f"U{gate}"].shape != (self.hidden, self.hidden) \
                    or params[f"b{gate}"].shape != (self.hidden,):
                raise ShapeError(f"GRU 门 {gate} 的参数形状不一致")

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng: np.random.Generator, prefix: str = "gru"):
        params = OrderedDict()
        for gate in cls.GATES:
            params[f"W{gate}"] = Tensor.parameter(glorot_uniform(rng, (input_dim, hidden), input_dim, hidden), name=f"{prefix}.W{gate}")
            params[f"U{gate}"] = Tensor.parameter(orthogonal(rng, hidden), name=f"{prefix}.U{gate}")
            params[f"b{gate}"] = Tensor.parameter(np.zeros(hidden), name=f"{prefix}.b{gate}")
        return cls(params)

    def zero_state(self, batch: int):
        return Tensor.constant(np.zeros((batch, self.hidden)))

    def step(self, x_t: Tensor, state: Tensor) -> Tuple[Tensor, Tensor]:
        h = gru_cell_step(self, x_t, state)
        return h, h


def gru_cell_step(cell: GruCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """
    单步 GRU

    r = σ(x·Wr + h·Ur + br)，z = σ(x·Wz + h·Uz + bz)，
    h̃ = tanh(x·Wh + (r⊙h)·Uh + bh)，h_t = (1−z)⊙h_prev + z⊙h̃
    """
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1, x_t.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
    p = cell.params
    r = activation("sigmoid", _gate(x_t, p["Wr"], h_prev, p["Ur"], p["br"]))
    z = activation("sigmoid", _gate(x_t, p["Wz"], h_prev, p["Uz"], p["bz"]))
    candidate = activation("tanh", _gate(x_t, p["Wh"], r * h_prev, p["Uh"], p["bh"]))
    h_t = (1.0 - z) * h_prev + z * candidate
    return reshape(h_t, (cell.hidden,)) if single else h_t


class LstmCell:
    """LSTM 单元：遗忘门 f、输入门 i、输出门 o、候选 g"""

    GATES = ("f", "i", "o", "g")

    def __init__(self, params: Dict[str, Tensor]):
        self.params = params
        self.input_dim, self.hidden = params["Wf"].shape
        for gate in self.GATES:
            if params[f"W{gate}"].shape != (self.input_dim, self.hidden) \
                    or params[f"U{gate}"].shape != (self.hidden, self.hidden) \
                    or params[f"b{gate}"].shape != (self.hidden,):
                raise ShapeError(f"LSTM 门 {gate} 的参数形状不一致")

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng: np.random.Generator, prefix: str = "lstm"):
        params = OrderedDict()
        for gate in cls.GATES:
            params[f"W{gate}"] = Tensor.parameter(glorot_uniform(rng, (input_dim, hidden), input_dim, hidden), name=f"{prefix}.W{gate}")
            params[f"U{gate}"] = Tensor.parameter(orthogonal(rng, hidden), name=f"{prefix}.U{gate}")
            params[f"b{gate}"] = Tensor.parameter(np.zeros(hidden), name=f"{prefix}.b{gate}")
        return cls(params)

    def zero_state(self, batch: int):
        zeros = np.zeros((batch, self.hidden))
        return Tensor.constant(zeros), Tensor.constant(zeros)

    def step(self, x_t: Tensor, state) -> Tuple[Tensor, Any]:
        h_prev, c_prev = state
        h, c = lstm_cell_step(self, x_t, h_prev, c_prev)
        return h, (h, c)


def lstm_cell_step(cell: LstmCell, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
    """单步 LSTM：c_t = f⊙c_prev + i⊙g，h_t = o⊙tanh(c_t)"""
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1, x_t.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
        c_prev = reshape(c_prev, (1, c_prev.shape[0]))
    p = cell.params
    f = activation("sigmoid", _gate(x_t, p["Wf"], h_prev, p["Uf"], p["bf"]))
    i = activation("sigmoid", _gate(x_t, p["Wi"], h_prev, p["Ui"], p["bi"]))
    o = activation("sigmoid", _gate(x_t, p["Wo"], h_prev, p["Uo"], p["bo"]))
    g = activation("tanh", _gate(x_t, p["Wg"], h_prev, p["Ug"], p["bg"]))
    c_t = f * c_prev + i * g
    h_t = o * activation("tanh", c_t)
    if single:
        return reshape(h_t, (cell.hidden,)), reshape(c_t, (cell.hidden,))
    return h_t, c_t


def bidirectional_run(cell_fwd, cell_bwd, sequence: Tensor, return_sequences: bool) -> Tensor:
    """
    双向运行两个独立参数的循环单元

    Args:
        cell_fwd: 正向单元（t = 0..T−1）
        cell_bwd: 反向单元（t = T−1..0）
        sequence: [T, in] 或 [B, T, in]
        return_sequences: True 时返回每步 [h_fwd_t ‖ h_bwd_t]，否则返回两个方向最终状态的拼接

    Returns:
        [T, 2·hidden] / [2·hidden]（批量输入时带 B 维）
    """
    if cell_fwd.hidden != cell_bwd.hidden:
        raise ShapeError(f"双向单元的隐藏维度不一致: {cell_fwd.hidden} 与 {cell_bwd.hidden}")
    sequence, batched = _as_batch(sequence)
    batch, steps, _ = sequence.shape
    if steps < 1:
        raise ShapeError("bidirectional_run: 序列长度必须 ≥ 1")
    inputs = [take(sequence, t, axis=1) for t in range(steps)]

    forward_states: List[Tensor] = []
    state = cell_fwd.zero_state(batch)
    for x_t in inputs:
        h, state = cell_fwd.step(x_t, state)
        forward_states.append(h)

    backward_states: List[Tensor] = []
    state = cell_bwd.zero_state(batch)
    for x_t in reversed(inputs):
        h, state = cell_bwd.step(x_t, state)
        backward_states.append(h)
    backward_states.reverse()

    if return_sequences:
        out = concat([stack(forward_states, axis=1), stack(backward_states, axis=1)], axis=2)
    else:
        out = concat([forward_states[-1], backward_states[0]], axis=1)
    return out if batched else reshape(out, out.shape[1:])


# ============================================================================
# 模型
# ============================================================================

class ModelGraph:
    """已构建的分类模型：命名参数集合 + 前向过程，输出每条样本为 fake 的概率"""

    architecture = ""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self.params[name] = tensor
        return tensor

    def _register_cell(self, prefix: str, cell):
        for key, tensor in cell.params.items():
            self._register(f"{prefix}.{key}", tensor)
        return cell

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray]):
        """按名称载入参数，名称集合和形状必须完全一致"""
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ShapeError(f"参数名不一致，缺少 {missing}，多出 {extra}")
        for name, param in self.params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(f"参数 {name} 形状应为 {param.shape}，实际为 {value.shape}")
            param.data = value.copy()

    def _probabilities(self, indices: np.ndarray, training: bool, rng) -> Tensor:
        raise NotImplementedError

    def forward(self, indices: np.ndarray, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
        probs = self._probabilities(indices, training, rng)
        probs = clip(probs, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        return reshape(probs, (indices.shape[0],))


class BiLstmModel(ModelGraph):
    """embedding → Bi-LSTM(逐步输出) → dropout → 全局最大池化 → dense(1, sigmoid)"""

    architecture = BILSTM

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        self.embedding = EmbeddingLayer.create(config.vocab_size, config.embed_dim, rng)
        self._register("embedding.weight", self.embedding.weight)
        self.fwd = self._register_cell("bilstm.fwd", LstmCell.create(config.embed_dim, config.rnn_hidden, rng))
        self.bwd = self._register_cell("bilstm.bwd", LstmCell.create(config.embed_dim, config.rnn_hidden, rng))
        width = 2 * config.rnn_hidden
        self.W = self._register("dense.W", Tensor.parameter(glorot_uniform(rng, (width, 1), width, 1)))
        self.b = self._register("dense.b", Tensor.parameter(np.zeros(1)))

    def _probabilities(self, indices, training, rng):
        sequence = bidirectional_run(self.fwd, self.bwd, embedding_forward(self.embedding, indices), True)
        sequence = dropout_forward(sequence, self.config.dropout_rate, training, rng)
        return dense_forward(self.W, self.b, global_maxpool(sequence), "sigmoid")


class EnsembleModel(ModelGraph):
    """
    CNN + Bi-GRU 集成模型

    CNN 分支：embedding_A → conv1d(ReLU) → maxpool1d / 全局池化 → dropout → 展平 → dense(sigmoid)
    GRU 分支：embedding_B → Bi-GRU(最终状态) → dropout → dense(sigmoid)
    合并：concat[CNN, GRU] → dense(1, sigmoid)；merge.W 的前 branch_dense_units 行对应 CNN 分支
    """

    architecture = ENSEMBLE

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__(config)
        if config.conv_output_length() < 1:
            raise ConfigError(
                f"序列长度 {config.max_sequence_length} 小于卷积核宽度 {config.conv_kernel}"
            )
        if config.cnn_flat_dim() < 1:
            raise ConfigError(
                f"卷积输出长度 {config.conv_output_length()} 小于池化宽度 {config.pool_size}"
            )
        E, H, F, K, D = (config.embed_dim, config.rnn_hidden, config.conv_filters,
                         config.conv_kernel, config.branch_dense_units)

        self.cnn_embedding = EmbeddingLayer.create(config.vocab_size, E, rng)
        self._register("cnn.embedding.weight", self.cnn_embedding.weight)
        self.filters = self._register("cnn.conv.filters", Tensor.parameter(glorot_uniform(rng, (K, E, F), K * E, K * F)))
        self.conv_bias = self._register("cnn.conv.bias", Tensor.parameter(np.zeros(F)))
        flat = config.cnn_flat_dim()
        self.cnn_W = self._register("cnn.dense.W", Tensor.parameter(glorot_uniform(rng, (flat, D), flat, D)))
        self.cnn_b = self._register("cnn.dense.b", Tensor.parameter(np.zeros(D)))

        self.gru_embedding = EmbeddingLayer.create(config.vocab_size, E, rng)
        self._register("gru.embedding.weight", self.gru_embedding.weight)
        self.fwd = self._register_cell("gru.bigru.fwd", GruCell.create(E, H, rng))
        self.bwd = self._register_cell("gru.bigru.bwd", GruCell.create(E, H, rng))
        self.gru_W = self._register("gru.dense.W", Tensor.parameter(glorot_uniform(rng, (2 * H, D), 2 * H, D)))
        self.gru_b = self._register("gru.dense.b", Tensor.parameter(np.zeros(D)))

        self.merge_W = self._register("merge.W", Tensor.parameter(glorot_uniform(rng, (2 * D, 1), 2 * D, 1)))
        self.merge_b = self._register("merge.b", Tensor.parameter(np.zeros(1)))

    def cnn_branch(self, indices, training, rng) -> Tensor:
        features = conv1d_forward(self.filters, self.conv_bias, embedding_forward(self.cnn_embedding, indices))
        if self.config.cnn_pool == "global":
            pooled = global_maxpool(features)
        else:
            pooled = maxpool1d(features, self.config.pool_size)
        pooled = dropout_forward(pooled, self.config.dropout_rate, training, rng)
        flat = reshape(pooled, (indices.shape[0], self.config.cnn_flat_dim()))
        return dense_forward(self.cnn_W, self.cnn_b, flat, "sigmoid")

    def gru_branch(self, indices, training, rng) -> Tensor:
        final = bidirectional_run(self.fwd, self.bwd, embedding_forward(self.gru_embedding, indices), False)
        final = dropout_forward(final, self.config.dropout_rate, training, rng)
        return dense_forward(self.gru_W, self.gru_b, final, "sigmoid")

    def _probabilities(self, indices, training, rng):
        merged = concat([self.cnn_branch(indices, training, rng), self.gru_branch(indices, training, rng)], axis=1)
        return dense_forward(self.merge_W, self.merge_b, merged, "sigmoid")


def build_bilstm_model(config: ModelConfig, rng: Optional[np.random.Generator] = None) -> BiLstmModel:
    return BiLstmModel(config, rng if rng is not None else make_rng(0))


def build_ensemble_model(config: ModelConfig, rng: Optional[np.random.Generator] = None) -> EnsembleModel:
    return EnsembleModel(config, rng if rng is not None else make_rng(0))


def build_model(architecture: str, config: ModelConfig, rng: Optional[np.random.Generator] = None) -> ModelGraph:
    if architecture == BILSTM:
        return build_bilstm_model(config, rng)
    if architecture == ENSEMBLE:
        return build_ensemble_model(config, rng)
    raise ConfigError(f"未知的模型结构 {architecture!r}，可选: {', '.join(ARCHITECTURES)}")


def model_forward(
    graph: ModelGraph,
    batch: Sequence[Sequence[int]],
    training: bool = False,
    rng: Optional[np.random.Generator] = None
) -> Tensor:
    """
    前向计算

    Args:
        graph: 模型
        batch: [B, max_sequence_length] 的索引（单条序列也可）
        training: 是否启用 dropout
        rng: 训练模式下 dropout 使用的随机数生成器

    Returns:
        [B] 的概率张量，每个值严格落在 (0, 1)
    """
    indices = np.asarray(batch, dtype=np.int64)
    if indices.ndim == 1:
        indices = indices.reshape(1, -1)
    if indices.ndim != 2 or indices.shape[1] != graph.config.max_sequence_length:
        raise ShapeError(
            f"输入序列长度应为 {graph.config.max_sequence_length}，实际形状为 {indices.shape}"
        )
    return graph.forward(indices, training, rng)


def parameter_count(graph: ModelGraph) -> int:
    return graph.parameter_count()


def expected_parameter_count(config: ModelConfig, architecture: str) -> int:
    """按 ModelConfig 的闭式公式计算参数个数"""
    V, E, H = config.vocab_size, config.embed_dim, config.rnn_hidden
    if architecture == BILSTM:
        return V * E + 2 * 4 * (E * H + H * H + H) + (2 * H + 1)
    if architecture == ENSEMBLE:
        F, K, D = config.conv_filters, config.conv_kernel, config.branch_dense_units
        cnn = V * E + K * E * F + F + config.cnn_flat_dim() * D + D
        gru = V * E + 2 * 3 * (E * H + H * H + H) + 2 * H * D + D
        return cnn + gru + 2 * D + 1
    raise ConfigError(f"未知的模型结构 {architecture!r}")
