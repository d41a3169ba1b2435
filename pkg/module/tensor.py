"""
Tensor 模块
基于 numpy 的 float64 稠密张量，支持反向模式自动求导（Tape），并提供 Adam 优化器
所有模型的权重矩阵 W、U 和偏置 b 都由这里的 Tensor 承载
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Number = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """张量形状不兼容"""


class Node:
    """计算图中的一条运算记录：输入引用 + 反向规则"""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """float64 稠密张量（行主序），可参与反向模式求导"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        """
        初始化张量

        Args:
            data: 任意可转换为 numpy 数组的数据，总是复制为 float64
            requires_grad: 是否需要累积梯度
            name: 参数名（可选，仅用于调试和检查点）
        """
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def constant(cls, data) -> "Tensor":
        return cls(data, requires_grad=False)

    @classmethod
    def parameter(cls, data, name: Optional[str] = None) -> "Tensor":
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Python 运算符，标量会被提升为常量张量
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", _lift(other), self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", _lift(other), self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", _lift(other), self)

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor.constant(value)


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], op: str, backward_fn: BackwardFn) -> Tensor:
    """构造运算输出；只有当某个输入需要梯度时才记录反向规则"""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out._node = Node(op, inputs, backward_fn) if out.requires_grad else None
    return out


def _is_suffix(small: Tuple[int, ...], big: Tuple[int, ...]) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


def _normalize_axis(axis: int, ndim: int, op: str) -> int:
    if not isinstance(axis, (int, np.integer)) or not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: 轴 {axis} 对 {ndim} 维张量无效")
    return int(axis) % ndim


# ============================================================================
# 基本运算
# ============================================================================

def elementwise(op: str, a, b) -> Tensor:
    """
    逐元素 add / sub / mul

    形状必须相同，或者其中一个是另一个的尾部维度（例如 [2,3] 与 [3]，标量视为空尾部）

    Args:
        op: "add"、"sub" 或 "mul"
        a: 左操作数
        b: 右操作数

    Returns:
        逐元素结果
    """
    a, b = _lift(a), _lift(b)
    if not (a.shape == b.shape or _is_suffix(b.shape, a.shape) or _is_suffix(a.shape, b.shape)):
        raise ShapeError(f"{op}: 形状不兼容 {a.shape} 与 {b.shape}")
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    if op == "add":
        data = a_data + b_data

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)
    elif op == "sub":
        data = a_data - b_data

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)
    elif op == "mul":
        data = a_data * b_data

        def backward(g):
            return _unbroadcast(g * b_data, a_shape), _unbroadcast(g * a_data, b_shape)
    else:
        raise ValueError(f"未知的逐元素运算: {op}")

    return _result(data, (a, b), op, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """矩阵乘法 [m,k]·[k,n]；反向 dA = dC·Bᵀ，dB = Aᵀ·dC"""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: 形状不兼容 {a.shape} 与 {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), "matmul", backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def activation(kind: str, x: Tensor) -> Tensor:
    """
    逐元素激活函数

    Args:
        kind: "sigmoid"、"tanh"、"relu" 或 "identity"
        x: 输入张量

    Returns:
        激活后的张量
    """
    x = _lift(x)
    if kind == "identity":
        return x
    x_data = x.data
    if kind == "sigmoid":
        data = _sigmoid(x_data)

        def backward(g):
            return (g * data * (1.0 - data),)
    elif kind == "tanh":
        data = np.tanh(x_data)

        def backward(g):
            return (g * (1.0 - data * data),)
    elif kind == "relu":
        data = np.maximum(x_data, 0.0)

        def backward(g):
            return (g * (x_data > 0),)
    else:
        raise ValueError(f"未知的激活函数: {kind}")
    return _result(data, (x,), kind, backward)


def sigmoid(x: Tensor) -> Tensor:
    return activation("sigmoid", x)


def tanh(x: Tensor) -> Tensor:
    return activation("tanh", x)


def relu(x: Tensor) -> Tensor:
    return activation("relu", x)


def reduce(kind: str, x: Tensor, axis: Optional[int] = None) -> Tensor:
    """
    沿轴归约：sum / mean / max_over_axis

    max 的反向只把梯度送到 argmax 位置，出现并列时取第一个

    Args:
        kind: "sum"、"mean" 或 "max_over_axis"
        x: 输入张量
        axis: 归约轴；sum/mean 为 None 时对全部元素归约，max 必须指定

    Returns:
        归约结果（不保留被归约的维度）
    """
    x = _lift(x)
    x_data = x.data
    x_shape = x.shape

    if kind in ("sum", "mean"):
        if axis is None:
            count = x_data.size
            data = x_data.sum()
            scale = 1.0 / count if kind == "mean" and count else 1.0
            data = data * scale if kind == "mean" else data

            def backward(g):
                return (np.full(x_shape, float(g) * scale),)
        else:
            ax = _normalize_axis(axis, x.ndim, kind)
            count = x_shape[ax]
            data = x_data.sum(axis=ax)
            scale = 1.0 / count if kind == "mean" and count else 1.0
            data = data * scale if kind == "mean" else data

            def backward(g):
                return (np.broadcast_to(np.expand_dims(g * scale, ax), x_shape).copy(),)
        return _result(data, (x,), kind, backward)

    if kind == "max_over_axis":
        if axis is None:
            raise ShapeError("max_over_axis: 必须指定轴")
        ax = _normalize_axis(axis, x.ndim, kind)
        index = np.expand_dims(np.argmax(x_data, axis=ax), ax)
        data = np.take_along_axis(x_data, index, axis=ax).squeeze(ax)

        def backward(g):
            grad = np.zeros(x_shape)
            np.put_along_axis(grad, index, np.expand_dims(g, ax), axis=ax)
            return (grad,)

        return _result(data, (x,), kind, backward)

    raise ValueError(f"未知的归约运算: {kind}")


def sum_all(x: Tensor) -> Tensor:
    return reduce("sum", x)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return reduce("mean", x, axis)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    return reduce("max_over_axis", x, axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """沿轴拼接；反向在接缝处切分梯度"""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: 至少需要一个张量")
    ndim = tensors[0].ndim
    ax = _normalize_axis(axis, ndim, "concat")
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != reference[d] for d in range(ndim) if d != ax
        ):
            raise ShapeError(f"concat: 形状不兼容 {reference} 与 {t.shape}（轴 {ax}）")
    seams = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, seams, axis=ax)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """沿新轴堆叠形状相同的张量"""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: 至少需要一个张量")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: 形状不兼容 {tensors[0].shape} 与 {t.shape}")
    ax = _normalize_axis(axis, tensors[0].ndim + 1, "stack")
    count = len(tensors)

    def backward(g):
        return [np.take(g, i, axis=ax) for i in range(count)]

    return _result(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), "stack", backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _lift(x)
    x_shape = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: 无法把 {x_shape} 变为 {tuple(shape)}") from e

    def backward(g):
        return (g.reshape(x_shape),)

    return _result(data, (x,), "reshape", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """沿轴取连续切片 [start, start+length)"""
    x = _lift(x)
    ax = _normalize_axis(axis, x.ndim, "narrow")
    if start < 0 or length < 0 or start + length > x.shape[ax]:
        raise ShapeError(f"narrow: 区间 [{start}, {start + length}) 超出轴 {ax} 的长度 {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)
    x_shape = x.shape

    def backward(g):
        grad = np.zeros(x_shape)
        grad[index] = g
        return (grad,)

    return _result(x.data[index], (x,), "narrow", backward)


def take(x: Tensor, position: int, axis: int) -> Tensor:
    """取轴上的单个位置（该维度被移除）"""
    x = _lift(x)
    ax = _normalize_axis(axis, x.ndim, "take")
    if not 0 <= position < x.shape[ax]:
        raise ShapeError(f"take: 位置 {position} 超出轴 {ax} 的长度 {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = position
    index = tuple(index)
    x_shape = x.shape

    def backward(g):
        grad = np.zeros(x_shape)
        grad[index] = g
        return (grad,)

    return _result(x.data[index], (x,), "take", backward)


def gather(weight: Tensor, indices) -> Tensor:
    """
    按行查表（embedding lookup）

    Args:
        weight: [rows, dim] 的张量
        indices: 任意形状的整数数组

    Returns:
        形状为 indices.shape + [dim] 的张量；反向只累加到被查到的行
    """
    indices = np.asarray(indices)
    if weight.ndim != 2:
        raise ShapeError(f"gather: 权重必须是二维，实际为 {weight.shape}")
    if indices.size and (not np.issubdtype(indices.dtype, np.integer)
                         or indices.min() < 0 or indices.max() >= weight.shape[0]):
        raise IndexError(f"gather: 索引超出范围 [0, {weight.shape[0]})")
    w_shape = weight.shape

    def backward(g):
        grad = np.zeros(w_shape)
        np.add.at(grad, indices, g)
        return (grad,)

    return _result(weight.data[indices], (weight,), "gather", backward)


def log(x: Tensor) -> Tensor:
    x = _lift(x)
    x_data = x.data

    def backward(g):
        return (g / x_data,)

    return _result(np.log(x_data), (x,), "log", backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """截断到 [low, high]；区间外梯度为 0"""
    x = _lift(x)
    x_data = x.data
    inside = (x_data >= low) & (x_data <= high)

    def backward(g):
        return (g * inside,)

    return _result(np.clip(x_data, low, high), (x,), "clip", backward)


# ============================================================================
# 反向传播
# ============================================================================

class Tape:
    """按拓扑序排列的运算记录：每条记录的输入都排在它之前"""

    def __init__(self, entries: List[Tensor]):
        self.entries = entries

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        """从输出张量出发迭代式后序遍历，得到拓扑序（避免深图递归溢出）"""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in tensor._node.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def run(self, seed: np.ndarray):
        """逆拓扑序传播梯度，并累加到每个 requires_grad 张量的 grad 上"""
        pending: Dict[int, np.ndarray] = {id(self.entries[-1]): seed}
        for tensor in reversed(self.entries):
            g = pending.pop(id(tensor), None)
            if g is None:
                continue
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
            node = tensor._node
            if node is None:
                continue
            for parent, parent_grad in zip(node.inputs, node.backward_fn(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def backward(loss: Tensor) -> Tape:
    """
    以 loss 为起点执行反向传播，种子梯度为 1

    Args:
        loss: 单元素张量

    Returns:
        本次使用的 Tape
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss 必须是标量，实际形状 {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss 不依赖任何需要梯度的张量")
    tape = Tape.from_output(loss)
    tape.run(np.ones(loss.shape))
    return tape


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


# ============================================================================
# Adam 优化器
# ============================================================================

@dataclass
class AdamState:
    """Adam 状态：每个参数的一阶/二阶矩和步数"""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, Tensor],
    grads: Optional[Dict[str, np.ndarray]],
    state: AdamState
) -> AdamState:
    """
    执行一步 Adam 更新

    Args:
        params: 参数名 -> 参数张量
        grads: 参数名 -> 梯度；为 None 时使用各参数的 .grad（缺失视为 0）
        state: Adam 状态，原地更新

    Returns:
        更新后的状态（与传入的是同一个对象）
    """
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, param in params.items():
        g = grads.get(name) if grads is not None else param.grad
        if g is None:
            g = np.zeros(param.shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != param.shape:
            raise ShapeError(f"adam_step: 参数 {name} 形状 {param.shape} 与梯度形状 {g.shape} 不一致")
        if name not in state.m:
            state.m[name] = np.zeros(param.shape)
            state.v[name] = np.zeros(param.shape)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


# ============================================================================
# 梯度检查工具
# ============================================================================

def max_relative_error(analytic, numeric, floor: float = 1e-5) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    positions: Optional[Sequence[int]] = None,
    h: float = 1e-5
) -> np.ndarray:
    """
    中心差分数值梯度

    Args:
        fn: 每次调用都重新构图并返回标量 loss
        tensor: 被扰动的张量（扰动时替换 data，结束后恢复原数组）
        positions: 展平后的下标；None 表示全部
        h: 差分步长

    Returns:
        与 positions 对应的一维数值梯度
    """
    original = tensor.data
    if positions is None:
        positions = range(original.size)
    values = []
    try:
        for i in positions:
            plus = original.copy()
            plus.flat[i] += h
            tensor.data = plus
            f_plus = fn().item()
            minus = original.copy()
            minus.flat[i] -= h
            tensor.data = minus
            f_minus = fn().item()
            values.append((f_plus - f_minus) / (2.0 * h))
    finally:
        tensor.data = original
    return np.array(values)


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
    max_positions: Optional[int] = None,
    rng: Optional[np.random.Generator] = None
) -> float:
    """对 tensors 做解析梯度与中心差分的比较，返回最大相对误差"""
    zero_grad(tensors)
    backward(fn())
    analytic = [t.grad.copy() if t.grad is not None else np.zeros(t.shape) for t in tensors]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        positions = np.arange(t.size)
        if max_positions is not None and t.size > max_positions:
            positions = np.sort(rng.choice(t.size, size=max_positions, replace=False))
        numeric = numeric_gradient(fn, t, positions, h)
        worst = max(worst, max_relative_error(g.reshape(-1)[positions], numeric))
    return worst
