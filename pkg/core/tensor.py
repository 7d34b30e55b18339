"""
Tensor — Плотные тензоры float64 с обратным режимом дифференцирования.

Каждая операция — подкласс Function с парой forward/backward на numpy-массивах.
Операции записываются на активную ленту (Tape), если хотя бы один вход
требует градиент. Лента привязана к одному потоку; тензоры — значения и
могут свободно передаваться между потоками.

    with Tape() as tape:
        loss = mse_loss(conv2d(x, k, b, pad=1), t)
    tape.backward(loss)      # x.grad, k.grad, b.grad заполнены (аддитивно)

Вне ленты операции работают в режиме вывода: ничего не сохраняется для backward.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import NDArray

from core.errors import DivergenceError, ShapeError

logger = logging.getLogger("nett.tensor")

Array = NDArray[np.float64]

_local = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """Массив N×C×H×W (или скаляр) float64 с опциональным буфером градиента."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data: Any, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DivergenceError("Tensor: non-finite values")
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.node: TapeNode | None = None

    @classmethod
    def _wrap(cls, arr: Array, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.requires_grad = requires_grad
        out.node = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item(): tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data, requires_grad=False)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeNode:
    """Запись ленты: операция, входы, сохранённые активации (в function), выход."""
    op: str
    inputs: tuple[Tensor, ...]
    function: Function
    output: Tensor


class Tape:
    """Лента одного вычисления. Ацикличность гарантирована порядком записи."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._owner: int | None = None

    def __enter__(self) -> Tape:
        self._owner = threading.get_ident()
        if not hasattr(_local, "tapes"):
            _local.tapes = []
        _local.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def record(self, node: TapeNode) -> None:
        if self._owner is not None and threading.get_ident() != self._owner:
            raise RuntimeError("Tape is confined to the thread that opened it")
        self.nodes.append(node)

    def backward(self, root: Tensor) -> None:
        """Заполнить .grad листьев значением dRoot/dLeaf (с накоплением)."""
        if root.data.size != 1:
            raise ShapeError(f"backward: root must be scalar-valued, got shape {root.shape}")
        if root.node is None:
            if root.requires_grad:
                _accumulate(root, np.ones_like(root.data))
            return

        pending: dict[int, Array] = {id(root): np.ones_like(root.data)}
        touched: list[Tensor] = []
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for tensor, gi in zip(node.inputs, node.function.backward(g)):
                if gi is None or not tensor.requires_grad:
                    continue
                if tensor.node is None:
                    _accumulate(tensor, gi)
                    touched.append(tensor)
                else:
                    prev = pending.get(id(tensor))
                    pending[id(tensor)] = gi if prev is None else prev + gi

        for leaf in touched:
            if not np.all(np.isfinite(leaf.grad)):
                raise DivergenceError("backward: non-finite gradient")

    def replay(self) -> bool:
        """Пересчитать каждый узел из его входов; True, если всё совпало побитно."""
        for node in self.nodes:
            fn = type(node.function)(**node.function.params)
            again = fn.forward(*(t.data for t in node.inputs))
            if not np.array_equal(again, node.output.data):
                logger.warning(f"Replay mismatch at op {node.op}")
                return False
        return True

    def kink_signature(self) -> bytes:
        """Шаблон активаций недифференцируемых узлов (leaky ReLU, max-pool)."""
        parts = []
        for node in self.nodes:
            marker = node.function.kink_marker()
            if marker is not None:
                parts.append(np.ascontiguousarray(marker).tobytes())
        return b"".join(parts)


def _accumulate(leaf: Tensor, g: Array) -> None:
    g = np.broadcast_to(g, leaf.data.shape)
    leaf.grad = np.array(g, dtype=np.float64) if leaf.grad is None else leaf.grad + g


def backward(root: Tensor) -> None:
    """Обратный проход от скалярного корня по ленте, записавшей его."""
    if root.node is None:
        Tape().backward(root)
        return
    root.node.function.tape.backward(root)


class Function:
    """Дифференцируемая операция: forward на массивах, backward — градиенты входов."""

    op = "function"

    def __init__(self, **params: Any):
        self.params = params
        self.saved: dict[str, Any] = {}
        self.tape: Tape | None = None

    def forward(self, *arrays: Array) -> Array:
        raise NotImplementedError

    def backward(self, grad: Array) -> tuple[Array | None, ...]:
        raise NotImplementedError

    def kink_marker(self) -> NDArray | None:
        return None

    @classmethod
    def apply(cls, *tensors: Tensor, **params: Any) -> Tensor:
        fn = cls(**params)
        out_data = fn.forward(*(t.data for t in tensors))
        if not np.all(np.isfinite(out_data)):
            raise DivergenceError(f"{cls.op}: non-finite output")
        tape = _active_tape()
        requires = tape is not None and any(t.requires_grad for t in tensors)
        out = Tensor._wrap(out_data, requires_grad=requires)
        if requires:
            fn.tape = tape
            node = TapeNode(op=cls.op, inputs=tensors, function=fn, output=out)
            tape.record(node)
            out.node = node
        return out


# ============================================================
# Операции
# ============================================================

class Conv2d(Function):
    op = "conv2d"

    def forward(self, x: Array, w: Array, b: Array) -> Array:
        stride = self.params.get("stride", 1)
        pad = self.params.get("pad", 0)
        method = self.params.get("method", "direct")
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} must be 4-D")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d: input {x.shape} has {x.shape[1]} channels, kernel {w.shape} expects {w.shape[1]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
        if pad < 0 or stride < 1:
            raise ShapeError(f"conv2d: invalid pad={pad} / stride={stride}")

        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (wd + 2 * pad - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape} with pad={pad}")

        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        self.saved.update(xp=xp, w=w, in_shape=x.shape, out_hw=(ho, wo))

        if method == "im2col":
            cols = np.stack(
                [xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
                 for i in range(kh) for j in range(kw)],
                axis=2,
            ).reshape(n, c * kh * kw, ho * wo)
            out = np.matmul(w.reshape(o, c * kh * kw), cols).reshape(n, o, ho, wo)
        elif method == "direct":
            out = np.zeros((n, o, ho, wo))
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
                    out += np.tensordot(w[:, :, i, j], patch, axes=([1], [1])).transpose(1, 0, 2, 3)
        else:
            raise ValueError(f"conv2d: unknown method {method!r}")
        return out + b[None, :, None, None]

    def backward(self, grad: Array) -> tuple[Array, Array, Array]:
        stride = self.params.get("stride", 1)
        pad = self.params.get("pad", 0)
        xp, w = self.saved["xp"], self.saved["w"]
        ho, wo = self.saved["out_hw"]
        _, _, kh, kw = w.shape
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None),
                      slice(i, i + stride * (ho - 1) + 1, stride),
                      slice(j, j + stride * (wo - 1) + 1, stride))
                dw[:, :, i, j] = np.tensordot(grad, xp[sl], axes=([0, 2, 3], [0, 2, 3]))
                dxp[sl] += np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        db = grad.sum(axis=(0, 2, 3))
        _, _, h, wd = self.saved["in_shape"]
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw, db


class LeakyRelu(Function):
    op = "leaky_relu"

    def forward(self, x: Array) -> Array:
        slope = self.params["slope"]
        positive = x > 0
        self.saved["positive"] = positive
        return np.where(positive, x, slope * x)

    def backward(self, grad: Array) -> tuple[Array]:
        return (grad * np.where(self.saved["positive"], 1.0, self.params["slope"]),)

    def kink_marker(self) -> NDArray:
        return self.saved["positive"]


class MaxPool2d(Function):
    op = "maxpool2d"

    def forward(self, x: Array) -> Array:
        k = self.params.get("window", 2)
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d: expected 4-D input, got {x.shape}")
        n, c, h, w = x.shape
        if h % k or w % k:
            raise ShapeError(f"maxpool2d: spatial dims {h}x{w} not divisible by window {k}")
        blocks = (x.reshape(n, c, h // k, k, w // k, k)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h // k, w // k, k * k))
        # argmax -> первый максимум в построчном порядке окна
        arg = blocks.argmax(axis=-1)
        self.saved.update(arg=arg, shape=x.shape)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad: Array) -> tuple[Array]:
        k = self.params.get("window", 2)
        n, c, h, w = self.saved["shape"]
        routed = np.zeros((n, c, h // k, w // k, k * k))
        np.put_along_axis(routed, self.saved["arg"][..., None], grad[..., None], axis=-1)
        dx = (routed.reshape(n, c, h // k, w // k, k, k)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        return (dx,)

    def kink_marker(self) -> NDArray:
        return self.saved["arg"]


class UpsampleNearest2x(Function):
    op = "upsample_nearest2x"

    def forward(self, x: Array) -> Array:
        if x.ndim != 4:
            raise ShapeError(f"upsample_nearest2x: expected 4-D input, got {x.shape}")
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad: Array) -> tuple[Array]:
        n, c, h, w = grad.shape
        return (grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)


class ConcatChannels(Function):
    op = "concat_channels"

    def forward(self, a: Array, b: Array) -> Array:
        if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(f"concat_channels: {a.shape} and {b.shape} differ in batch/spatial dims")
        self.saved["split"] = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad: Array) -> tuple[Array, Array]:
        k = self.saved["split"]
        return grad[:, :k], grad[:, k:]


class SliceChannels(Function):
    op = "slice_channels"

    def forward(self, x: Array) -> Array:
        self.saved["shape"] = x.shape
        return x[:, self.params["start"]:self.params["stop"]].copy()

    def backward(self, grad: Array) -> tuple[Array]:
        dx = np.zeros(self.saved["shape"])
        dx[:, self.params["start"]:self.params["stop"]] = grad
        return (dx,)


class Add(Function):
    op = "add"

    def forward(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b

    def backward(self, grad: Array) -> tuple[Array, Array]:
        return grad, grad


class Sub(Function):
    op = "sub"

    def forward(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
        return a - b

    def backward(self, grad: Array) -> tuple[Array, Array]:
        return grad, -grad


class Scale(Function):
    op = "scale"

    def forward(self, x: Array) -> Array:
        return x * self.params["factor"]

    def backward(self, grad: Array) -> tuple[Array]:
        return (grad * self.params["factor"],)


class SumSquares(Function):
    op = "sum_squares"

    def forward(self, x: Array) -> Array:
        self.saved["x"] = x
        return np.asarray(np.sum(x * x))

    def backward(self, grad: Array) -> tuple[Array]:
        return (2.0 * self.saved["x"] * grad,)


class Sum(Function):
    op = "sum"

    def forward(self, x: Array) -> Array:
        self.saved["shape"] = x.shape
        return np.asarray(np.sum(x))

    def backward(self, grad: Array) -> tuple[Array]:
        return (np.full(self.saved["shape"], float(grad)),)


class MseLoss(Function):
    op = "mse_loss"

    def forward(self, pred: Array, target: Array) -> Array:
        if pred.shape != target.shape:
            raise ShapeError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
        diff = pred - target
        self.saved["diff"] = diff
        return np.asarray(np.mean(diff * diff))

    def backward(self, grad: Array) -> tuple[Array, Array]:
        diff = self.saved["diff"]
        g = 2.0 * diff / diff.size * grad
        return g, -g


# ============================================================
# Функциональный интерфейс
# ============================================================

def conv2d(input: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0,
           method: str = "direct") -> Tensor:
    """Взаимная корреляция плюс смещение; method: direct | im2col."""
    return Conv2d.apply(input, kernel, bias, stride=stride, pad=pad, method=method)


def leaky_relu(input: Tensor, slope: float) -> Tensor:
    """max(v, slope·v); slope строго в (0, 1) — иначе нет коэрцитивности."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu: slope must lie in (0, 1), got {slope}")
    return LeakyRelu.apply(input, slope=slope)


def maxpool2d(input: Tensor, window: int = 2) -> Tensor:
    return MaxPool2d.apply(input, window=window)


def upsample_nearest2x(input: Tensor) -> Tensor:
    return UpsampleNearest2x.apply(input)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return ConcatChannels.apply(a, b)


def slice_channels(input: Tensor, start: int, stop: int) -> Tensor:
    return SliceChannels.apply(input, start=start, stop=stop)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def scale(input: Tensor, factor: float) -> Tensor:
    return Scale.apply(input, factor=factor)


def sum_squares(input: Tensor) -> Tensor:
    """‖x‖² как скаляр."""
    return SumSquares.apply(input)


def tensor_sum(input: Tensor) -> Tensor:
    return Sum.apply(input)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    return MseLoss.apply(pred, target)
