"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a `Function` subclass. `forward` works on
raw numpy arrays, `backward` maps the gradient of the output to one gradient
per input (or None for inputs that take no gradient). Calling
`Tensor.backward()` on a scalar walks the recorded graph in reverse
topological order and accumulates into the `grad` of leaf tensors.

Layout convention for image-like data: batch x channels x height x width.
"""

import logging
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from octave_codec.exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class _GraphState:
    """Process-wide switches: default precision and gradient recording."""

    def __init__(self) -> None:
        self.dtype = np.dtype(np.float32)
        self.grad_enabled = True


_state = _GraphState()


def get_default_dtype() -> np.dtype:
    return _state.dtype


def set_default_dtype(dtype: Any) -> None:
    """Select float32 (training) or float64 (gradient checks)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"Unsupported tensor precision: {dtype}")
    _state.dtype = dtype


@contextmanager
def default_dtype(dtype: Any) -> Iterator[None]:
    previous = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them for backward."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which
    receives dL/d(output) and returns dL/d(input) for every input.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = _state.grad_enabled and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A numpy array plus the bookkeeping reverse-mode differentiation needs.

    Leaf tensors built directly are cast to the default precision; tensors
    produced by a Function keep the dtype the forward pass returned.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Any = None,
        creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if creator is None:
            self.data = np.array(data, dtype=_state.dtype if dtype is None else dtype)
        else:
            self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

    # ---- introspection ----

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ---- differentiation ----

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.inputs:
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self) -> None:
        """
        Populate `grad` on every reachable leaf that requires gradients.

        Gradients accumulate across calls until cleared with `zero_grad`.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")

        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                node.grad = np.array(grad) if node.grad is None else node.grad + grad
                continue
            input_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # ---- arithmetic ----

    def _wrap(self, other: ArrayLike) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, self._wrap(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self._wrap(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, self._wrap(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self._wrap(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, self._wrap(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self._wrap(other), self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, self._wrap(other))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self._wrap(other), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return PowScalar.apply(self, exponent=float(exponent))

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    def sum(self, axis: Union[None, int, tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[None, int, tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        return Reshape.apply(self, shape=shape)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def clamp_min(self, floor: float) -> "Tensor":
        return ClampMin.apply(self, floor=float(floor))


class Parameter(Tensor):
    """A trainable leaf tensor; `trainable=False` freezes it."""

    def __init__(self, data: ArrayLike, trainable: bool = True, dtype: Any = None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.trainable = trainable


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(grad * self.b, self.a.shape),
            _unbroadcast(grad * self.a, self.b.shape),
        )


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(grad / self.b, self.a.shape),
            _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (-grad,)


class PowScalar(Function):
    def forward(self, a: np.ndarray, *, exponent: float) -> np.ndarray:
        self.a, self.exponent = a, exponent
        return np.power(a, exponent).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        local = self.exponent * np.power(self.a, self.exponent - 1.0)
        return ((grad * local).astype(grad.dtype, copy=False),)


class Sqrt(Function):
    """Square root whose gradient at exactly zero is taken as zero."""

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        safe = np.where(self.out > 0, self.out, 1.0)
        return (np.where(self.out > 0, 0.5 * grad / safe, 0.0).astype(grad.dtype, copy=False),)


class Relu(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.mask = a > 0
        return a * self.mask

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class Tanh(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * (1.0 - self.out * self.out),)


class ClampMin(Function):
    def forward(self, a: np.ndarray, *, floor: float) -> np.ndarray:
        self.mask = a > floor
        return np.maximum(a, floor).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class Sum(Function):
    def forward(self, a: np.ndarray, *, axis: Any, keepdims: bool) -> np.ndarray:
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a: np.ndarray, *, shape: tuple[int, ...]) -> np.ndarray:
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.shape),)


class GetItem(Function):
    def forward(self, a: np.ndarray, *, index: Any) -> np.ndarray:
        self.shape, self.dtype, self.index = a.shape, a.dtype, index
        return np.array(a[index])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


def _check_stride(stride: int) -> None:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")


class Conv2d(Function):
    """Cross-correlation with zero padding; kernel layout (out, in, k, k)."""

    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray, *, stride: int, padding: int) -> np.ndarray:
        self.x_shape, self.w, self.stride, self.padding = x.shape, w, stride, padding
        p = padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self.xp_shape = xp.shape
        k = w.shape[-1]
        self.windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(self.windows, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, p, w = self.stride, self.padding, self.w
        k = w.shape[-1]
        grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = grad.sum(axis=(0, 2, 3))
        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        ho, wo = grad.shape[2], grad.shape[3]
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(grad, w[:, :, i, j], axes=([1], [0]))
                grad_xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += contrib.transpose(
                    0, 3, 1, 2
                )
        h, wd = self.x_shape[2], self.x_shape[3]
        grad_x = grad_xp[:, :, p : p + h, p : p + wd] if p else grad_xp
        return grad_x, grad_w, grad_b


class ConvTranspose2d(Function):
    """Adjoint of Conv2d; kernel layout (in, out, k, k)."""

    def forward(
        self,
        x: np.ndarray,
        w: np.ndarray,
        b: np.ndarray,
        *,
        stride: int,
        padding: int,
        output_padding: int,
    ) -> np.ndarray:
        self.x, self.w, self.stride, self.padding = x, w, stride, padding
        n, _, h, wd = x.shape
        k = w.shape[-1]
        full_h = (h - 1) * stride + k + output_padding
        full_w = (wd - 1) * stride + k + output_padding
        full = np.zeros((n, w.shape[1], full_h, full_w), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(x, w[:, :, i, j], axes=([1], [0]))
                full[:, :, i : i + stride * (h - 1) + 1 : stride, j : j + stride * (wd - 1) + 1 : stride] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        p = padding
        out = full[:, :, p : full_h - p, p : full_w - p]
        return np.ascontiguousarray(out) + b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, p, w, x = self.stride, self.padding, self.w, self.x
        k = w.shape[-1]
        h, wd = x.shape[2], x.shape[3]
        grad_full = np.pad(grad, ((0, 0), (0, 0), (p, p), (p, p))) if p else grad
        windows = sliding_window_view(grad_full, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :h, :wd]
        grad_x = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_w = np.tensordot(x, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = grad.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(grad_x), grad_w, grad_b


class ReflectPad(Function):
    def forward(self, x: np.ndarray, *, size: int) -> np.ndarray:
        self.x_shape, self.size = x.shape, size
        p = size
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")

    @staticmethod
    def _fold(grad: np.ndarray, size: int, extent: int, axis: int) -> np.ndarray:
        inner = np.take(grad, range(size, size + extent), axis=axis)
        for r in range(size):
            top = np.take(grad, r, axis=axis)
            bottom = np.take(grad, size + extent + r, axis=axis)
            index_top = [slice(None)] * grad.ndim
            index_top[axis] = size - r
            inner[tuple(index_top)] += top
            index_bottom = [slice(None)] * grad.ndim
            index_bottom[axis] = extent - 2 - r
            inner[tuple(index_bottom)] += bottom
        return inner

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        h, w = self.x_shape[2], self.x_shape[3]
        folded = self._fold(grad, self.size, h, axis=2)
        return (self._fold(folded, self.size, w, axis=3),)


class AvgPool2(Function):
    """2x2 mean pooling with stride 2; an odd trailing row/column is dropped."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x_shape = x.shape
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        cropped = x[:, :, : 2 * h2, : 2 * w2]
        return cropped.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros(self.x_shape, dtype=grad.dtype)
        spread = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) * 0.25
        out[:, :, : spread.shape[2], : spread.shape[3]] = spread
        return (out,)


class SeparableBlur(Function):
    """Per-channel 'valid' filtering with a separable 1-D kernel."""

    def forward(self, x: np.ndarray, *, kernel: np.ndarray) -> np.ndarray:
        self.x_shape, self.kernel = x.shape, kernel
        k = len(kernel)
        rows = np.tensordot(sliding_window_view(x, k, axis=3), kernel, axes=([4], [0]))
        self.rows_shape = rows.shape
        return np.tensordot(sliding_window_view(rows, k, axis=2), kernel, axes=([4], [0]))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        kernel = self.kernel
        k = len(kernel)
        ho, wo = grad.shape[2], grad.shape[3]
        grad_rows = np.zeros(self.rows_shape, dtype=grad.dtype)
        for i in range(k):
            grad_rows[:, :, i : i + ho, :] += kernel[i] * grad
        grad_x = np.zeros(self.x_shape, dtype=grad.dtype)
        for j in range(k):
            grad_x[:, :, :, j : j + wo] += kernel[j] * grad_rows
        return (grad_x,)


def _check_conv_operands(x: Tensor, kernel: Tensor, bias: Tensor, in_axis: int, out_axis: int) -> None:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ContractError(f"conv expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[2] != kernel.shape[3]:
        raise ContractError(f"conv kernels must be square, got {kernel.shape}")
    if x.shape[1] != kernel.shape[in_axis]:
        raise ContractError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[in_axis]}")
    if bias.shape != (kernel.shape[out_axis],):
        raise ContractError(f"bias shape {bias.shape} does not match kernel {kernel.shape}")


def _zero_bias(kernel: Tensor, out_axis: int) -> Tensor:
    return Tensor(np.zeros(kernel.shape[out_axis]), dtype=kernel.dtype)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D convolution, kernel (out_ch, in_ch, k, k).

    Output extent is floor((in + 2*padding - k) / stride) + 1.
    """
    _check_stride(stride)
    if padding < 0:
        raise ConfigError(f"padding must be >= 0, got {padding}")
    bias = _zero_bias(kernel, 0) if bias is None else bias
    _check_conv_operands(x, kernel, bias, in_axis=1, out_axis=0)
    k = kernel.shape[-1]
    if min(x.shape[2], x.shape[3]) + 2 * padding < k:
        raise ContractError(f"input {x.shape} with padding {padding} is smaller than kernel {k}")
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def tconv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """
    2-D transposed convolution, kernel (in_ch, out_ch, k, k).

    Output extent is (in - 1) * stride - 2 * padding + k + output_padding;
    with output_padding 0 this is the exact adjoint of conv2d.
    """
    _check_stride(stride)
    if padding < 0 or not 0 <= output_padding < stride:
        raise ConfigError(f"invalid padding {padding} / output_padding {output_padding} for stride {stride}")
    bias = _zero_bias(kernel, 1) if bias is None else bias
    _check_conv_operands(x, kernel, bias, in_axis=0, out_axis=1)
    k = kernel.shape[-1]
    for extent in x.shape[2:]:
        if (extent - 1) * stride + k + output_padding - 2 * padding < 1:
            raise ContractError(f"padding {padding} leaves no output for input {x.shape}")
    return ConvTranspose2d.apply(x, kernel, bias, stride=stride, padding=padding, output_padding=output_padding)


def reflect_pad(x: Tensor, size: int) -> Tensor:
    """Mirror-pad the spatial axes without repeating the edge sample."""
    if size < 0:
        raise ConfigError(f"reflection padding must be >= 0, got {size}")
    if x.ndim != 4:
        raise ContractError(f"reflect_pad expects a 4-D tensor, got {x.shape}")
    if size == 0:
        return x
    if size >= min(x.shape[2], x.shape[3]):
        raise ConfigError(f"reflection padding {size} needs spatial extents > {size}, got {x.shape[2:]}")
    return ReflectPad.apply(x, size=size)


def avg_pool2(x: Tensor) -> Tensor:
    return AvgPool2.apply(x)


def separable_blur(x: Tensor, kernel: np.ndarray) -> Tensor:
    if x.shape[2] < len(kernel) or x.shape[3] < len(kernel):
        raise ContractError(f"input {x.shape} is smaller than the {len(kernel)}-tap window")
    return SeparableBlur.apply(x, kernel=np.asarray(kernel, dtype=x.dtype))
