"""Dense tensors, the primitive op catalog, and reverse-mode differentiation.

Tensors are ``torch.Tensor`` objects and the tape is torch's autograd graph.
This module pins down the catalog every other module composes from, adds a
light :class:`Tape` record of primitive applications, and turns shape errors
into :class:`ShapeMismatchError` that names the failing op.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import torch
import torch.nn.functional as F

Tensor = torch.Tensor

DTYPES = {"f32": torch.float32, "f64": torch.float64}

_debug = False
_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)


class ShapeMismatchError(ValueError):
    pass


class UnknownOpError(KeyError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Enable the non-finite output check on every primitive."""
    global _debug
    _debug = bool(flag)


def tensor(data, dtype: str = "f32", requires_grad: bool = False) -> Tensor:
    t = torch.as_tensor(data, dtype=DTYPES[dtype]).clone().contiguous()
    t.requires_grad_(requires_grad)
    return t


@dataclass
class TapeNode:
    op_id: str
    inputs: tuple[int, ...]
    attrs: dict
    output: int


@dataclass
class Tape:
    """Ordered record of primitive applications made while the tape is active.

    Gradient bookkeeping itself is done by autograd; the node list exists so
    callers can inspect what was recorded and in which order.
    """

    nodes: list[TapeNode] = field(default_factory=list)
    _token: Any = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op_id: str, inputs: Sequence[Tensor], attrs: Mapping, out: Tensor) -> None:
        self.nodes.append(TapeNode(op_id, tuple(id(t) for t in inputs), dict(attrs), id(out)))

    def clear(self) -> None:
        self.nodes.clear()


def _axes(attrs: Mapping, ndim: int):
    axes = attrs.get("axes")
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        return (axes,)
    return tuple(axes)


def _layer_norm(x: Tensor, w: Tensor | None, b: Tensor | None, attrs: Mapping) -> Tensor:
    axes = _axes(attrs, x.ndim)
    eps = attrs.get("eps", 1e-5)
    mu = x.mean(dim=axes, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=axes, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if w is not None:
        y = y * w
    if b is not None:
        y = y + b
    return y


def _instance_norm(x: Tensor, w: Tensor | None, b: Tensor | None, attrs: Mapping) -> Tensor:
    y = _layer_norm(x, None, None, {"axes": tuple(range(2, x.ndim)), "eps": attrs.get("eps", 1e-5)})
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if w is not None:
        y = y * w.reshape(shape)
    if b is not None:
        y = y + b.reshape(shape)
    return y


def _slice(x: Tensor, attrs: Mapping) -> Tensor:
    axis = attrs["axis"]
    start, stop = attrs.get("start", 0), attrs.get("stop", x.shape[axis])
    step = attrs.get("step", 1)
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeMismatchError(f"slice: range [{start}:{stop}] outside axis {axis} of size {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop, step)
    return x[tuple(idx)]


def _reshape(x: Tensor, attrs: Mapping) -> Tensor:
    shape = tuple(attrs["shape"])
    if -1 not in shape and math.prod(shape) != x.numel():
        raise ShapeMismatchError(f"reshape: expected {x.numel()} elements, got target shape {shape}")
    return x.reshape(shape)


def _upsample(x: Tensor, attrs: Mapping) -> Tensor:
    mode = attrs.get("mode", "nearest")
    if "size" in attrs:
        return F.interpolate(x, size=tuple(attrs["size"]), mode=mode,
                             **({} if mode == "nearest" else {"align_corners": False}))
    return F.interpolate(x, scale_factor=attrs["scale"], mode=mode,
                         **({} if mode == "nearest" else {"align_corners": False}))


def _max_pool2d(x: Tensor, attrs: Mapping) -> Tensor:
    k = attrs.get("kernel", 2)
    return F.max_pool2d(x, k, stride=attrs.get("stride", k), ceil_mode=attrs.get("ceil_mode", True))


def _dropout(x: Tensor, attrs: Mapping) -> Tensor:
    p, train = attrs.get("p", 0.0), attrs.get("train", False)
    if not train or p == 0.0:
        return x
    gen = attrs.get("generator")
    keep = (torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


def _binary(fn: Callable) -> Callable:
    def op(inputs, attrs):
        a, b = inputs
        try:
            torch.broadcast_shapes(a.shape, b.shape)
        except RuntimeError:
            raise ShapeMismatchError(f"cannot broadcast {tuple(a.shape)} with {tuple(b.shape)}") from None
        return fn(a, b)
    return op


def _matmul(inputs, attrs):
    a, b = inputs
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatchError(f"inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def _opt(inputs, i):
    return inputs[i] if len(inputs) > i else None


PRIMITIVES: dict[str, Callable[[Sequence[Tensor], Mapping], Tensor]] = {
    "add": _binary(torch.add),
    "sub": _binary(torch.sub),
    "mul": _binary(torch.mul),
    "div": _binary(torch.div),
    "matmul": _matmul,
    "exp": lambda i, a: torch.exp(i[0]),
    "log": lambda i, a: torch.log(i[0]),
    "neg": lambda i, a: -i[0],
    "sum": lambda i, a: i[0].sum(dim=_axes(a, i[0].ndim), keepdim=a.get("keepdim", False)),
    "mean": lambda i, a: i[0].mean(dim=_axes(a, i[0].ndim), keepdim=a.get("keepdim", False)),
    "softmax": lambda i, a: softmax(i[0], a.get("axis", -1)),
    "sigmoid": lambda i, a: torch.sigmoid(i[0]),
    "relu": lambda i, a: torch.relu(i[0]),
    "leaky_relu": lambda i, a: F.leaky_relu(i[0], a.get("slope", 0.01)),
    "gelu": lambda i, a: 0.5 * i[0] * (1.0 + torch.erf(i[0] / math.sqrt(2.0))),
    "silu": lambda i, a: i[0] * torch.sigmoid(i[0]),
    "concat": lambda i, a: torch.cat(list(i), dim=a.get("axis", 0)),
    "slice": lambda i, a: _slice(i[0], a),
    "reshape": lambda i, a: _reshape(i[0], a),
    "permute": lambda i, a: i[0].permute(*a["perm"]),
    "pad": lambda i, a: F.pad(i[0], tuple(a["pads"]), value=a.get("value", 0.0)),
    "upsample": lambda i, a: _upsample(i[0], a),
    "max_pool2d": lambda i, a: _max_pool2d(i[0], a),
    "layer_norm": lambda i, a: _layer_norm(i[0], _opt(i, 1), _opt(i, 2), a),
    "instance_norm": lambda i, a: _instance_norm(i[0], _opt(i, 1), _opt(i, 2), a),
    "dropout": lambda i, a: _dropout(i[0], a),
    "conv2d": lambda i, a: conv2d(i[0], i[1], _opt(i, 2), **a),
    "conv_transpose2d": lambda i, a: conv_transpose2d(i[0], i[1], _opt(i, 2), **a),
}


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=axis, keepdim=True)


def apply_primitive(op_id: str, inputs: Sequence[Tensor], attrs: Mapping | None = None) -> Tensor:
    attrs = dict(attrs or {})
    try:
        fn = PRIMITIVES[op_id]
    except KeyError:
        raise UnknownOpError(op_id) from None
    try:
        out = fn(list(inputs), attrs)
    except ShapeMismatchError as e:
        raise ShapeMismatchError(f"{op_id}: {e}") from None
    except RuntimeError as e:
        shapes = [tuple(t.shape) for t in inputs]
        raise ShapeMismatchError(f"{op_id}: inputs {shapes} rejected ({e})") from None
    if _debug and out.is_floating_point() and not torch.isfinite(out).all():
        raise NonFiniteError(f"{op_id} produced non-finite values")
    tape = _active_tape.get()
    if tape is not None:
        tape.record(op_id, inputs, attrs, out)
    return out


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
           dilation=1, groups: int = 1) -> Tensor:
    """Cross-correlation of a B x C x H x W batch with an O x C/g x kh x kw kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError(f"conv2d: expected 4-D input and weight, got {tuple(x.shape)}, {tuple(weight.shape)}")
    c = x.shape[1]
    if c % groups or weight.shape[0] % groups:
        raise ShapeMismatchError(f"conv2d: channels {c} / out {weight.shape[0]} not divisible by groups={groups}")
    if weight.shape[1] != c // groups:
        raise ShapeMismatchError(f"conv2d: weight expects {weight.shape[1] * groups} input channels, got {c}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    kh, kw = weight.shape[2:]
    eff_h, eff_w = dh * (kh - 1) + 1, dw * (kw - 1) + 1
    if eff_h > x.shape[2] + 2 * ph or eff_w > x.shape[3] + 2 * pw:
        raise ShapeMismatchError(
            f"conv2d: kernel extent {eff_h}x{eff_w} exceeds padded input {x.shape[2] + 2 * ph}x{x.shape[3] + 2 * pw}")
    return F.conv2d(x, weight, bias, (sh, sw), (ph, pw), (dh, dw), groups)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
                     output_padding=0, groups: int = 1, dilation=1) -> Tensor:
    """Adjoint of :func:`conv2d` w.r.t. its input; weight is C_in x C_out/g x kh x kw."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError("conv_transpose2d: expected 4-D input and weight")
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatchError(f"conv_transpose2d: weight expects {weight.shape[0]} channels, got {x.shape[1]}")
    return F.conv_transpose2d(x, weight, bias, _pair(stride), _pair(padding), _pair(output_padding),
                              groups, _pair(dilation))


def backward(tape: Tape | None, loss: Tensor, leaves: Sequence[Tensor] | Mapping[str, Tensor] | None = None,
             retain: bool = False) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. ``leaves``.

    ``leaves`` may be a name->tensor mapping (the result is keyed the same way)
    or a sequence (keyed by position). ``retain`` keeps the graph and tape for
    a second call; otherwise the tape is cleared.
    """
    if loss.numel() != 1:
        raise ShapeMismatchError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    if loss.grad_fn is None and not loss.requires_grad:
        raise ValueError("backward: loss is not recorded on the tape")
    if leaves is None:
        raise ValueError("backward: no leaves given")
    if isinstance(leaves, Mapping):
        keys, tensors = list(leaves.keys()), list(leaves.values())
    else:
        tensors = list(leaves)
        keys = list(range(len(tensors)))
    grads = torch.autograd.grad(loss.reshape(()), tensors, retain_graph=retain, allow_unused=True)
    out = {k: (torch.zeros_like(t) if g is None else g) for k, t, g in zip(keys, tensors, grads)}
    if tape is not None and not retain:
        tape.clear()
    return out
