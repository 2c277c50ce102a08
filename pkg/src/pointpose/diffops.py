"""Minimal reverse-mode kernels for desk-scale training.

A ``Tape`` records operations in forward order; ``Tape.backward`` walks them
in exact reverse order, accumulating gradients additively. The op set is
deliberately tiny: same-padding 2D convolution, bilinear ROIAlign, MSE,
penalty-reduced focal loss, plus elementwise add / scale / relu for
composing objectives.

All tape math runs in float64 so finite-difference checks have headroom;
``Grid`` inputs and outputs stay float32 at the boundary.

The parameter checkpoint container is a sequence of named sections:
u16 name length (little-endian) + UTF-8 name + one SPLG grid blob. Arrays
of rank 1/2/4 are coerced to rank-3 grids on write (documented per caller);
readers get rank-3 arrays back and reshape as needed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import Box, Grid, grid_to_bytes, read_grid

FOCAL_EPS = 1e-6


class Node:
    """A value recorded on a tape; holds the cached forward result."""

    __slots__ = ("tape", "value", "grad", "_backward")

    def __init__(self, tape: "Tape", value: np.ndarray, backward=None):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backward = backward

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __mul__(self, scalar: float) -> "Node":
        return scale(self, scalar)

    __rmul__ = __mul__

    def item(self) -> float:
        return float(self.value)


class Tape:
    """Ordered op recorder with a named parameter registry."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    def _record(self, value, backward=None) -> Node:
        node = Node(self, value, backward)
        self._nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._record(_as_array(value))

    def param(self, name: str, value: np.ndarray) -> Node:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = self._record(np.array(value, dtype=np.float64))
        self._params[name] = node
        return node

    def backward(self, root: Node) -> None:
        if root.tape is not self:
            raise ValueError("root node belongs to a different tape")
        root._accumulate(np.ones_like(root.value))
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, node in self._params.items():
            out[name] = (
                node.grad if node.grad is not None else np.zeros_like(node.value)
            )
        return out

    def params(self) -> dict[str, np.ndarray]:
        return {name: node.value for name, node in self._params.items()}


def _as_array(value) -> np.ndarray:
    if isinstance(value, Grid):
        return value.data.astype(np.float64)
    return np.asarray(value, dtype=np.float64)


def _find_tape(*values) -> Tape | None:
    for v in values:
        if isinstance(v, Node):
            return v.tape
    return None


def _lift(tape: Tape, value) -> Node:
    if isinstance(value, Node):
        if value.tape is not tape:
            raise ValueError("inputs recorded on different tapes")
        return value
    return tape.constant(value)


def add(a: Node, b: Node) -> Node:
    tape = _find_tape(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch {a.value.shape} vs {b.value.shape}")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return tape._record(a.value + b.value, backward)


def scale(a: Node, scalar: float) -> Node:
    s = float(scalar)

    def backward(g):
        a._accumulate(g * s)

    return a.tape._record(a.value * s, backward)


def relu(a: Node) -> Node:
    mask = a.value > 0

    def backward(g):
        a._accumulate(g * mask)

    return a.tape._record(np.where(mask, a.value, 0.0), backward)


def mean_nodes(nodes: list[Node]) -> Node:
    if not nodes:
        raise ValueError("cannot average zero nodes")
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return scale(total, 1.0 / len(nodes))


@dataclass
class ConvLayer:
    """Same-padding conv weights: kernel (k, k, c_in, c_out) plus bias (c_out,)."""

    kernel: np.ndarray | Node
    bias: np.ndarray | Node

    def __post_init__(self):
        k = _raw(self.kernel)
        b = _raw(self.bias)
        if k.ndim != 4 or k.shape[0] != k.shape[1]:
            raise ValueError(f"kernel must be (k,k,cin,cout), got {k.shape}")
        if k.shape[0] % 2 != 1:
            raise ValueError(f"kernel side must be odd, got {k.shape[0]}")
        if b.shape != (k.shape[3],):
            raise ValueError(f"bias shape {b.shape} does not match cout {k.shape[3]}")

    @property
    def ksize(self) -> int:
        return _raw(self.kernel).shape[0]

    @property
    def c_in(self) -> int:
        return _raw(self.kernel).shape[2]

    @property
    def c_out(self) -> int:
        return _raw(self.kernel).shape[3]

    @classmethod
    def identity(cls, ksize: int, channels: int) -> "ConvLayer":
        """Center tap 1 on the diagonal, everything else 0."""
        kernel = np.zeros((ksize, ksize, channels, channels), dtype=np.float64)
        mid = ksize // 2
        for c in range(channels):
            kernel[mid, mid, c, c] = 1.0
        return cls(kernel=kernel, bias=np.zeros(channels, dtype=np.float64))

    @classmethod
    def random(
        cls, ksize: int, c_in: int, c_out: int, rng: np.random.Generator,
        stddev: float = 0.1,
    ) -> "ConvLayer":
        kernel = rng.normal(0.0, stddev, size=(ksize, ksize, c_in, c_out))
        bias = rng.normal(0.0, stddev, size=(c_out,))
        return cls(kernel=kernel, bias=bias)

    def on_tape(self, tape: Tape, prefix: str) -> "ConvLayer":
        """Register kernel and bias as named tape parameters."""
        return ConvLayer(
            kernel=tape.param(f"{prefix}.kernel", _raw(self.kernel)),
            bias=tape.param(f"{prefix}.bias", _raw(self.bias)),
        )

    def copy(self) -> "ConvLayer":
        return ConvLayer(_raw(self.kernel).copy(), _raw(self.bias).copy())


def _raw(value) -> np.ndarray:
    return value.value if isinstance(value, Node) else np.asarray(value, dtype=np.float64)


def _conv2d_value(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, Cin, k, k)
    return np.einsum("hwcuv,uvcd->hwd", win, kernel) + bias


def conv2d(x, layer: ConvLayer):
    """Same-padding cross-correlation plus bias.

    Accepts a Grid (plain float32 forward), a float64 array, or a tape Node;
    the output matches the input kind. With Node inputs (for x and/or the
    layer weights) gradients flow to x, kernel, and bias.
    """
    tape = _find_tape(x, layer.kernel, layer.bias)
    if tape is None:
        xv = _as_array(x)
        if xv.ndim != 3 or xv.shape[2] != layer.c_in:
            raise ValueError(
                f"input channels {xv.shape} do not match layer c_in {layer.c_in}"
            )
        out = _conv2d_value(xv, _raw(layer.kernel), _raw(layer.bias))
        return Grid(out.astype(np.float32)) if isinstance(x, Grid) else out

    xn = _lift(tape, x)
    kn = _lift(tape, layer.kernel)
    bn = _lift(tape, layer.bias)
    if xn.value.ndim != 3 or xn.value.shape[2] != kn.value.shape[2]:
        raise ValueError(
            f"input channels {xn.value.shape} do not match kernel {kn.value.shape}"
        )
    k = kn.value.shape[0]
    pad = k // 2
    xp = np.pad(xn.value, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))
    out = np.einsum("hwcuv,uvcd->hwd", win, kn.value) + bn.value

    def backward(g):
        bn._accumulate(g.sum(axis=(0, 1)))
        kn._accumulate(np.einsum("hwcuv,hwd->uvcd", win, g))
        gp = np.pad(g, ((pad, pad), (pad, pad), (0, 0)))
        gwin = sliding_window_view(gp, (k, k), axis=(0, 1))  # (H, W, Cout, k, k)
        kflip = kn.value[::-1, ::-1]
        xn._accumulate(np.einsum("hwdab,abcd->hwc", gwin, kflip))

    return tape._record(out, backward)


class _RoiPlan:
    """Precomputed sample indices and bilinear weights for one box."""

    __slots__ = ("y0", "y1", "x0", "x1", "ty", "tx", "out_h", "out_w", "samples")

    def __init__(self, h: int, w: int, box: Box, out_h: int, out_w: int, samples: int):
        if out_h < 1 or out_w < 1 or samples < 1:
            raise ValueError("output dims and samples_per_bin must be >= 1")
        x1 = min(max(box.x1, 0.0), float(w))
        x2 = min(max(box.x2, 0.0), float(w))
        y1 = min(max(box.y1, 0.0), float(h))
        y2 = min(max(box.y2, 0.0), float(h))
        if not (x1 < x2 and y1 < y2):
            raise ValueError(
                f"box degenerate after clamping: ({x1},{y1},{x2},{y2})"
            )
        bw = (x2 - x1) / out_w
        bh = (y2 - y1) / out_h
        offs = (np.arange(samples, dtype=np.float64) + 0.5) / samples
        sx = x1 + (np.arange(out_w, dtype=np.float64)[:, None] + offs[None, :]) * bw
        sy = y1 + (np.arange(out_h, dtype=np.float64)[:, None] + offs[None, :]) * bh
        fx = sx.ravel() - 0.5
        fy = sy.ravel() - 0.5
        ix = np.floor(fx).astype(np.int64)
        iy = np.floor(fy).astype(np.int64)
        self.tx = fx - ix
        self.ty = fy - iy
        self.x0 = np.clip(ix, 0, w - 1)
        self.x1 = np.clip(ix + 1, 0, w - 1)
        self.y0 = np.clip(iy, 0, h - 1)
        self.y1 = np.clip(iy + 1, 0, h - 1)
        self.out_h, self.out_w, self.samples = out_h, out_w, samples

    def gather(self, x: np.ndarray) -> np.ndarray:
        ty = self.ty[:, None, None]
        tx = self.tx[None, :, None]
        top = x[self.y0][:, self.x0] * (1 - tx) + x[self.y0][:, self.x1] * tx
        bot = x[self.y1][:, self.x0] * (1 - tx) + x[self.y1][:, self.x1] * tx
        val = top * (1 - ty) + bot * ty
        s = self.samples
        val = val.reshape(self.out_h, s, self.out_w, s, x.shape[2])
        return val.mean(axis=(1, 3))

    def scatter(self, g: np.ndarray, h: int, w: int, channels: int) -> np.ndarray:
        s = self.samples
        gx = np.zeros((h, w, channels), dtype=np.float64)
        gv = np.repeat(np.repeat(g, s, axis=0), s, axis=1) / (s * s)
        ty = self.ty[:, None, None]
        tx = self.tx[None, :, None]
        np.add.at(gx, (self.y0[:, None], self.x0[None, :]), gv * (1 - ty) * (1 - tx))
        np.add.at(gx, (self.y0[:, None], self.x1[None, :]), gv * (1 - ty) * tx)
        np.add.at(gx, (self.y1[:, None], self.x0[None, :]), gv * ty * (1 - tx))
        np.add.at(gx, (self.y1[:, None], self.x1[None, :]), gv * ty * tx)
        return gx


def roialign(x, box: Box, out_h: int, out_w: int, samples_per_bin: int = 2):
    """Average-pooled bilinear extraction of a box to a fixed resolution.

    Each output bin averages samples_per_bin^2 regularly spaced bilinear
    samples (half-pixel-center convention, edge-clamped). Accepts Grid,
    array, or Node, like conv2d.
    """
    tape = _find_tape(x)
    if tape is None:
        xv = _as_array(x)
        plan = _RoiPlan(xv.shape[0], xv.shape[1], box, out_h, out_w, samples_per_bin)
        out = plan.gather(xv)
        return Grid(out.astype(np.float32)) if isinstance(x, Grid) else out

    xn = x
    h, w, c = xn.value.shape
    plan = _RoiPlan(h, w, box, out_h, out_w, samples_per_bin)
    out = plan.gather(xn.value)

    def backward(g):
        xn._accumulate(plan.scatter(g, h, w, c))

    return tape._record(out, backward)


def mse(a, b):
    """Mean over all elements of (a - b)^2. Scalar node for node inputs."""
    tape = _find_tape(a, b)
    if tape is None:
        av, bv = _as_array(a), _as_array(b)
        if av.shape != bv.shape:
            raise ValueError(f"shape mismatch {av.shape} vs {bv.shape}")
        return float(np.mean((av - bv) ** 2))

    an, bn = _lift(tape, a), _lift(tape, b)
    if an.value.shape != bn.value.shape:
        raise ValueError(f"shape mismatch {an.value.shape} vs {bn.value.shape}")
    diff = an.value - bn.value
    n = diff.size

    def backward(g):
        coeff = g * 2.0 / n
        an._accumulate(coeff * diff)
        bn._accumulate(-coeff * diff)

    return tape._record(np.mean(diff**2), backward)


def _focal_terms(pred: np.ndarray, target: np.ndarray):
    p = np.clip(pred, FOCAL_EPS, 1.0 - FOCAL_EPS)
    pos = target == 1.0
    n_pos = max(1, int(pos.sum()))
    pos_term = np.where(pos, (1.0 - p) ** 2 * np.log(p), 0.0)
    neg_term = np.where(pos, 0.0, (1.0 - target) ** 4 * p**2 * np.log(1.0 - p))
    loss = -(pos_term.sum() + neg_term.sum()) / n_pos
    return p, pos, n_pos, loss


def focal_det_loss(pred, target):
    """Penalty-reduced focal loss for detection heatmaps.

    Positives are cells where the target is exactly 1; all other cells are
    penalty-reduced negatives weighted by (1-target)^4. Predictions are
    clamped to [eps, 1-eps]; the loss is normalized by the positive count
    (at least 1). Gradients flow to pred only.
    """
    tape = _find_tape(pred)
    if tape is None:
        pv, tv = _as_array(pred), _as_array(target)
        if pv.shape != tv.shape:
            raise ValueError(f"shape mismatch {pv.shape} vs {tv.shape}")
        return float(_focal_terms(pv, tv)[3])

    pn = pred
    tv = _as_array(target)
    if pn.value.shape != tv.shape:
        raise ValueError(f"shape mismatch {pn.value.shape} vs {tv.shape}")
    p, pos, n_pos, loss = _focal_terms(pn.value, tv)
    interior = (pn.value > FOCAL_EPS) & (pn.value < 1.0 - FOCAL_EPS)

    def backward(g):
        d_pos = -2.0 * (1.0 - p) * np.log(p) + (1.0 - p) ** 2 / p
        d_neg = (1.0 - tv) ** 4 * (2.0 * p * np.log(1.0 - p) - p**2 / (1.0 - p))
        dp = np.where(pos, d_pos, d_neg) * (-1.0 / n_pos)
        pn._accumulate(g * np.where(interior, dp, 0.0))

    return tape._record(np.float64(loss), backward)


def sgd_step(params, grads, lr: float):
    """Plain gradient descent: p <- p - lr * g, elementwise.

    params/grads may be arrays, dicts of arrays, or sequences of arrays;
    returns the same structure with updated copies.
    """
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if isinstance(params, dict):
        if set(params) != set(grads):
            raise ValueError("param/grad keys differ")
        return {k: sgd_step(params[k], grads[k], lr) for k in params}
    if isinstance(params, (list, tuple)):
        if len(params) != len(grads):
            raise ValueError("param/grad lengths differ")
        return type(params)(sgd_step(p, g, lr) for p, g in zip(params, grads))
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return p - lr * g


def fd_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    x = np.array(x, dtype=np.float64)  # owned, contiguous copy we can perturb
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(x)
        flat[i] = orig - step
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference, normalized by gradient scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


_SECTION_LEN = struct.Struct("<H")


def write_checkpoint(sink, sections: dict[str, np.ndarray]) -> None:
    """Write named float32 grids as a concatenated section container."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            write_checkpoint(fh, sections)
        return
    for name, array in sections.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"section name too long: {name!r}")
        sink.write(_SECTION_LEN.pack(len(encoded)))
        sink.write(encoded)
        sink.write(grid_to_bytes(Grid(_to_rank3(array))))


def read_checkpoint(source) -> dict[str, np.ndarray]:
    """Read a section container back as name -> rank-3 float32 array."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_checkpoint(fh)
    sections: dict[str, np.ndarray] = {}
    while True:
        head = source.read(_SECTION_LEN.size)
        if not head:
            break
        if len(head) < _SECTION_LEN.size:
            raise ValueError("truncated section header")
        (name_len,) = _SECTION_LEN.unpack(head)
        name = source.read(name_len).decode("utf-8")
        if len(name.encode("utf-8")) < name_len:
            raise ValueError("truncated section name")
        sections[name] = np.array(read_grid(source).data)
    return sections


def _to_rank3(array: np.ndarray) -> np.ndarray:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 1:
        return arr.reshape(1, 1, -1)
    if arr.ndim == 2:
        return arr.reshape(*arr.shape, 1)
    if arr.ndim == 3:
        return arr
    if arr.ndim == 4:
        return arr.reshape(arr.shape[0], arr.shape[1], -1)
    raise ValueError(f"cannot store rank-{arr.ndim} array in a checkpoint")
