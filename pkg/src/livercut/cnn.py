"""Small from-scratch 3D CNN: layers, forward pass, logistic loss and backprop.

Tensors are laid out (channels, x, y, z). A volume's [z, y, x] data is
transposed on the way in and out by :func:`predict`. Shapes are reported as
(x, y, z, channels) to match the usual way the layer table is written.

Convolution is cross-correlation. Every conv layer except the last is
followed by a ReLU; the first conv is followed by ReLU and then LRN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .volume import ProbabilityMap, Volume

KINDS = ("conv", "mean_pool", "lrn", "relu", "rearrange", "logistic")
EPS = 1e-12
LRN_DEFAULTS = (5, 2.0, 1e-4, 0.75)  # depth, k, alpha, beta

FULL_INPUT = (249, 249, 279)
FULL_CHANNELS = (96, 256, 512, 512, 512, 512, 512, 512, 128, 16, 1)
# Same layer kinds and geometry, small enough to run in tests.
SCALED_INPUT = (25, 25, 31)
SCALED_CHANNELS = (4, 8, 8, 8, 8, 8, 8, 16, 16, 4, 1)

_COL_BUDGET = 1 << 24  # im2col elements per chunk


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``row`` tags the table row whose output this layer produces."""

    kind: str
    kernel: tuple[int, int, int] = (1, 1, 1)
    out_channels: int = 0
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    lrn: tuple[int, float, float, float] = LRN_DEFAULTS
    row: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        for name in ("kernel", "stride", "padding"):
            v = tuple(int(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ConfigError(f"{name} needs 3 values, got {v}")
            object.__setattr__(self, name, v)
        if any(p < 0 for p in self.padding) or any(s < 1 for s in self.stride):
            raise ConfigError("padding must be >= 0 and stride >= 1")
        if any(k < 1 for k in self.kernel):
            raise ConfigError("kernel sizes must be >= 1")
        if self.kind == "conv" and self.out_channels < 1:
            raise ConfigError("conv layer needs out_channels >= 1")
        if self.kind == "lrn" and int(self.lrn[0]) % 2 == 0:
            raise ConfigError("LRN depth must be odd")


@dataclass
class NetworkSpec:
    """Ordered layers, input dims (x, y, z) and one (weights, bias) per conv.

    Conv weights have shape (out, in, kx, ky, kz).
    """

    layers: list[LayerSpec]
    input_dims: tuple[int, int, int]
    in_channels: int = 1
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def conv_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind == "conv"]

    def weight_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        c = self.in_channels
        for layer in self.layers:
            if layer.kind == "conv":
                shapes.append((layer.out_channels, c, *layer.kernel))
                c = layer.out_channels
            elif layer.kind == "rearrange":
                c //= 8
        return shapes

    def n_parameters(self) -> int:
        return sum(int(np.prod(s)) + s[0] for s in self.weight_shapes())

    def with_params(self, weights, biases) -> "NetworkSpec":
        shapes = self.weight_shapes()
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise DataError(f"expected {len(shapes)} conv parameter sets, got {len(weights)}")
        for k, (w, b, s) in enumerate(zip(weights, biases, shapes)):
            if tuple(np.shape(w)) != s or tuple(np.shape(b)) != (s[0],):
                raise DataError(f"conv {k}: parameter shapes {np.shape(w)}, {np.shape(b)} do not match {s}")
        return replace(self, weights=[np.asarray(w) for w in weights], biases=[np.asarray(b) for b in biases])


def table_network(channels=FULL_CHANNELS, input_dims=FULL_INPUT) -> NetworkSpec:
    """The 16-row layer stack, with configurable channel counts."""
    if len(channels) != 11:
        raise ConfigError("the layer stack has 11 conv layers")
    c = [int(x) for x in channels]
    for k in (6, 7, 8):
        if c[k] % 8:
            raise ConfigError(f"conv {k + 1} feeds a rearrange layer; channels must divide by 8, got {c[k]}")
    L = LayerSpec
    layers = [
        L("conv", (7, 7, 9), c[0], (2, 2, 2), (3, 3, 0)), L("relu"), L("lrn", row=1),
        L("mean_pool", (3, 3, 2), stride=(2, 2, 2), padding=(1, 1, 0), row=2),
        L("conv", (5, 5, 5), c[1], padding=(2, 2, 0)), L("relu", row=3),
        L("mean_pool", (3, 3, 2), stride=(2, 2, 2), row=4),
    ]
    for k, row in zip(range(2, 7), range(5, 10)):
        layers += [L("conv", (3, 3, 3), c[k], padding=(1, 1, 1)), L("relu", row=row)]
    for k, row in zip((7, 8, 9), (10, 12, 14)):
        layers += [L("rearrange", row=row),
                   L("conv", (3, 3, 3), c[k], padding=(1, 1, 1)), L("relu", row=row + 1)]
    layers += [L("conv", (3, 3, 3), c[10], padding=(1, 1, 1)), L("logistic", row=16)]
    return NetworkSpec(layers, tuple(int(x) for x in input_dims))


def init_params(net: NetworkSpec, seed: int = 0, dtype=np.float64) -> NetworkSpec:
    """Random He-scaled weights and small biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for s in net.weight_shapes():
        fan_in = int(np.prod(s[1:]))
        ws.append((rng.standard_normal(s) * np.sqrt(2.0 / fan_in)).astype(dtype))
        bs.append((0.01 * rng.standard_normal(s[0])).astype(dtype))
    return net.with_params(ws, bs)


def zero_params(net: NetworkSpec, dtype=np.float64) -> NetworkSpec:
    shapes = net.weight_shapes()
    return net.with_params([np.zeros(s, dtype) for s in shapes], [np.zeros(s[0], dtype) for s in shapes])


# ---------------------------------------------------------------- shapes


def _out_dim(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def layer_output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output (channels, x, y, z) for input ``shape``; raises DataError if invalid."""
    c, *dims = shape
    if layer.kind in ("conv", "mean_pool"):
        out = []
        for n, k, s, p in zip(dims, layer.kernel, layer.stride, layer.padding):
            if n + 2 * p < k:
                raise DataError(f"{layer.kind}: kernel {layer.kernel} larger than padded input {tuple(dims)}")
            out.append(_out_dim(n, k, s, p))
        return (layer.out_channels if layer.kind == "conv" else c, *out)
    if layer.kind == "rearrange":
        if c % 8:
            raise DataError(f"rearrange needs channels divisible by 8, got {c}")
        return (c // 8, *(2 * n for n in dims))
    return tuple(shape)


def propagate_shapes(net: NetworkSpec, input_shape=None) -> list[tuple[int, ...]]:
    """Output shape (channels, x, y, z) of every layer, in order."""
    shape = tuple(input_shape) if input_shape is not None else (net.in_channels, *net.input_dims)
    shapes = []
    for i, layer in enumerate(net.layers):
        try:
            shape = layer_output_shape(layer, shape)
        except DataError as exc:
            raise DataError(f"layer {i} ({layer.kind}): {exc}") from exc
        shapes.append(shape)
    return shapes


def row_shapes(net: NetworkSpec, input_shape=None) -> dict[int, tuple[int, int, int, int]]:
    """Output shape per table row as (x, y, z, channels)."""
    out = {}
    for layer, (c, x, y, z) in zip(net.layers, propagate_shapes(net, input_shape)):
        if layer.row is not None:
            out[layer.row] = (x, y, z, c)
    return out


# ---------------------------------------------------------------- layers


def _cols(xp: np.ndarray, kernel, stride, x0: int, x1: int, out_yz) -> np.ndarray:
    """im2col block for output x in [x0, x1): shape (cin, K, x1 - x0, oy, oz)."""
    cin = xp.shape[0]
    kx, ky, kz = kernel
    sx, sy, sz = stride
    oy, oz = out_yz
    cols = np.empty((cin, kx * ky * kz, x1 - x0, oy, oz), dtype=xp.dtype)
    k = 0
    for a in range(kx):
        xs = slice(x0 * sx + a, (x1 - 1) * sx + a + 1, sx)
        for b in range(ky):
            ys = slice(b, b + sy * (oy - 1) + 1, sy)
            for c in range(kz):
                cols[:, k] = xp[:, xs, ys, slice(c, c + sz * (oz - 1) + 1, sz)]
                k += 1
    return cols


def _pad_chunk(x: np.ndarray, padding, lo: int, hi: int) -> np.ndarray:
    """Zero-padded copy of padded-x range [lo, hi) of ``x``."""
    px, py, pz = padding
    nx = x.shape[1]
    a, b = lo - px, hi - px
    src = x[:, max(a, 0):min(b, nx)]
    return np.pad(src, ((0, 0), (max(0, -a), max(0, b - nx)), (py, py), (pz, pz)))


def conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride=(1, 1, 1), padding=(0, 0, 0)) -> np.ndarray:
    """Cross-correlation of (cin, X, Y, Z) input with (cout, cin, kx, ky, kz) filters, plus bias."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 4 or w.ndim != 5 or w.shape[1] != x.shape[0]:
        raise DataError(f"conv3d: input {x.shape} and weights {w.shape} are incompatible")
    cout, cin, *kernel = w.shape
    out_dims = []
    for n, k, s, p in zip(x.shape[1:], kernel, stride, padding):
        if n + 2 * p < k:
            raise DataError(f"conv3d: kernel {tuple(kernel)} larger than padded input {x.shape[1:]}")
        out_dims.append(_out_dim(n, k, s, p))
    ox, oy, oz = out_dims
    dtype = np.result_type(x, w)
    out = np.empty((cout, ox, oy, oz), dtype=dtype)
    w2 = w.reshape(cout, -1).astype(dtype, copy=False)
    step = max(1, _COL_BUDGET // (cin * int(np.prod(kernel)) * oy * oz))
    sx = stride[0]
    for x0 in range(0, ox, step):
        x1 = min(ox, x0 + step)
        xp = _pad_chunk(x.astype(dtype, copy=False), padding, x0 * sx, (x1 - 1) * sx + kernel[0])
        cols = _cols(xp, kernel, stride, 0, x1 - x0, (oy, oz))
        out[:, x0:x1] = (w2 @ cols.reshape(w2.shape[1], -1)).reshape(cout, x1 - x0, oy, oz)
    out += np.asarray(b, dtype=dtype).reshape(-1, 1, 1, 1)
    return out


def conv3d_backward(x, w, g, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Gradients (dx, dw, db) of :func:`conv3d` given output gradient ``g``."""
    cout, cin, *kernel = w.shape
    _, ox, oy, oz = g.shape
    px, py, pz = padding
    xp = np.pad(x, ((0, 0), (px, px), (py, py), (pz, pz)))
    cols = _cols(xp, kernel, stride, 0, ox, (oy, oz)).reshape(cin * int(np.prod(kernel)), -1)
    g2 = g.reshape(cout, -1)
    dw = (g2 @ cols.T).reshape(w.shape)
    db = g2.sum(axis=1)
    dcols = (w.reshape(cout, -1).T @ g2).reshape(cin, -1, ox, oy, oz)
    dxp = np.zeros_like(xp)
    kx, ky, kz = kernel
    sx, sy, sz = stride
    k = 0
    for a in range(kx):
        for b_ in range(ky):
            for c in range(kz):
                dxp[:, a:a + sx * (ox - 1) + 1:sx, b_:b_ + sy * (oy - 1) + 1:sy,
                    c:c + sz * (oz - 1) + 1:sz] += dcols[:, k]
                k += 1
    nx, ny, nz = x.shape[1:]
    return dxp[:, px:px + nx, py:py + ny, pz:pz + nz], dw, db


def _pool_offsets(x_shape, window, stride, padding):
    _, *dims = x_shape
    out = [_out_dim(n, k, s, p) for n, k, s, p in zip(dims, window, stride, padding)]
    for a in range(window[0]):
        for b in range(window[1]):
            for c in range(window[2]):
                yield tuple(slice(o, o + s * (m - 1) + 1, s)
                            for o, s, m in zip((a, b, c), stride, out))


def _pool_counts(x_shape, window, stride, padding):
    ones = np.pad(np.ones(x_shape[1:], dtype=np.float64), [(p, p) for p in padding])
    cnt = None
    for sl in _pool_offsets(x_shape, window, stride, padding):
        cnt = ones[sl].copy() if cnt is None else cnt + ones[sl]
    return cnt


def mean_pool(x: np.ndarray, window=(3, 3, 2), stride=(2, 2, 2), padding=(0, 0, 0)) -> np.ndarray:
    """Mean over each window; padded positions are excluded from the mean."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DataError(f"mean_pool expects a 4D tensor, got shape {x.shape}")
    for n, k, p in zip(x.shape[1:], window, padding):
        if n + 2 * p < k:
            raise DataError(f"mean_pool: window {tuple(window)} larger than padded input {x.shape[1:]}")
    xp = np.pad(x, [(0, 0)] + [(p, p) for p in padding])
    acc = None
    for sl in _pool_offsets(x.shape, window, stride, padding):
        part = xp[(slice(None), *sl)]
        acc = part.copy() if acc is None else acc + part
    return acc / _pool_counts(x.shape, window, stride, padding).astype(acc.dtype)


def mean_pool_backward(x_shape, g, window, stride, padding):
    g = g / _pool_counts(x_shape, window, stride, padding)
    dxp = np.zeros((x_shape[0], *(n + 2 * p for n, p in zip(x_shape[1:], padding))), dtype=g.dtype)
    for sl in _pool_offsets(x_shape, window, stride, padding):
        dxp[(slice(None), *sl)] += g
    return dxp[(slice(None), *(slice(p, p + n) for p, n in zip(padding, x_shape[1:])))]


def _channel_window_sum(a: np.ndarray, depth: int) -> np.ndarray:
    """Sum over channels c - depth//2 .. c + depth//2 (zero outside)."""
    h = depth // 2
    c = a.shape[0]
    cs = np.cumsum(np.pad(a, [(h + 1, h)] + [(0, 0)] * (a.ndim - 1)), axis=0)
    return cs[depth:depth + c] - cs[:c]


def lrn(x: np.ndarray, depth: int = 5, k: float = 2.0, alpha: float = 1e-4, beta: float = 0.75) -> np.ndarray:
    """Across-channel normalisation ``a / (k + alpha * sum a^2) ** beta``."""
    if int(depth) % 2 == 0:
        raise ConfigError("LRN depth must be odd")
    x = np.asarray(x)
    out = np.empty_like(x)
    step = max(1, _COL_BUDGET // max(1, x[:, :1].size))
    for x0 in range(0, x.shape[1], step):
        a = x[:, x0:x0 + step]
        out[:, x0:x0 + step] = a / (k + alpha * _channel_window_sum(a * a, int(depth))) ** beta
    return out


def lrn_backward(x, g, depth=5, k=2.0, alpha=1e-4, beta=0.75):
    s = k + alpha * _channel_window_sum(x * x, int(depth))
    t = _channel_window_sum(g * x * s ** (-beta - 1.0), int(depth))
    return g * s ** (-beta) - 2.0 * alpha * beta * x * t


def rearrange_double(x: np.ndarray) -> np.ndarray:
    """Channel-to-space shuffle: 8 channels become a 2x2x2 block.

    Output[c, 2X + dx, 2Y + dy, 2Z + dz] = input[8c + 4dz + 2dy + dx, X, Y, Z],
    so the z offset is the most significant bit of the channel slot.
    """
    x = np.asarray(x)
    c, nx, ny, nz = x.shape
    if c % 8:
        raise DataError(f"rearrange needs channels divisible by 8, got {c}")
    t = x.reshape(c // 8, 2, 2, 2, nx, ny, nz)  # (c', dz, dy, dx, X, Y, Z)
    return t.transpose(0, 4, 3, 5, 2, 6, 1).reshape(c // 8, 2 * nx, 2 * ny, 2 * nz)


def rearrange_backward(g: np.ndarray) -> np.ndarray:
    c, nx, ny, nz = g.shape
    t = g.reshape(c, nx // 2, 2, ny // 2, 2, nz // 2, 2)  # (c', X, dx, Y, dy, Z, dz)
    return t.transpose(0, 6, 4, 2, 1, 3, 5).reshape(8 * c, nx // 2, ny // 2, nz // 2)


def relu(x):
    return np.maximum(x, 0)


def logistic(x):
    # exp of a non-positive argument only, so no overflow warnings
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


# ---------------------------------------------------------------- network


def _apply(layer: LayerSpec, x, w=None, b=None):
    if layer.kind == "conv":
        return conv3d(x, w, b, layer.stride, layer.padding)
    if layer.kind == "mean_pool":
        return mean_pool(x, layer.kernel, layer.stride, layer.padding)
    if layer.kind == "lrn":
        return lrn(x, *layer.lrn)
    if layer.kind == "relu":
        return relu(x)
    if layer.kind == "rearrange":
        return rearrange_double(x)
    return logistic(x)


def _check_params(net: NetworkSpec):
    if len(net.weights) != len(net.conv_layers()):
        raise DataError("network has no parameters loaded; use init_params or load_weights")


def forward(net: NetworkSpec, x: np.ndarray, keep: bool = False):
    """Run all layers on a (channels, x, y, z) tensor.

    Returns the output tensor, or (output, activations) with ``keep=True``
    where ``activations[i]`` is the input of layer i.
    """
    _check_params(net)
    x = np.asarray(x)
    expected = (net.in_channels, *net.input_dims)
    if x.shape != expected:
        raise DataError(f"input shape {x.shape} does not match network input {expected}")
    acts = []
    k = 0
    for i, layer in enumerate(net.layers):
        if keep:
            acts.append(x)
        try:
            if layer.kind == "conv":
                x = _apply(layer, x, net.weights[k], net.biases[k])
                k += 1
            else:
                x = _apply(layer, x)
        except DataError as exc:
            raise DataError(f"layer {i} ({layer.kind}): {exc}") from exc
    return (x, acts) if keep else x


def backward(net: NetworkSpec, acts: list, out: np.ndarray, g: np.ndarray):
    """Parameter gradients given d(loss)/d(output); returns (dweights, dbiases)."""
    dws, dbs = [], []
    k = len(net.weights)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, x = net.layers[i], acts[i]
        y = out if i == len(net.layers) - 1 else acts[i + 1]
        if layer.kind == "conv":
            k -= 1
            g, dw, db = conv3d_backward(x, net.weights[k], g, layer.stride, layer.padding)
            dws.append(dw)
            dbs.append(db)
        elif layer.kind == "mean_pool":
            g = mean_pool_backward(x.shape, g, layer.kernel, layer.stride, layer.padding)
        elif layer.kind == "lrn":
            g = lrn_backward(x, g, *layer.lrn)
        elif layer.kind == "relu":
            g = g * (x > 0)
        elif layer.kind == "rearrange":
            g = rearrange_backward(g)
        else:
            g = g * y * (1.0 - y)
    return dws[::-1], dbs[::-1]


# ---------------------------------------------------------------- loss


@dataclass
class LossContext:
    """Predictions in (0, 1), binary targets and the decayed parameter set."""

    predictions: np.ndarray
    targets: np.ndarray
    decay: float = 0.0
    decayed: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.predictions.shape != self.targets.shape:
            raise DataError("predictions and targets differ in shape")
        if self.predictions.size == 0:
            raise DataError("empty batch")
        if not np.all((self.targets == 0) | (self.targets == 1)):
            raise DataError("targets must be 0 or 1")
        if self.decay < 0:
            raise ConfigError("weight decay must be non-negative")

    @property
    def n(self) -> int:
        return self.predictions.size


def logistic_loss(ctx: LossContext) -> float:
    """Mean binary cross-entropy plus ``decay * |w|^2 / 2`` over the decayed weights."""
    p = np.clip(ctx.predictions, EPS, 1.0 - EPS)
    y = ctx.targets
    ce = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / ctx.n
    reg = 0.5 * ctx.decay * sum(float(np.sum(np.square(w))) for w in ctx.decayed)
    return float(ce + reg)


def logistic_loss_grad(ctx: LossContext) -> np.ndarray:
    """d(loss)/d(predictions), zero where the clamp is active."""
    p = ctx.predictions
    y = ctx.targets
    inside = (p > EPS) & (p < 1.0 - EPS)
    pc = np.clip(p, EPS, 1.0 - EPS)
    return np.where(inside, -(y / pc - (1.0 - y) / (1.0 - pc)) / ctx.n, 0.0)


def _batch_loss(net: NetworkSpec, batch, decay: float, grads: bool):
    preds, targets, cache = [], [], []
    for x, y in batch:
        out, acts = forward(net, x, keep=True)
        preds.append(out)
        targets.append(np.asarray(y, dtype=np.float64).reshape(out.shape))
        cache.append(acts)
    ctx = LossContext(np.concatenate([p.ravel() for p in preds]),
                      np.concatenate([t.ravel() for t in targets]),
                      decay, [net.weights[-1]] if net.weights else [])
    loss = logistic_loss(ctx)
    if not grads:
        return loss
    gflat = logistic_loss_grad(ctx)
    dws = [np.zeros_like(w) for w in net.weights]
    dbs = [np.zeros_like(b) for b in net.biases]
    start = 0
    for out, acts in zip(preds, cache):
        g = gflat[start:start + out.size].reshape(out.shape)
        start += out.size
        gw, gb = backward(net, acts, out, g)
        for k in range(len(dws)):
            dws[k] += gw[k]
            dbs[k] += gb[k]
    dws[-1] += decay * net.weights[-1]
    return loss, dws, dbs


def loss_and_gradients(net: NetworkSpec, batch, decay: float = 0.0):
    """Loss over a batch of (input tensor, target tensor) pairs and its parameter gradients.

    Every output voxel is one sample. Weight decay applies to the last conv
    layer's weights (the classifier), not to its bias.
    """
    return _batch_loss(net, batch, decay, True)


def batch_loss(net: NetworkSpec, batch, decay: float = 0.0) -> float:
    return _batch_loss(net, batch, decay, False)


def gradient_check(net: NetworkSpec, batch, decay: float = 0.0, h: float = 1e-4,
                   atol: float = 1e-8, indices=None) -> float:
    """Max relative error between backprop and central finite differences.

    ``indices`` limits the check to some (param index, flat position)
    pairs, where param index 2k is conv k's weights and 2k + 1 its bias.
    Relative error is ``|a - n| / max(|a|, |n|, atol)``.
    """
    _, dws, dbs = loss_and_gradients(net, batch, decay)
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    grads = [g for pair in zip(dws, dbs) for g in pair]
    if indices is None:
        indices = [(j, q) for j, p in enumerate(params) for q in range(p.size)]
    worst = 0.0
    for j, q in indices:
        flat = params[j].reshape(-1)
        old = flat[q]
        flat[q] = old + h
        up = batch_loss(net, batch, decay)
        flat[q] = old - h
        down = batch_loss(net, batch, decay)
        flat[q] = old
        num = (up - down) / (2.0 * h)
        ana = float(grads[j].reshape(-1)[q])
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), atol))
    return worst


# ---------------------------------------------------------------- weight files

_FILE_MAGIC = b"LVCW"
_LAYER_MAGIC = b"CONV"
_VERSION = 1


def save_weights(net: NetworkSpec, path) -> None:
    """Binary layout, little-endian throughout.

    header: b"LVCW", uint32 version, uint32 conv count;
    per conv: b"CONV", uint32 out, in, kx, ky, kz, then out*in*kx*ky*kz
    float32 weights in row-major (out, in, kx, ky, kz) order, then out
    float32 biases.
    """
    _check_params(net)
    with open(path, "wb") as fh:
        fh.write(_FILE_MAGIC + struct.pack("<II", _VERSION, len(net.weights)))
        for w, b in zip(net.weights, net.biases):
            fh.write(_LAYER_MAGIC + struct.pack("<5I", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_weights(net: NetworkSpec, path, dtype=np.float32) -> NetworkSpec:
    """Read a file written by :func:`save_weights` into a copy of ``net``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weight file {path}: {exc}") from exc
    if raw[:4] != _FILE_MAGIC or len(raw) < 12:
        raise DataError(f"{path}: not a weight file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported weight file version {version}")
    shapes = net.weight_shapes()
    if count != len(shapes):
        raise DataError(f"{path}: {count} conv layers, network has {len(shapes)}")
    pos = 12
    ws, bs = [], []
    for k, expect in enumerate(shapes):
        if raw[pos:pos + 4] != _LAYER_MAGIC:
            raise DataError(f"{path}: bad layer magic at conv {k}")
        dims = struct.unpack_from("<5I", raw, pos + 4)
        if tuple(dims) != expect:
            raise DataError(f"{path}: conv {k} has dims {dims}, expected {expect}")
        pos += 24
        nw = int(np.prod(dims))
        end = pos + 4 * (nw + dims[0])
        if end > len(raw):
            raise DataError(f"{path}: truncated at conv {k}")
        vals = np.frombuffer(raw, dtype="<f4", count=nw + dims[0], offset=pos).astype(dtype)
        ws.append(vals[:nw].reshape(dims))
        bs.append(vals[nw:].copy())
        pos = end
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes")
    return net.with_params(ws, bs)


# ---------------------------------------------------------------- inference


def predict(net: NetworkSpec, vol: Volume) -> ProbabilityMap:
    """Likelihood map for a volume whose dims equal the network input.

    The network output block is placed centred in a grid of the input dims
    (same spacing); voxels it does not cover get probability 0.
    """
    if vol.dims != tuple(net.input_dims):
        raise DataError(f"volume dims {vol.dims} do not match network input {tuple(net.input_dims)}")
    dtype = net.weights[0].dtype if net.weights else np.float64
    x = np.ascontiguousarray(vol.data.transpose(2, 1, 0), dtype=dtype)[None]
    out = forward(net, x)[0]
    full = np.zeros(vol.data.shape, dtype=np.float64)
    start = [(n - m) // 2 for n, m in zip(vol.dims, out.shape)]
    if any(s < 0 for s in start):
        raise DataError(f"network output {out.shape} larger than its input {vol.dims}")
    (x0, y0, z0), (mx, my, mz) = start, out.shape
    full[z0:z0 + mz, y0:y0 + my, x0:x0 + mx] = out.transpose(2, 1, 0)
    return ProbabilityMap(np.clip(full, 0.0, 1.0), vol.spacing)
