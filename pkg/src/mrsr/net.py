"""Residual 3D convolutional super-resolution network.

A plain stack of 3x3x3 convolutions (ReLU after every layer but the last)
predicts a residual that is added to the input. Convolutions are
unit-stride with one voxel of mirror padding, so spatial shape is preserved.
Gradients of the mean-squared-error loss are accumulated by hand in reverse
order; no autodiff framework is involved.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .resample import reflect_index
from .volume import _atomic_write

KERNEL = 3
WEIGHTS_FORMAT = "MRW"
WEIGHTS_VERSION = 1
_ACTIVATIONS = ("relu", "none")


class WeightsFormatError(ValueError):
    pass


@dataclass
class ConvLayer3D:
    weights: np.ndarray  # (out, in, 3, 3, 3)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        w, b = np.asarray(self.weights), np.asarray(self.bias)
        if w.ndim != 5 or w.shape[2:] != (KERNEL,) * 3:
            raise ValueError(f"kernel bank must be (out, in, 3, 3, 3), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        self.weights, self.bias = w, b

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[ConvLayer3D]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) < 2:
            raise ValueError("a network needs at least two layers")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ValueError(f"layer width mismatch: {prev.out_features} -> {nxt.in_features}")
        if any(layer.activation != "relu" for layer in self.layers[:-1]):
            raise ValueError("all layers but the last must use relu")
        if self.layers[-1].activation != "none":
            raise ValueError("the final layer must be linear")
        if self.in_channels != self.out_channels:
            raise ValueError("residual sum needs matching input and output channels")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_features

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_features

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> Network:
        return self.astype(self.dtype)

    def astype(self, dtype) -> Network:
        layers = [
            ConvLayer3D(l.weights.astype(dtype, copy=True), l.bias.astype(dtype, copy=True), l.activation)
            for l in self.layers
        ]
        return Network(layers, dict(self.meta))

    def with_parameters(self, params) -> Network:
        params = list(params)
        layers = [
            ConvLayer3D(params[2 * i], params[2 * i + 1], l.activation) for i, l in enumerate(self.layers)
        ]
        return Network(layers, dict(self.meta))

    def equals(self, other: Network) -> bool:
        mine, theirs = self.parameters(), other.parameters()
        return len(mine) == len(theirs) and all(
            a.dtype == b.dtype and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_network(
    layers: int = 20,
    features: int = 64,
    in_ch: int = 1,
    out_ch: int | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """He-normal interior layers, all-zero final layer and biases.

    The zero final layer makes a freshly initialized network the identity map.
    """
    out_ch = in_ch if out_ch is None else out_ch
    if layers < 2 or features < 1 or in_ch < 1 or out_ch < 1:
        raise ValueError("need layers >= 2 and positive feature/channel counts")
    rng = np.random.default_rng(seed)
    widths = [in_ch] + [features] * (layers - 1) + [out_ch]
    stack = []
    for i, (cin, cout) in enumerate(zip(widths, widths[1:])):
        last = i == layers - 1
        shape = (cout, cin, KERNEL, KERNEL, KERNEL)
        if last:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / (cin * KERNEL**3))
        stack.append(ConvLayer3D(w.astype(dtype), np.zeros(cout, dtype=dtype), "none" if last else "relu"))
    return Network(stack, {"init": "he-normal", "seed": int(seed)})


# -- convolution primitives -------------------------------------------------


def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)), mode="reflect")


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, X, Y, Z) -> (C*27, X*Y*Z) matrix of mirrored 3x3x3 neighbourhoods."""
    c = x.shape[0]
    win = sliding_window_view(_pad(x), (KERNEL,) * 3, axis=(1, 2, 3))
    return win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * KERNEL**3, -1)


def _fold_padding(gp: np.ndarray) -> np.ndarray:
    """Adjoint of ``_pad``: route gradient from the halo back to its source."""
    for axis in (1, 2, 3):
        n = gp.shape[axis] - 2
        inner = np.take(gp, np.arange(1, n + 1), axis=axis)
        lo = reflect_index(-1, n)
        hi = reflect_index(n, n)
        sl_lo = [slice(None)] * 4
        sl_hi = [slice(None)] * 4
        sl_lo[axis], sl_hi[axis] = lo, hi
        edge_lo = np.take(gp, 0, axis=axis)
        edge_hi = np.take(gp, n + 1, axis=axis)
        inner[tuple(sl_lo)] += edge_lo
        inner[tuple(sl_hi)] += edge_hi
        gp = inner
    return gp


def _conv_input_grad(dz: np.ndarray, w: np.ndarray, shape) -> np.ndarray:
    """Gradient w.r.t. the layer input: full correlation with the flipped kernel."""
    c, nx, ny, nz = shape
    o = w.shape[0]
    g = np.pad(dz.reshape(o, nx, ny, nz), ((0, 0), (2, 2), (2, 2), (2, 2)))
    win = sliding_window_view(g, (KERNEL,) * 3, axis=(1, 2, 3))
    cols = win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(o * KERNEL**3, -1)
    w_flip = w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4).reshape(c, -1)
    gp = (w_flip @ cols).reshape(c, nx + 2, ny + 2, nz + 2)
    return _fold_padding(gp)


def _as_channels(net: Network, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected (channels, x, y, z) input, got shape {x.shape}")
    if x.shape[0] != net.in_channels:
        raise ValueError(f"network expects {net.in_channels} channels, input has {x.shape[0]}")
    return x.astype(net.dtype, copy=False)


def _conv(layer: ConvLayer3D, h: np.ndarray, image_in: bool = False, image_out: bool = False) -> np.ndarray:
    """Pre-activation (without bias) of one layer as a ``(F, X*Y*Z)`` matrix.

    Image-facing layers handle their few image channels one at a time: input
    channels are accumulated in channel order and output channels are
    computed by separate vector-matrix products. A network whose kernels
    were split into equal halves over duplicated inputs, or duplicated over
    outputs, then reproduces the original arithmetic exactly, since halving
    is exact in binary floating point and BLAS may otherwise pick a
    different summation order for a different matrix shape.
    """
    w = layer.weights.reshape(layer.out_features, layer.in_features, -1)
    if image_in:
        cols = [_im2col(h[c : c + 1]) for c in range(layer.in_features)]
        terms = [w[:, c] for c in range(layer.in_features)]
    else:
        cols = [_im2col(h)]
        terms = [w.reshape(layer.out_features, -1)]
    z = None
    for wc, col in zip(terms, cols):
        part = np.stack([row @ col for row in wc]) if image_out else wc @ col
        z = part if z is None else z + part
    return z


def _forward_cached(net: Network, x: np.ndarray):
    spatial = x.shape[1:]
    acts = [x]
    h = x
    for i, layer in enumerate(net.layers):
        z = _conv(layer, h, image_in=i == 0, image_out=i == len(net.layers) - 1)
        z += layer.bias[:, None]
        if layer.activation == "relu":
            np.maximum(z, 0, out=z)
        h = z.reshape((layer.out_features,) + spatial)
        acts.append(h)
    return x + acts[-1], acts


def forward(net: Network, x) -> np.ndarray:
    """Super-resolved output ``x + residual(x)`` for one ``(C, X, Y, Z)`` input."""
    x = _as_channels(net, x)
    return _forward_cached(net, x)[0]


def forward_batch(net: Network, xs) -> np.ndarray:
    return np.stack([forward(net, x) for x in xs])


def _sample_loss_grad(net: Network, x: np.ndarray, t: np.ndarray, scale: float):
    """Sum of squared errors times ``scale`` and its parameter gradients."""
    out, acts = _forward_cached(net, x)
    diff = out - t
    loss = float(np.sum(diff.astype(np.float64) ** 2)) * scale
    g = (2 * scale) * diff  # d loss / d residual
    gw = [None] * len(net.layers)
    gb = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (acts[i + 1] > 0)
        dz = g.reshape(layer.out_features, -1)
        gw[i] = (dz @ _im2col(acts[i]).T).reshape(layer.weights.shape)
        gb[i] = dz.sum(axis=1)
        if i > 0:
            g = _conv_input_grad(dz, layer.weights, acts[i].shape)
    return loss, gw, gb


def loss_and_gradients(net: Network, inputs, targets, threads: int = 1):
    """Mean squared error over voxels, channels and samples, with exact gradients.

    ``inputs``/``targets`` are a single ``(C, X, Y, Z)`` sample or a batch
    ``(B, C, X, Y, Z)``. Per-sample gradients are reduced in sample order, so
    the result does not depend on ``threads``.
    """
    inputs, targets = np.asarray(inputs), np.asarray(targets)
    if inputs.shape != targets.shape:
        raise ValueError(f"input shape {inputs.shape} != target shape {targets.shape}")
    if inputs.ndim == 4:
        inputs, targets = inputs[None], targets[None]
    if inputs.ndim != 5 or inputs.shape[1] != net.in_channels:
        raise ValueError(f"expected (B, {net.in_channels}, X, Y, Z) batch, got {inputs.shape}")
    inputs = inputs.astype(net.dtype, copy=False)
    targets = targets.astype(net.dtype, copy=False)
    scale = 1.0 / targets.size

    def one(k):
        return _sample_loss_grad(net, inputs[k], targets[k], scale)

    if threads > 1 and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(len(inputs))))
    else:
        parts = [one(k) for k in range(len(inputs))]

    loss, gw, gb = parts[0]
    gw, gb = [w.copy() for w in gw], [b.copy() for b in gb]
    for l, w_parts, b_parts in parts[1:]:
        loss += l
        for i in range(len(gw)):
            gw[i] += w_parts[i]
            gb[i] += b_parts[i]
    return loss, Gradients(gw, gb)


# -- transfer learning -------------------------------------------------------


def surgery_expand(net1: Network, first_scale: float = 0.5) -> Network:
    """Turn a single-echo network into a dual-echo one.

    First-layer kernels are copied onto the new input channel with each copy
    scaled by ``first_scale``; the final layer's kernels and bias are copied
    onto a second output channel. Interior layers are untouched.
    """
    if net1.in_channels != 1 or net1.out_channels != 1:
        raise ValueError(
            f"surgery expects a single-channel network, got {net1.in_channels}->{net1.out_channels}"
        )
    first, last = net1.layers[0], net1.layers[-1]
    w_first = np.concatenate([first.weights, first.weights], axis=1) * first.weights.dtype.type(first_scale)
    new_first = ConvLayer3D(w_first, first.bias.copy(), first.activation)
    new_last = ConvLayer3D(
        np.concatenate([last.weights, last.weights], axis=0),
        np.concatenate([last.bias, last.bias]),
        last.activation,
    )
    middle = [ConvLayer3D(l.weights.copy(), l.bias.copy(), l.activation) for l in net1.layers[1:-1]]
    meta = dict(net1.meta)
    meta["surgery"] = {"from_channels": 1, "to_channels": 2, "first_layer_scale": first_scale}
    return Network([new_first] + middle + [new_last], meta)


# -- weight container --------------------------------------------------------


def save_weights(net: Network, path) -> None:
    """Write ``[u64 manifest length][JSON manifest][float32 LE blocks]``."""
    manifest = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "in_channels": net.in_channels,
        "out_channels": net.out_channels,
        "n_layers": len(net.layers),
        "layers": [
            {
                "weight_shape": list(l.weights.shape),
                "bias_shape": list(l.bias.shape),
                "activation": l.activation,
            }
            for l in net.layers
        ],
        "meta": net.meta,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blocks = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.parameters())
    _atomic_write(Path(path), struct.pack("<Q", len(head)) + head + blocks)


def load_weights(path) -> Network:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise WeightsFormatError(f"{path}: too short for a weights container")
    (n_head,) = struct.unpack_from("<Q", raw)
    if 8 + n_head > len(raw):
        raise WeightsFormatError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[8 : 8 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format") != WEIGHTS_FORMAT or manifest.get("version") != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported format {manifest.get('format')!r} v{manifest.get('version')}")
    specs = manifest["layers"]
    if manifest["n_layers"] != len(specs):
        raise WeightsFormatError(f"{path}: manifest declares {manifest['n_layers']} layers but lists {len(specs)}")
    sizes = [(int(np.prod(s["weight_shape"])), int(np.prod(s["bias_shape"]))) for s in specs]
    need = 4 * sum(a + b for a, b in sizes)
    have = len(raw) - 8 - n_head
    if have != need:
        raise WeightsFormatError(f"{path}: payload has {have} bytes, manifest needs {need}")
    flat = np.frombuffer(raw, dtype="<f4", offset=8 + n_head).astype(np.float32)
    layers, pos = [], 0
    for spec, (nw, nb) in zip(specs, sizes):
        w = flat[pos : pos + nw].reshape(spec["weight_shape"])
        pos += nw
        b = flat[pos : pos + nb].reshape(spec["bias_shape"])
        pos += nb
        layers.append(ConvLayer3D(w.copy(), b.copy(), spec["activation"]))
    net = Network(layers, manifest.get("meta", {}))
    if net.in_channels != manifest["in_channels"] or net.out_channels != manifest["out_channels"]:
        raise WeightsFormatError(f"{path}: channel counts disagree with layer shapes")
    return net
