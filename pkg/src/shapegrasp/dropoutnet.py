"""Occupancy completion network with dropout active at train AND test time.

A small 3D convolutional hourglass maps a binary partial-occupancy grid to
per-voxel occupancy probabilities.  Dropout layers stay active at inference,
so repeated forward passes with freshly sampled masks draw shape samples
from the predictive distribution; disabling the mask gives the deterministic
point-estimate baseline.

Everything is plain float64 numpy with hand-written forward/backward passes
(im2col convolutions, inverted dropout, Adam), which keeps training bitwise
reproducible from a seed and lets gradients be verified against finite
differences layer by layer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyDataset, ShapeMismatch
from .seeding import as_generator
from .voxelgrid import VoxelGrid

_CLAMP = 1e-7  # probability clamp before logs
_LRELU_SLOPE = 0.01

ACTIVATIONS = ("relu", "lrelu", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "tconv"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    activation: str
    dropout: bool

    def __post_init__(self):
        if self.kind not in ("conv", "tconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1 or self.padding < 0:
            raise ValueError("bad layer geometry")

    def out_dim(self, d: int) -> int:
        if self.kind == "conv":
            span = d + 2 * self.padding - self.kernel
            if span < 0 or span % self.stride:
                raise ValueError(f"conv geometry does not tile dim {d}")
            return span // self.stride + 1
        return (d - 1) * self.stride - 2 * self.padding + self.kernel


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    dropout_rate: float
    input_dim: int  # cubic input: (input_dim)^3 voxels, one channel

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout rate must lie in [0, 1)")
        d, c = self.input_dim, 1
        for layer in layers:
            if layer.in_channels != c:
                raise ValueError("layer channel chain is inconsistent")
            d = layer.out_dim(d)
            c = layer.out_channels
        if d != self.input_dim or c != 1:
            raise ValueError("layers must map input dims back to input dims with one channel")
        if layers[-1].activation != "sigmoid":
            raise ValueError("final activation must be sigmoid")
        if self.dropout_rate > 0 and not any(l.dropout for l in layers):
            raise ValueError("dropout rate > 0 requires at least one dropout layer")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "dropout_rate", float(self.dropout_rate))
        object.__setattr__(self, "input_dim", int(self.input_dim))

    def layer_dims(self):
        """Spatial dim entering each layer (plus the final output dim)."""
        dims = [self.input_dim]
        for layer in self.layers:
            dims.append(layer.out_dim(dims[-1]))
        return dims


def default_spec(input_dim: int = 16, dropout_rate: float = 0.2) -> NetworkSpec:
    """Two stride-2 convolutions down, two transposed convolutions up."""
    layers = (
        LayerSpec("conv", 1, 8, 4, 2, 1, "lrelu", True),
        LayerSpec("conv", 8, 16, 4, 2, 1, "lrelu", True),
        LayerSpec("tconv", 16, 8, 4, 2, 1, "lrelu", True),
        LayerSpec("tconv", 8, 1, 4, 2, 1, "sigmoid", False),
    )
    return NetworkSpec(layers, dropout_rate, input_dim)


@dataclass(frozen=True)
class NetworkParams:
    spec: NetworkSpec
    weights: tuple  # per layer: conv (Co, Ci, k, k, k); tconv (Ci, Co, k, k, k)
    biases: tuple  # per layer: (Co,)

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("network parameters must be finite")
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))


@dataclass(frozen=True)
class DropoutMask:
    """Binary keep masks for each dropout layer, plus the rate they encode.

    Kept units are scaled by 1/(1-rate) at application time (inverted
    dropout), so a rate-0 all-ones mask reproduces the mask-free path
    exactly.
    """

    keeps: tuple  # per dropout layer: (C, D, H, W) in {0, 1}
    rate: float

    def __post_init__(self):
        for k in self.keeps:
            vals = np.unique(np.asarray(k))
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("mask entries must be 0 or 1")
        if not (0.0 <= self.rate < 1.0):
            raise ValueError("mask rate must lie in [0, 1)")
        object.__setattr__(self, "keeps", tuple(np.asarray(k, dtype=np.float64) for k in self.keeps))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 60
    dropout_rate: float = None  # None -> use the spec's rate
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


# ---------------------------------------------------------------------------
# im2col convolution machinery.  A conv layer relates a BIG tensor
# (N, C, D, D, D) to a SMALL one (N, C', d, d, d); the transposed conv runs
# the same linear map in the adjoint direction.
# ---------------------------------------------------------------------------


def _im2col(big: np.ndarray, k: int, s: int, p: int, od: int) -> np.ndarray:
    """(N, C, D, D, D) -> (N, C*k^3, od^3)."""
    n, c = big.shape[:2]
    x = np.pad(big, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, k, od, od, od))
    for a in range(k):
        for b in range(k):
            for g in range(k):
                cols[:, :, a, b, g] = x[:, :, a : a + s * od : s, b : b + s * od : s, g : g + s * od : s]
    return cols.reshape(n, c * k**3, od**3)


def _col2im(dcols: np.ndarray, shape, k: int, s: int, p: int, od: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back into (N, C, D, D, D)."""
    n, c, d = shape[0], shape[1], shape[2]
    x = np.zeros((n, c, d + 2 * p, d + 2 * p, d + 2 * p))
    cols = dcols.reshape(n, c, k, k, k, od, od, od)
    for a in range(k):
        for b in range(k):
            for g in range(k):
                x[:, :, a : a + s * od : s, b : b + s * od : s, g : g + s * od : s] += cols[:, :, a, b, g]
    if p:
        x = x[:, :, p:-p, p:-p, p:-p]
    return x


def _layer_forward(layer: LayerSpec, x: np.ndarray, w: np.ndarray, b: np.ndarray, din: int, dout: int):
    """Linear part of one layer.  Returns (pre_activation, cache)."""
    n = x.shape[0]
    if layer.kind == "conv":
        cols = _im2col(x, layer.kernel, layer.stride, layer.padding, dout)
        wmat = w.reshape(layer.out_channels, -1)
        out = (wmat @ cols).reshape(n, layer.out_channels, dout, dout, dout)
        out += b[None, :, None, None, None]
        return out, cols
    # tconv: small -> big is the adjoint of the big -> small conv with
    # weight (Ci, Co*k^3)
    wmat = w.reshape(layer.in_channels, -1)  # (Ci, Co*k^3)
    x2d = x.reshape(n, layer.in_channels, -1)
    dcols = np.einsum("cm,ncl->nml", wmat, x2d)
    out = _col2im(dcols, (n, layer.out_channels, dout), layer.kernel, layer.stride, layer.padding, din)
    out += b[None, :, None, None, None]
    return out, None


def _layer_backward(layer: LayerSpec, grad: np.ndarray, x: np.ndarray, w: np.ndarray, cache, din: int, dout: int):
    """Gradients of one linear layer.  Returns (dx, dw, db)."""
    n = x.shape[0]
    if layer.kind == "conv":
        cols = cache
        g2d = grad.reshape(n, layer.out_channels, -1)
        db = g2d.sum(axis=(0, 2))
        wmat = w.reshape(layer.out_channels, -1)
        dw = np.einsum("nol,ncl->oc", g2d, cols).reshape(w.shape)
        dcols = np.einsum("oc,nol->ncl", wmat, g2d)
        dx = _col2im(dcols, x.shape, layer.kernel, layer.stride, layer.padding, dout)
        return dx, dw, db
    db = grad.sum(axis=(0, 2, 3, 4))
    cols_g = _im2col(grad, layer.kernel, layer.stride, layer.padding, din)
    x2d = x.reshape(n, layer.in_channels, -1)
    dw = np.einsum("ncl,nml->cm", x2d, cols_g).reshape(w.shape)
    wmat = w.reshape(layer.in_channels, -1)
    dx = np.einsum("cm,nml->ncl", wmat, cols_g).reshape(x.shape)
    return dx, dw, db


def _activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "lrelu":
        return np.where(z > 0, z, _LRELU_SLOPE * z)
    out = np.empty_like(z)
    np.exp(-np.abs(z), out=out)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return out


def _activate_grad(tag: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0).astype(np.float64)
    if tag == "lrelu":
        return np.where(z > 0, 1.0, _LRELU_SLOPE)
    return a * (1.0 - a)


def init_params(spec: NetworkSpec, rng) -> NetworkParams:
    """Seeded uniform init in +-sqrt(1/fan_in), fan_in = in_channels * k^3."""
    gen = as_generator(rng)
    weights, biases = [], []
    for layer in spec.layers:
        fan_in = layer.in_channels * layer.kernel**3
        bound = np.sqrt(1.0 / fan_in)
        if layer.kind == "conv":
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel, layer.kernel)
        else:
            shape = (layer.in_channels, layer.out_channels, layer.kernel, layer.kernel, layer.kernel)
        weights.append(gen.uniform(-bound, bound, size=shape))
        biases.append(gen.uniform(-bound, bound, size=layer.out_channels))
    return NetworkParams(spec, tuple(weights), tuple(biases))


def sample_mask(spec: NetworkSpec, rng) -> DropoutMask:
    """One binary keep-mask per dropout layer; unit kept w.p. 1 - p."""
    gen = as_generator(rng)
    dims = spec.layer_dims()
    keeps = []
    for i, layer in enumerate(spec.layers):
        if not layer.dropout:
            continue
        d = dims[i + 1]
        keeps.append((gen.random((layer.out_channels, d, d, d)) >= spec.dropout_rate).astype(np.float64))
    return DropoutMask(tuple(keeps), spec.dropout_rate)


def _forward_batch(params: NetworkParams, x: np.ndarray, keeps, rate: float, want_cache: bool = False):
    """Shared forward pass.

    x: (N, 1, D, D, D).  `keeps` is None (no dropout) or a list with one
    (N, C, d, d, d) keep array per dropout layer.
    """
    spec = params.spec
    dims = spec.layer_dims()
    cache = [] if want_cache else None
    drop_i = 0
    scale = 1.0 / (1.0 - rate) if rate else 1.0
    for i, layer in enumerate(spec.layers):
        z, cols = _layer_forward(layer, x, params.weights[i], params.biases[i], dims[i], dims[i + 1])
        a = _activate(layer.activation, z)
        keep = None
        if layer.dropout and keeps is not None:
            keep = keeps[drop_i]
            drop_i += 1
            out = a * keep * scale
        else:
            out = a
        if want_cache:
            cache.append((x, z, a, keep, cols))
        x = out
    return x, cache


def forward(params: NetworkParams, grid: VoxelGrid, mask=None) -> VoxelGrid:
    """One network pass; `mask` None runs with dropout disabled."""
    spec = params.spec
    d = spec.input_dim
    if grid.dims != (d, d, d):
        raise ShapeMismatch(f"input dims {grid.dims} do not match spec {(d, d, d)}")
    x = grid.values[None, None]
    if mask is None:
        keeps, rate = None, 0.0
    else:
        keeps = [k[None] for k in mask.keeps]
        rate = mask.rate
    out, _ = _forward_batch(params, x, keeps, rate)
    return grid.with_values(np.clip(out[0, 0], 1e-12, 1.0 - 1e-12))


def cross_entropy(output: VoxelGrid, target: VoxelGrid) -> float:
    """Mean binary cross-entropy over cells, target binary."""
    if output.dims != target.dims:
        raise DimMismatch("output/target dims differ")
    if not target.is_binary:
        raise ValueError("cross-entropy target must be binary")
    return _ce_loss(output.values, target.values)


def _ce_loss(o: np.ndarray, t: np.ndarray) -> float:
    oc = np.clip(o, _CLAMP, 1.0 - _CLAMP)
    return float(-np.mean(t * np.log(oc) + (1.0 - t) * np.log(1.0 - oc)))


def _ce_grad(o: np.ndarray, t: np.ndarray) -> np.ndarray:
    oc = np.clip(o, _CLAMP, 1.0 - _CLAMP)
    g = (-t / oc + (1.0 - t) / (1.0 - oc)) / o.size
    g[(o < _CLAMP) | (o > 1.0 - _CLAMP)] = 0.0
    return g


def loss_and_grads(params: NetworkParams, x: np.ndarray, target: np.ndarray, keeps, rate: float):
    """Training loss and parameter gradients for one batch."""
    spec = params.spec
    dims = spec.layer_dims()
    out, cache = _forward_batch(params, x, keeps, rate, want_cache=True)
    loss = _ce_loss(out, target)
    grad = _ce_grad(out, target)
    scale = 1.0 / (1.0 - rate) if rate else 1.0
    dws = [None] * len(spec.layers)
    dbs = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        xin, z, a, keep, cols = cache[i]
        if keep is not None:
            grad = grad * keep * scale
        grad = grad * _activate_grad(layer.activation, z, a)
        grad, dws[i], dbs[i] = _layer_backward(layer, grad, xin, params.weights[i], cols, dims[i], dims[i + 1])
    return loss, dws, dbs


def train(dataset, spec: NetworkSpec, config: TrainConfig, init: NetworkParams = None, loss_hook=None) -> NetworkParams:
    """Mini-batch Adam on cross-entropy.  Deterministic given config.seed.

    dataset: list of (partial VoxelGrid, complete VoxelGrid) pairs; both
    grids of every pair must match the spec's input dims.  `loss_hook`
    receives (epoch, mean_epoch_loss) after each epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("training needs at least one example")
    d = spec.input_dim
    rate = spec.dropout_rate if config.dropout_rate is None else float(config.dropout_rate)
    if rate > 0 and not any(l.dropout for l in spec.layers):
        raise ValueError("dropout rate > 0 requires a dropout layer")
    spec = NetworkSpec(spec.layers, rate, spec.input_dim)
    for partial, complete in dataset:
        if partial.dims != (d, d, d) or complete.dims != (d, d, d):
            raise ShapeMismatch("dataset grids must match the spec input dims")

    xs = np.stack([p.values for p, _ in dataset])[:, None]
    ts = np.stack([c.values for _, c in dataset])[:, None]

    init_rng, train_rng = as_generator(config.seed).spawn(2)
    params = init if init is not None else init_params(spec, init_rng)
    params = NetworkParams(spec, params.weights, params.biases)

    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    dims = spec.layer_dims()
    drop_shapes = [
        (l.out_channels, dims[i + 1], dims[i + 1], dims[i + 1])
        for i, l in enumerate(spec.layers)
        if l.dropout
    ]

    step = 0
    n = len(dataset)
    for epoch in range(config.epochs):
        order = train_rng.permutation(n)
        epoch_loss = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            xb, tb = xs[idx], ts[idx]
            keeps = None
            if rate > 0:
                keeps = [
                    (train_rng.random((len(idx),) + shp) >= rate).astype(np.float64)
                    for shp in drop_shapes
                ]
            cur = NetworkParams(spec, tuple(weights), tuple(biases))
            loss, dws, dbs = loss_and_grads(cur, xb, tb, keeps, rate)
            epoch_loss += loss * len(idx)
            step += 1
            bc1 = 1.0 - config.beta1**step
            bc2 = 1.0 - config.beta2**step
            for i in range(len(weights)):
                for buf, mom, vel, g in (
                    (weights[i], m_w[i], v_w[i], dws[i]),
                    (biases[i], m_b[i], v_b[i], dbs[i]),
                ):
                    mom *= config.beta1
                    mom += (1.0 - config.beta1) * g
                    vel *= config.beta2
                    vel += (1.0 - config.beta2) * g * g
                    buf -= config.learning_rate * (mom / bc1) / (np.sqrt(vel / bc2) + config.adam_eps)
        if loss_hook is not None:
            loss_hook(epoch, epoch_loss / n)
    return NetworkParams(spec, tuple(weights), tuple(biases))


def mc_samples(params: NetworkParams, grid: VoxelGrid, n_samples: int, rng) -> list:
    """Shape samples by repeated forward passes with fresh dropout masks.

    Per-sample streams derive from (seed, sample index), so results do not
    depend on evaluation order.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    children = as_generator(rng).spawn(n_samples)
    return [forward(params, grid, sample_mask(params.spec, child)) for child in children]


# ---------------------------------------------------------------------------
# Checkpoints: spec as JSON + raw tensors, bitwise round-trip.
# ---------------------------------------------------------------------------


def save_checkpoint(params: NetworkParams, path) -> None:
    spec_doc = {
        "dropout_rate": params.spec.dropout_rate,
        "input_dim": params.spec.input_dim,
        "layers": [asdict(l) for l in params.spec.layers],
    }
    arrays = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(Path(path), format="shapegrasp-checkpoint-v1", spec=json.dumps(spec_doc, sort_keys=True), **arrays)


def load_checkpoint(path) -> NetworkParams:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["format"]) != "shapegrasp-checkpoint-v1":
            raise ValueError(f"{path}: not a shapegrasp checkpoint")
        doc = json.loads(str(data["spec"]))
        spec = NetworkSpec(
            tuple(LayerSpec(**l) for l in doc["layers"]),
            doc["dropout_rate"],
            doc["input_dim"],
        )
        n = len(spec.layers)
        weights = tuple(data[f"w{i}"] for i in range(n))
        biases = tuple(data[f"b{i}"] for i in range(n))
    return NetworkParams(spec, weights, biases)
