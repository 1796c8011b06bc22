"""Small feedforward networks with exact backpropagation.

Networks are built from a fixed set of layers (:class:`Dense`, :class:`ReLU`,
:class:`Conv2d`, :class:`Flatten` and the two-branch :class:`ParallelSum`).
All parameters of a network live in one flat float64 vector owned by a
:class:`ParamStore`; per-layer weight and bias arrays are views into it.

Parametric layers are numbered in depth-first order (``ParallelSum`` visits
branch A before branch B). That number is the *layer id* used everywhere
else in the package to address ``W^(l)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .losses import batch_loss, batch_values


class ShapeError(ValueError):
    """Incompatible layer or input dimensions."""


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    bias: bool = True


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    bias: bool = True


@dataclass(frozen=True)
class ParallelSum:
    """Elementwise sum of two branches fed with the same input."""

    branch_a: tuple
    branch_b: tuple

    def __post_init__(self):
        object.__setattr__(self, "branch_a", tuple(self.branch_a))
        object.__setattr__(self, "branch_b", tuple(self.branch_b))


PARAMETRIC = (Dense, Conv2d)


@dataclass(frozen=True)
class ParamBlock:
    layer: int
    kind: str  # "weight" or "bias"
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass
class _Node:
    spec: object
    in_shape: tuple
    out_shape: tuple
    path: tuple
    layer: int = None
    branches: tuple = field(default=())


class NetworkSpec:
    """Layer list plus input shape, validated at construction."""

    def __init__(self, layers, input_shape, num_classes):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.param_layers = []
        self.blocks = []
        self._offset = 0
        self.nodes, out_shape = self._compile(self.layers, self.input_shape, ())
        if out_shape != (self.num_classes,):
            raise ShapeError(f"network output shape {out_shape} != ({self.num_classes},)")
        self.total_params = self._offset
        del self._offset
        self._weight_blocks = {b.layer: b for b in self.blocks if b.kind == "weight"}
        self._bias_blocks = {b.layer: b for b in self.blocks if b.kind == "bias"}

    def __repr__(self):
        return f"NetworkSpec(layers={list(self.layers)!r}, input_shape={self.input_shape}, num_classes={self.num_classes})"

    def _compile(self, layers, shape, prefix):
        nodes = []
        for pos, spec in enumerate(layers):
            path = prefix + (pos,)
            if isinstance(spec, ParallelSum):
                a, out_a = self._compile(spec.branch_a, shape, path + ("a",))
                b, out_b = self._compile(spec.branch_b, shape, path + ("b",))
                if out_a != out_b:
                    raise ShapeError(f"ParallelSum branches disagree: {out_a} vs {out_b}")
                nodes.append(_Node(spec, shape, out_a, path, branches=(a, b)))
                shape = out_a
                continue
            out = _out_shape(spec, shape)
            node = _Node(spec, shape, out, path)
            if isinstance(spec, PARAMETRIC):
                node.layer = len(self.param_layers)
                self.param_layers.append(spec)
                self._add_block(node.layer, "weight", _weight_shape(spec))
                if spec.bias:
                    self._add_block(node.layer, "bias", (spec.out_features if isinstance(spec, Dense) else spec.out_channels,))
            nodes.append(node)
            shape = out
        return nodes, shape

    def _add_block(self, layer, kind, shape):
        block = ParamBlock(layer, kind, tuple(shape), self._offset)
        self.blocks.append(block)
        self._offset += block.size

    @property
    def num_weight_arrays(self) -> int:
        return len(self.param_layers)

    def weight_block(self, layer) -> ParamBlock:
        return self._weight_blocks[layer]

    def bias_block(self, layer):
        return self._bias_blocks.get(layer)

    def node(self, layer) -> _Node:
        for node in _walk(self.nodes):
            if node.layer == layer:
                return node
        raise IndexError(f"no weight array with id {layer}")


def _walk(nodes):
    for node in nodes:
        yield node
        for branch in node.branches:
            yield from _walk(branch)


def _weight_shape(spec):
    if isinstance(spec, Dense):
        return (spec.out_features, spec.in_features)
    k = spec.kernel_size
    return (spec.out_channels, spec.in_channels, k, k)


def _out_shape(spec, shape):
    if isinstance(spec, Dense):
        if shape != (spec.in_features,):
            raise ShapeError(f"{spec} expects input ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if isinstance(spec, ReLU):
        return shape
    if isinstance(spec, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(spec, Conv2d):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ShapeError(f"{spec} expects input ({spec.in_channels}, H, W), got {shape}")
        if spec.stride < 1 or spec.padding < 0 or spec.kernel_size < 1:
            raise ShapeError(f"invalid convolution geometry {spec}")
        _, h, w = shape
        ho = (h + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{spec} produces an empty output from {shape}")
        return (spec.out_channels, ho, wo)
    raise TypeError(f"unknown layer {spec!r}")


class ParamStore:
    """All parameters of a network as one flat vector with structured views.

    ``weight(l)`` and ``bias(l)`` return views aliasing ``flat``; writes through
    either are visible in the other.
    """

    def __init__(self, net: NetworkSpec, flat=None):
        self.net = net
        if flat is None:
            self.flat = np.zeros(net.total_params)
        else:
            self.flat = np.array(flat, dtype=np.float64).reshape(-1)
            if self.flat.size != net.total_params:
                raise ShapeError(f"expected {net.total_params} parameters, got {self.flat.size}")

    def __len__(self):
        return self.flat.size

    @property
    def total_params(self) -> int:
        return self.flat.size

    def view(self, block: ParamBlock) -> np.ndarray:
        return self.flat[block.slice].reshape(block.shape)

    def weight(self, layer) -> np.ndarray:
        return self.view(self.net.weight_block(layer))

    def bias(self, layer):
        block = self.net.bias_block(layer)
        return None if block is None else self.view(block)

    def weights(self):
        return [self.weight(l) for l in range(self.net.num_weight_arrays)]

    def copy(self) -> "ParamStore":
        return ParamStore(self.net, self.flat)

    def index(self, layer, kind, idx) -> int:
        """Flat index of element ``idx`` of the weight or bias of ``layer``."""
        block = self.net.weight_block(layer) if kind == "weight" else self.net.bias_block(layer)
        if block is None:
            raise IndexError(f"layer {layer} has no {kind}")
        return block.offset + int(np.ravel_multi_index(tuple(np.atleast_1d(idx)), block.shape))

    def locate(self, i):
        """Inverse of :meth:`index`: ``(layer, kind, idx)`` of flat entry ``i``."""
        for block in self.net.blocks:
            if block.offset <= i < block.offset + block.size:
                idx = np.unravel_index(i - block.offset, block.shape)
                return block.layer, block.kind, tuple(int(j) for j in idx)
        raise IndexError(f"flat index {i} out of range")

    @classmethod
    def from_arrays(cls, net, weights, biases=None):
        store = cls(net)
        for l, w in enumerate(weights):
            store.weight(l)[...] = w
        for l, b in enumerate(biases or []):
            if b is not None:
                store.bias(l)[...] = b
        return store


def perturb(params: ParamStore, direction, scale) -> ParamStore:
    """Return a new store holding ``theta + scale * direction``."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != params.flat.shape:
        raise ShapeError(f"direction length {direction.size} != {params.total_params}")
    return ParamStore(params.net, params.flat + scale * direction)


# -- forward / backward ---------------------------------------------------


def _batch_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        return x[None], True
    if x.ndim >= 1 and int(np.prod(x.shape[1:])) == int(np.prod(net.input_shape)):
        return x.reshape((x.shape[0],) + net.input_shape), False
    raise ShapeError(f"input shape {x.shape} incompatible with {net.input_shape}")


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _taps(spec, out_hw):
    s = spec.stride
    ho, wo = out_hw
    for ki in range(spec.kernel_size):
        for kj in range(spec.kernel_size):
            yield ki, kj, np.s_[:, :, ki : ki + s * (ho - 1) + 1 : s, kj : kj + s * (wo - 1) + 1 : s]


def _layer_forward(node, params, x, tape):
    spec = node.spec
    if isinstance(spec, Dense):
        out = x @ params.weight(node.layer).T
        if spec.bias:
            out = out + params.bias(node.layer)
        tape.append((node, x))
        return out
    if isinstance(spec, ReLU):
        mask = x > 0
        tape.append((node, mask))
        return np.where(mask, x, 0.0)
    if isinstance(spec, Flatten):
        tape.append((node, x.shape))
        return x.reshape(x.shape[0], -1)
    if isinstance(spec, Conv2d):
        w = params.weight(node.layer)
        xp = _pad(x, spec.padding)
        out = np.zeros((x.shape[0],) + node.out_shape)
        for ki, kj, sl in _taps(spec, node.out_shape[1:]):
            out += np.einsum("oc,nchw->nohw", w[:, :, ki, kj], xp[sl])
        if spec.bias:
            out += params.bias(node.layer)[None, :, None, None]
        tape.append((node, xp))
        return out
    if isinstance(spec, ParallelSum):
        tape_a, tape_b = [], []
        out = _run(node.branches[0], params, x, tape_a) + _run(node.branches[1], params, x, tape_b)
        tape.append((node, (tape_a, tape_b)))
        return out
    raise TypeError(f"unknown layer {spec!r}")


def _layer_backward(node, params, cache, g, grad):
    spec = node.spec
    if isinstance(spec, Dense):
        w_block = params.net.weight_block(node.layer)
        grad[w_block.slice] += (g.T @ cache).ravel()
        if spec.bias:
            grad[params.net.bias_block(node.layer).slice] += g.sum(axis=0)
        return g @ params.weight(node.layer)
    if isinstance(spec, ReLU):
        return np.where(cache, g, 0.0)
    if isinstance(spec, Flatten):
        return g.reshape(cache)
    if isinstance(spec, Conv2d):
        xp = cache
        w = params.weight(node.layer)
        dw = np.zeros_like(w)
        dxp = np.zeros_like(xp)
        for ki, kj, sl in _taps(spec, node.out_shape[1:]):
            dw[:, :, ki, kj] = np.einsum("nohw,nchw->oc", g, xp[sl])
            dxp[sl] += np.einsum("oc,nohw->nchw", w[:, :, ki, kj], g)
        grad[params.net.weight_block(node.layer).slice] += dw.ravel()
        if spec.bias:
            grad[params.net.bias_block(node.layer).slice] += g.sum(axis=(0, 2, 3))
        p = spec.padding
        return dxp[:, :, p : dxp.shape[2] - p, p : dxp.shape[3] - p] if p else dxp
    if isinstance(spec, ParallelSum):
        tape_a, tape_b = cache
        return _unrun(tape_a, params, g, grad) + _unrun(tape_b, params, g, grad)
    raise TypeError(f"unknown layer {spec!r}")


def _run(nodes, params, x, tape):
    for node in nodes:
        x = _layer_forward(node, params, x, tape)
    return x


def _unrun(tape, params, g, grad):
    for node, cache in reversed(tape):
        g = _layer_backward(node, params, cache, g, grad)
    return g


def forward(net: NetworkSpec, params: ParamStore, x) -> np.ndarray:
    """Network outputs: shape ``(K,)`` for one sample, ``(N, K)`` for a batch."""
    xb, single = _batch_input(net, x)
    out = _run(net.nodes, params, xb, [])
    return out[0] if single else out


def loss_value(net, params, x, y, loss) -> float:
    """Mean loss over the batch ``(x, y)``."""
    xb, _ = _batch_input(net, x)
    values = batch_values(loss, _run(net.nodes, params, xb, []), y)
    return float(values.sum() / len(values))


def loss_and_gradient(net, params, x, y, loss):
    """Mean batch loss and its gradient as a flat vector aligned with ``params``."""
    xb, _ = _batch_input(net, x)
    tape = []
    out = _run(net.nodes, params, xb, tape)
    values, dlogits = batch_loss(loss, out, y)
    n = len(values)
    grad = np.zeros(net.total_params)
    _unrun(tape, params, dlogits / n, grad)
    return float(values.sum() / n), grad


def gradient(net, params, x, y, loss) -> np.ndarray:
    return loss_and_gradient(net, params, x, y, loss)[1]


def param_groups(net: NetworkSpec) -> "ParamGroups":
    return ParamGroups(net)


@dataclass(frozen=True)
class LayerGroups:
    """Row/column grouping of one weight array.

    Dense ``(m, n)``: row ``i`` and column ``j``. Conv ``(out, in, k, k)``: output
    channel and input channel, so every filter tap of a channel pair shares
    one group pair.
    """

    layer: int
    block: ParamBlock
    n_rows: int
    n_cols: int

    @property
    def taps(self) -> int:
        return self.block.size // (self.n_rows * self.n_cols)

    def row_index(self) -> np.ndarray:
        return np.broadcast_to(np.arange(self.n_rows).reshape((-1,) + (1,) * (len(self.block.shape) - 1)), self.block.shape)

    def col_index(self) -> np.ndarray:
        shape = (1, self.n_cols) + (1,) * (len(self.block.shape) - 2)
        return np.broadcast_to(np.arange(self.n_cols).reshape(shape), self.block.shape)

    def reduce(self, flat_values) -> np.ndarray:
        """Sum the entries of this weight array into an ``(n_rows, n_cols)`` matrix."""
        v = np.asarray(flat_values)[self.block.slice].reshape(self.n_rows, self.n_cols, -1)
        return v.sum(axis=2)


class ParamGroups:
    def __init__(self, net: NetworkSpec):
        self.net = net
        self.layers = []
        excluded = np.zeros(net.total_params, dtype=bool)
        for l in range(net.num_weight_arrays):
            block = net.weight_block(l)
            self.layers.append(LayerGroups(l, block, block.shape[0], block.shape[1]))
            bias = net.bias_block(l)
            if bias is not None:
                excluded[bias.slice] = True
        self.excluded = excluded

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, layer) -> LayerGroups:
        return self.layers[layer]

    @property
    def num_grouped(self) -> int:
        return int((~self.excluded).sum())

    @property
    def num_excluded(self) -> int:
        return int(self.excluded.sum())
