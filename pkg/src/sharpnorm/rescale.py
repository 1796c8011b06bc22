"""Function-preserving rescalings of ReLU networks.

Both transforms rely on ``relu(c * z) == c * relu(z)`` for ``c > 0`` and only
apply to two top-level :class:`~sharpnorm.nn.Dense` layers separated by a
single :class:`~sharpnorm.nn.ReLU`.
"""

from dataclasses import dataclass

import numpy as np

from . import nn


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class LayerPair:
    l1: int
    l2: int
    alpha: float


@dataclass(frozen=True)
class RowCol:
    layer: int
    index: int
    alpha: float


def _check_alpha(alpha):
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"rescaling factor must be finite and positive, got {alpha}")


def _consumer(net, layer):
    """Id of the Dense layer fed by ``layer`` through exactly one top-level ReLU."""
    node = net.node(layer)
    if len(node.path) != 1:
        raise StructureError(f"layer {layer} sits inside a ParallelSum branch")
    pos = node.path[0]
    nodes = net.nodes
    if not isinstance(node.spec, nn.Dense):
        raise StructureError(f"layer {layer} is not Dense")
    if pos + 2 >= len(nodes) or not isinstance(nodes[pos + 1].spec, nn.ReLU) or not isinstance(nodes[pos + 2].spec, nn.Dense):
        raise StructureError(f"layer {layer} is not followed by ReLU then Dense")
    return nodes[pos + 2].layer


def layer_rescale(params, l1, l2, alpha) -> nn.ParamStore:
    """``W1, b1 <- alpha * (W1, b1)`` and ``W2 <- W2 / alpha``."""
    _check_alpha(alpha)
    if _consumer(params.net, l1) != l2:
        raise StructureError(f"layers {l1} and {l2} are not separated by a single ReLU")
    out = params.copy()
    out.weight(l1)[...] *= alpha
    if out.bias(l1) is not None:
        out.bias(l1)[...] *= alpha
    out.weight(l2)[...] /= alpha
    return out


def row_col_rescale(params, layer, index, alpha) -> nn.ParamStore:
    """Divide row ``index`` of ``W^(layer)`` (and its bias) by ``alpha``; multiply the
    matching column of the next Dense weight by ``alpha``."""
    _check_alpha(alpha)
    nxt = _consumer(params.net, layer)
    rows = params.weight(layer).shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"row {index} out of range for {rows} rows")
    out = params.copy()
    out.weight(layer)[index] /= alpha
    if out.bias(layer) is not None:
        out.bias(layer)[index] /= alpha
    out.weight(nxt)[:, index] *= alpha
    return out


def apply(params, op) -> nn.ParamStore:
    if isinstance(op, LayerPair):
        return layer_rescale(params, op.l1, op.l2, op.alpha)
    if isinstance(op, RowCol):
        return row_col_rescale(params, op.layer, op.index, op.alpha)
    raise TypeError(f"unknown rescale op {op!r}")


def max_output_change(net, before, after, x) -> float:
    return float(np.abs(nn.forward(net, before, x) - nn.forward(net, after, x)).max())
