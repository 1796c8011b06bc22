"""Checkpoint files, network (de)serialization and CSV tables.

Checkpoint layout (all integers little-endian)::

    b"SHRP" | u32 version | u32 manifest length | manifest (UTF-8 JSON) | weights

``weights`` is the flat parameter vector as little-endian float64, in the
network's layer order, exactly ``8 * total_params`` bytes.
"""

import csv
import json
import struct

import numpy as np

from . import nn

MAGIC = b"SHRP"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


def layer_to_dict(layer):
    if isinstance(layer, nn.Dense):
        return {"kind": "dense", "in": layer.in_features, "out": layer.out_features, "bias": layer.bias}
    if isinstance(layer, nn.ReLU):
        return {"kind": "relu"}
    if isinstance(layer, nn.Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, nn.Conv2d):
        return {
            "kind": "conv2d",
            "in": layer.in_channels,
            "out": layer.out_channels,
            "kernel": layer.kernel_size,
            "stride": layer.stride,
            "padding": layer.padding,
            "bias": layer.bias,
        }
    if isinstance(layer, nn.ParallelSum):
        return {"kind": "parallel_sum", "a": [layer_to_dict(l) for l in layer.branch_a], "b": [layer_to_dict(l) for l in layer.branch_b]}
    raise TypeError(f"cannot serialize {layer!r}")


def layer_from_dict(d):
    kind = d["kind"]
    if kind == "dense":
        return nn.Dense(d["in"], d["out"], d.get("bias", True))
    if kind == "relu":
        return nn.ReLU()
    if kind == "flatten":
        return nn.Flatten()
    if kind == "conv2d":
        return nn.Conv2d(d["in"], d["out"], d["kernel"], d.get("stride", 1), d.get("padding", 0), d.get("bias", True))
    if kind == "parallel_sum":
        return nn.ParallelSum([layer_from_dict(l) for l in d["a"]], [layer_from_dict(l) for l in d["b"]])
    raise CheckpointFormatError(f"unknown layer kind {kind!r}")


def network_to_dict(net):
    return {"layers": [layer_to_dict(l) for l in net.layers], "input_shape": list(net.input_shape), "num_classes": net.num_classes}


def network_from_dict(d):
    if d.get("type") == "mlp":
        sizes = d["sizes"]
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(nn.Dense(a, b, d.get("bias", True)))
            if i < len(sizes) - 2:
                layers.append(nn.ReLU())
        return nn.NetworkSpec(layers, (sizes[0],), sizes[-1])
    return nn.NetworkSpec([layer_from_dict(l) for l in d["layers"]], d["input_shape"], d["num_classes"])


def save_checkpoint(path, params, manifest=None):
    manifest = dict(manifest or {})
    manifest["format_version"] = VERSION
    manifest["network"] = network_to_dict(params.net)
    manifest["total_params"] = params.total_params
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = params.flat.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head + blob)


def load_checkpoint(path):
    """Return ``(params, manifest)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: missing SHRP magic")
    if len(data) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    version, head_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, reader supports {VERSION}")
    try:
        manifest = json.loads(data[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt manifest ({exc})") from None
    net = network_from_dict(manifest["network"])
    blob = data[12 + head_len :]
    if len(blob) != 8 * net.total_params:
        raise CheckpointFormatError(f"{path}: weight blob has {len(blob)} bytes, expected {8 * net.total_params}")
    return nn.ParamStore(net, np.frombuffer(blob, dtype="<f8")), manifest


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_table(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])


def _parse(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_table(path):
    with open(path, newline="") as f:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(f)]


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    if path is None:
        return text
    with open(path, "w") as f:
        f.write(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
