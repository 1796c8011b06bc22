"""Random-label sweeps, correlation reports and the rescaling demonstration."""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data, hessian, nn, rescale, sharpness, trainer
from .persist import network_from_dict

log = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "run_id",
    "ratio",
    "seed",
    "train_acc",
    "test_acc",
    "gap",
    "trace_sharpness",
    "frobenius_sq_sum",
    "matrix_normalized",
    "normalized",
    "fisher_rao",
]
METRICS = ["trace_sharpness", "frobenius_sq_sum", "matrix_normalized", "normalized", "fisher_rao"]


class DegenerateInputError(ValueError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise DegenerateInputError("pearson needs two equal-length vectors with at least 3 entries")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise DegenerateInputError("pearson is undefined for a constant input")
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


def minmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise DegenerateInputError("cannot min-max rescale a constant column")
    return (v - lo) / (hi - lo)


# -- datasets from config ------------------------------------------------------


def load_splits(cfg, data_dir=None):
    """``(train, test)`` datasets described by the ``data`` config section."""
    source = cfg.get("source", "mnist")
    if source == "mnist":
        train = data.load_mnist(data_dir or cfg.get("dir"), "train")
        test = data.load_mnist(data_dir or cfg.get("dir"), "test")
    elif source == "digits":
        full = data.digits_dataset()
        order = np.random.default_rng(cfg.get("split_seed", 0)).permutation(len(full))
        n_train = cfg.get("train_size", 1000)
        train, test = full[np.sort(order[:n_train])], full[np.sort(order[n_train:])]
    elif source == "blobs":
        b = cfg["blobs"]
        full = data.synth_blobs(b["num_classes"], 2 * b["per_class"], b["dim"], b["spread"], b.get("seed", 0))
        order = np.random.default_rng(cfg.get("split_seed", 0)).permutation(len(full))
        half = len(full) // 2
        train, test = full[np.sort(order[:half])], full[np.sort(order[half:])]
    else:
        raise ValueError(f"unknown data source {source!r}")
    if cfg.get("subset"):
        train = data.subset(train, cfg["subset"], cfg.get("subset_seed", 0))
    if cfg.get("test_subset"):
        test = data.subset(test, cfg["test_subset"], cfg.get("subset_seed", 0))
    return train, test


def probe_config(d) -> hessian.ProbeConfig:
    return hessian.ProbeConfig(**(d or {}))


def measure_run(net, params, train_ds, mcfg, seed):
    """Metrics of one trained model; curvature on the (possibly corrupted) training set."""
    x, y = train_ds.features, train_ds.labels
    probes = probe_config({**mcfg.get("probes", {}), "seed": seed})
    lam = mcfg.get("lambda", 0.5)
    loss = mcfg.get("loss", "nsce")
    report = sharpness.measure(net, params, x, y, loss, lam, probes, fisher=mcfg.get("fisher", True))
    trace_loss = mcfg.get("trace_loss", loss)
    if trace_loss != loss:
        h = hessian.hutchinson_diag(net, params, x, y, trace_loss, probes)
        report.trace_sharpness = sharpness.trace_sharpness(h)
        report.notes.append(f"trace_sharpness measured with {trace_loss} curvature")
    return report


def run_point(args):
    cfg, run_id, ratio, seed, data_dir = args
    train_ds, test_ds = load_splits(cfg["data"], data_dir)
    train_ds = data.corrupt_labels(train_ds, ratio, seed)
    net = network_from_dict(cfg["network"])
    tcfg = trainer.TrainConfig.from_dict({**cfg.get("train", {}), "seed": seed})
    rec = trainer.run(net, train_ds, test_ds, tcfg)
    report = measure_run(net, rec.params, train_ds, cfg.get("measure", {}), seed)
    log.info("run %d ratio=%s seed=%d gap=%.4f normalized=%.6g", run_id, ratio, seed, rec.gap, report.normalized)
    return {
        "run_id": run_id,
        "ratio": float(ratio),
        "seed": int(seed),
        "train_acc": rec.train_accuracy,
        "test_acc": rec.test_accuracy,
        "gap": rec.gap,
        "trace_sharpness": report.trace_sharpness,
        "frobenius_sq_sum": report.frobenius_sq_sum,
        "matrix_normalized": report.matrix_normalized,
        "normalized": report.normalized,
        "fisher_rao": report.fisher_rao if report.fisher_rao is not None else float("nan"),
    }


def sweep(cfg, data_dir=None, jobs=None):
    """Train and measure every (ratio, seed) pair; rows come back in run-id order."""
    grid = [(r, s) for r in cfg.get("ratios", [round(0.1 * i, 1) for i in range(11)]) for s in cfg.get("seeds", [0])]
    tasks = [(cfg, i, r, s, data_dir) for i, (r, s) in enumerate(grid)]
    jobs = jobs or cfg.get("jobs", 1)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(run_point, tasks))
    else:
        rows = [run_point(t) for t in tasks]
    return sorted(rows, key=lambda r: r["run_id"])


def correlation_report(rows, target="gap", metrics=METRICS):
    """Pearson r of each metric against ``target``, raw and after min-max rescaling."""
    if len(rows) < 3:
        raise DegenerateInputError(f"need at least 3 rows for correlations, got {len(rows)}")
    y = [r[target] for r in rows]
    out = {"n": len(rows), "target": target, "pearson": {}, "pearson_minmax": {}, "rescaled": {}, "skipped": {}}
    for m in metrics:
        x = np.array([r[m] for r in rows], dtype=np.float64)
        if not np.all(np.isfinite(x)):
            out["skipped"][m] = "non-finite values"
            continue
        try:
            scaled = minmax(x)
            out["pearson"][m] = pearson(x, y)
            out["pearson_minmax"][m] = pearson(scaled, y)
            out["rescaled"][m] = scaled.tolist()
        except DegenerateInputError as exc:
            out["skipped"][m] = str(exc)
    if not out["pearson"]:
        raise DegenerateInputError("no metric column has non-constant finite values")
    out["rescaled"][target] = list(map(float, y))
    return out


# -- rescaling demo --------------------------------------------------------------

TOY_NET = {
    "layers": [{"kind": "dense", "in": 2, "out": 2, "bias": False}, {"kind": "relu"}, {"kind": "dense", "in": 2, "out": 2, "bias": False}],
    "input_shape": [2],
    "num_classes": 2,
}

DEFAULT_DEMO = {
    "network": TOY_NET,
    "weights": [[[1, 2], [3, 4]], [[5, 6], [7, 8]]],
    "ops": [{"kind": "row_col", "layer": 0, "index": 0, "alpha": 10.0}, {"kind": "row_col", "layer": 0, "index": 1, "alpha": 0.1}],
    "probe_inputs": {"count": 100, "seed": 0},
}


def _op(d):
    if d["kind"] == "row_col":
        return rescale.RowCol(d["layer"], d["index"], d["alpha"])
    if d["kind"] == "layer_pair":
        return rescale.LayerPair(d["l1"], d["l2"], d["alpha"])
    raise ValueError(f"unknown rescale op {d['kind']!r}")


def _norms(params):
    out = []
    for l, w in enumerate(params.weights()):
        m = w.reshape(w.shape[0], -1)
        out.append({"layer": l, "frobenius_sq": float((m**2).sum()), "frobenius": float(np.sqrt((m**2).sum())), "spectral": float(np.linalg.norm(m, 2)), "matrix": m.tolist()})
    return out


def rescale_demo(cfg=None):
    """Apply rescaling ops and tabulate norms, function change and curvature metrics."""
    cfg = {**DEFAULT_DEMO, **(cfg or {})}
    net = network_from_dict(cfg["network"])
    params = nn.ParamStore.from_arrays(net, [np.asarray(w, dtype=np.float64) for w in cfg["weights"]], cfg.get("biases"))
    rng = np.random.default_rng(cfg["probe_inputs"].get("seed", 0))
    x = rng.standard_normal((cfg["probe_inputs"].get("count", 100),) + net.input_shape)
    y = np.argmax(nn.forward(net, params, x), axis=1)
    loss = cfg.get("loss", "ce")

    def metrics(p):
        h = hessian.exact_diag_oracle(net, p, x, y, loss, step=cfg.get("oracle_step", 1e-5))
        h.values = np.maximum(h.values, 0.0)
        return {
            "trace_sharpness": sharpness.trace_sharpness(h),
            "frobenius_sq_sum": sharpness.frobenius_sq_sum(p),
            "matrix_normalized": sharpness.matrix_normalized_sharpness(p, h)[0],
            "normalized": sharpness.normalized_sharpness(p, h).value,
        }

    steps = [{"op": None, "norms": _norms(params), "metrics": metrics(params), "max_output_change": 0.0}]
    current = params
    for d in cfg["ops"]:
        current = rescale.apply(current, _op(d))
        steps.append({"op": d, "norms": _norms(current), "metrics": metrics(current), "max_output_change": rescale.max_output_change(net, params, current, x)})
    return {"steps": steps}
