"""``sharpnorm`` command-line entry point."""

import argparse
import json
import logging
import sys

from . import data, experiment, hessian, persist, sharpness, trainer
from .persist import network_from_dict

log = logging.getLogger("sharpnorm")

# exit code and category for each failure family
ERRORS = [
    (persist.CheckpointVersionError, 4, "version"),
    (persist.CheckpointFormatError, 3, "format"),
    (data.IdxFormatError, 3, "format"),
    (json.JSONDecodeError, 3, "format"),
    (FileNotFoundError, 2, "io"),
    (OSError, 2, "io"),
    (experiment.DegenerateInputError, 5, "degenerate"),
    (hessian.NumericError, 6, "numeric"),
    (KeyError, 7, "config"),
    (ValueError, 7, "argument"),
]


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def cmd_train(args):
    cfg = _load_json(args.config)
    train_ds, test_ds = experiment.load_splits(cfg["data"], args.data)
    corruption = cfg.get("corruption")
    if corruption:
        train_ds = data.corrupt_labels(train_ds, corruption["ratio"], corruption["seed"])
    net = network_from_dict(cfg["network"])
    tcfg = trainer.TrainConfig.from_dict(cfg.get("train", {}))
    rec = trainer.run(net, train_ds, test_ds, tcfg)
    manifest = {
        "data": cfg["data"],
        "corruption": corruption,
        "train": tcfg.to_dict(),
        "seeds": {"train": tcfg.seed, "corruption": corruption["seed"] if corruption else None},
        "train_accuracy": rec.train_accuracy,
        "test_accuracy": rec.test_accuracy,
        "gap": rec.gap,
        "loss_curve": rec.loss_curve,
    }
    persist.save_checkpoint(args.out, rec.params, manifest)
    log.info("train acc %.4f test acc %.4f gap %.4f", rec.train_accuracy, rec.test_accuracy, rec.gap)


def cmd_measure(args):
    params, manifest = persist.load_checkpoint(args.ckpt)
    train_ds, _ = experiment.load_splits(manifest["data"], args.data)
    corruption = manifest.get("corruption")
    if corruption:
        train_ds = data.corrupt_labels(train_ds, corruption["ratio"], corruption["seed"])
    probes = hessian.ProbeConfig(num_probes=args.probes, seed=args.seed)
    report = sharpness.measure(params.net, params, train_ds.features, train_ds.labels, args.loss, args.lam, probes)
    out = report.to_dict()
    out["checkpoint"] = {k: manifest.get(k) for k in ("train_accuracy", "test_accuracy", "gap", "corruption")}
    persist.dump_json(out, args.out)


def cmd_rescale_demo(args):
    cfg = _load_json(args.config) if args.config else None
    text = persist.dump_json(experiment.rescale_demo(cfg), args.out)
    if args.out is None:
        print(text)


def cmd_sweep(args):
    cfg = _load_json(args.config)
    rows = experiment.sweep(cfg, args.data, args.jobs)
    persist.write_table(args.out, experiment.SWEEP_COLUMNS, rows)


def cmd_report(args):
    rows = persist.read_table(args.inp)
    persist.dump_json(experiment.correlation_report(rows), args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="sharpnorm", description="Normalized sharpness toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network and write a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="data directory (default: $SHARPNORM_DATA)")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("measure", help="compute sharpness metrics for a checkpoint")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--data")
    m.add_argument("--loss", choices=["nsce", "ce"], default="nsce")
    m.add_argument("--lambda", dest="lam", type=float, default=0.5)
    m.add_argument("--probes", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_measure)

    r = sub.add_parser("rescale-demo", help="apply function-preserving rescalings and re-measure")
    r.add_argument("--config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rescale_demo)

    s = sub.add_parser("sweep", help="random-label sweep over corruption ratios and seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--data")
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("report", help="correlations of sweep metrics with the accuracy gap")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        for kind, code, category in ERRORS:
            if isinstance(exc, kind):
                msg = str(exc).replace("\n", " ")
                print(f"error:{category}: {msg}", file=sys.stderr)
                return code
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
