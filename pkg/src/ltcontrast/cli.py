"""Command line front end: ``ltcontrast <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 config or usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config, parse_config
from .data import ViewPolicy, compose_batch, shot_groups
from .diagnostics import conflict_ratio_per_class, write_conflicts_csv
from .experiments import (
    GROUP_COLUMNS,
    InvalidSweep,
    compare_losses,
    experiment_dataset,
    header_line,
    read_table,
    summarize,
    sweep_alpha,
    sweep_views,
    write_table,
)
from .trainer import GROUP_NAMES, EncoderConfig, Model, train

log = logging.getLogger("ltcontrast")

CHECKPOINT_FORMAT = 1
METRIC_COLUMNS = ["epoch", "loss_total", "loss_contrastive", "loss_bs", *GROUP_COLUMNS, "mean_conflict_ratio", "spearman"]
PER_CLASS_COLUMNS = ["epoch", "class_id", "class_count", "group", "train_acc", "test_acc"]


class UsageError(Exception):
    pass


def _outdir(config, args, command):
    out = Path(args.out) if getattr(args, "out", None) else config.output_path(command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _runlog(out, message):
    with open(out / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


def _config(args):
    return load_config(args.config, args.set or ())


def _csv_list(text, cast):
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


# checkpoints

def save_checkpoint(path, model, config):
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    np.savez(
        path,
        format_version=np.array(CHECKPOINT_FORMAT),
        package_version=np.array(__version__),
        config_hash=np.array(config.hash()),
        config_text=np.array(dump_config(config)),
        hidden=np.array(model.encoder_config.hidden, dtype=np.int64),
        center_vectors=model.centers.vectors,
        center_initialized=model.centers.initialized,
        **arrays,
    )


def load_checkpoint(path):
    """Return (model, config) from a checkpoint written by ``save_checkpoint``."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {version}")
        config = parse_config(str(data["config_text"]))
        if str(data["config_hash"]) != config.hash():
            raise ValueError("checkpoint config hash does not match its embedded config")
        params = {k[6:]: data[k] for k in data.files if k.startswith("param_")}
        centers = data["center_vectors"], data["center_initialized"]
    n_classes, embed = params["head"].shape
    enc = EncoderConfig(params["W0"].shape[0], tuple(int(h) for h in config.train.hidden), embed)
    model = Model(enc, n_classes, np.random.default_rng(0), config.train.classifier_tau, config.train.center_momentum)
    model.params = {k: v.copy() for k, v in params.items()}
    model.velocity = {k: np.zeros_like(v) for k, v in params.items()}
    model.centers.vectors[:] = centers[0]
    model.centers.initialized[:] = centers[1]
    return model, config


def write_embeddings(path, model, x, y, header):
    z = model.embed(x)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"z{j}" for j in range(z.shape[1])])
        for label, row in zip(y, z):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


# commands

def cmd_train(args):
    config = _config(args)
    seed = config.train.seed if args.seed is None else args.seed
    config = config.with_train(seed=seed)
    out = _outdir(config, args, "train")
    _runlog(out, f"train start hash={config.hash()} seed={seed}")
    dataset = experiment_dataset(config)
    header = header_line(config, seed)
    policy = config.train.view_policy
    groups = shot_groups(dataset.class_counts, policy.many_min, policy.few_max)
    metrics, per_class, reports = [], [], []

    def record(rec):
        row = {"epoch": rec.epoch, "loss_total": rec.loss_total, "loss_contrastive": rec.loss_contrastive,
               "loss_bs": rec.loss_bs, **rec.groups}
        if rec.conflicts is not None:
            seen = rec.conflicts.pos_pairs > 0
            row["mean_conflict_ratio"] = float(rec.conflicts.conflict_ratio[seen].mean()) if seen.any() else None
            row["spearman"] = rec.conflicts.spearman()
            reports.append(rec.conflicts)
        metrics.append(row)
        for j in range(dataset.n_classes):
            per_class.append({"epoch": rec.epoch, "class_id": j, "class_count": int(dataset.class_counts[j]),
                              "group": GROUP_NAMES[groups[j]], "train_acc": float(rec.train_acc[j]),
                              "test_acc": float(rec.test_acc[j])})

    model, trace = train(config.train, dataset, callback=record)
    write_table(out / "metrics.csv", metrics, METRIC_COLUMNS, header)
    write_table(out / "per_class.csv", per_class, PER_CLASS_COLUMNS, header)
    write_conflicts_csv(reports, out / "conflicts.csv", header)
    save_checkpoint(out / "checkpoint.npz", model, config)
    write_embeddings(out / "embeddings.csv", model, dataset.test_x, dataset.test_y, header)
    (out / "config.ini").write_text(header + "\n" + dump_config(config))
    if len(trace):
        print("final " + " ".join(f"{g}={trace.final.groups[g]:.4f}" for g in GROUP_COLUMNS
                                  if trace.final.groups.get(g) is not None))
    _runlog(out, f"train done epochs={len(trace)}")
    print(f"wrote {out}")
    return 0


def _table_command(args, command, runner, values, key, extra_columns=()):
    config = _config(args)
    out = _outdir(config, args, command)
    _runlog(out, f"{command} start hash={config.hash()}")
    rows = runner(config, values, jobs=args.jobs)
    columns = [key, "seed", *GROUP_COLUMNS, *extra_columns]
    path = out / f"{command}.csv"
    write_table(path, rows, columns, header_line(config, config.seeds))
    _print_summary(summarize(rows, key), key)
    _runlog(out, f"{command} done rows={len(rows)}")
    print(f"wrote {path}")
    return 0


def cmd_sweep_views(args):
    views = _csv_list(args.views, int)
    runner = lambda c, v, **kw: sweep_views(c, v, loss_kind=args.loss_kind, **kw)  # noqa: E731
    return _table_command(args, "sweep-views", runner, views, "views")


def cmd_compare_losses(args):
    kinds = _csv_list(args.kinds, str)
    return _table_command(args, "compare-losses", compare_losses, [k.strip() for k in kinds], "loss_kind", ["spearman"])


def cmd_sweep_alpha(args):
    alphas = _csv_list(args.alphas, float)
    return _table_command(args, "sweep-alpha", sweep_alpha, alphas, "alpha")


def cmd_diagnose(args):
    model, config = load_checkpoint(args.checkpoint)
    if args.config:
        expected = _config(args)
        if expected.hash() != config.hash():
            raise ConfigError(f"checkpoint config hash {config.hash()} does not match {args.config} ({expected.hash()})")
    if args.batches < 1:
        raise UsageError("need at least one batch to diagnose")
    views = args.views or config.train.views
    tau = config.train.tau if args.tau is None else args.tau
    dataset = experiment_dataset(config)
    policy = ViewPolicy.uniform(views, config.train.view_policy.noise_scales,
                                many_min=config.train.view_policy.many_min,
                                few_max=config.train.view_policy.few_max)
    rng = np.random.default_rng(args.seed)
    batches = [compose_batch(dataset, config.train.batch_size, policy, seed=int(rng.integers(1 << 31)),
                             encode=model.embed) for _ in range(args.batches)]
    report = conflict_ratio_per_class(batches, tau)
    report.views = views
    out = _outdir(config, args, "diagnose")
    write_conflicts_csv([report], out / "conflicts.csv", header_line(config, args.seed))
    rho = report.spearman()
    print(f"batches={args.batches} views={views} tau={tau} spearman={rho:.4f}")
    print(f"wrote {out / 'conflicts.csv'}")
    return 0


def cmd_export_embeddings(args):
    model, config = load_checkpoint(args.checkpoint)
    dataset = experiment_dataset(config)
    x, y = (dataset.test_x, dataset.test_y) if args.split == "test" else (dataset.train_x, dataset.train_y)
    path = Path(args.out) if args.out else config.output_path("export") / f"embeddings_{args.split}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(path, model, x, y, header_line(config, config.train.seed))
    print(f"wrote {path}")
    return 0


def _print_summary(summary, key):
    print(f"{key:>16s} " + " ".join(f"{g:>7s}" for g in GROUP_COLUMNS) + "   runs")
    for k, s in summary.items():
        cells = " ".join("      -" if s[g] is None else f"{s[g]:7.4f}" for g in GROUP_COLUMNS)
        print(f"{str(k):>16s} {cells}   {s['n']}")


def cmd_report(args):
    for path in args.tables:
        header, rows = read_table(path)
        if not rows:
            raise UsageError(f"{path}: no data rows")
        key = next(iter(rows[0]))
        print(f"{path}  {' '.join(header)}")
        _print_summary(summarize(rows, key), key)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ltcontrast", description="Contrastive learning under class imbalance.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="INI experiment config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")
        sp.add_argument("--out", help="output directory (default from config or $LTCONTRAST_OUTPUT_ROOT)")
        return sp

    sp = with_config(sub.add_parser("train", help="train one model and write metrics, checkpoint and embeddings"))
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("sweep-views", help="balanced accuracy against the number of views"))
    sp.add_argument("--views", default="1,2,3,4")
    sp.add_argument("--loss-kind", default="bs_only")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep_views)

    sp = with_config(sub.add_parser("compare-losses", help="compare loss variants across seeds"))
    sp.add_argument("--kinds", default="bs_only,bs+scl_uniform,bs+acl_noweight,bs+acl")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_compare_losses)

    sp = with_config(sub.add_parser("sweep-alpha", help="group accuracies against the contrastive loss weight"))
    sp.add_argument("--alphas", default="0.2,0.5,0.8")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep_alpha)

    sp = sub.add_parser("diagnose", help="conflict ratios of a trained checkpoint on fresh batches")
    sp.add_argument("checkpoint")
    sp.add_argument("--config", help="refuse to run unless this config matches the checkpoint")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.add_argument("--batches", type=int, default=20)
    sp.add_argument("--views", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("export-embeddings", help="write embeddings of a dataset split as CSV")
    sp.add_argument("checkpoint")
    sp.add_argument("--split", choices=("test", "train"), default="test")
    sp.add_argument("--out", help="output CSV path")
    sp.set_defaults(func=cmd_export_embeddings)

    sp = sub.add_parser("report", help="summarize sweep or comparison tables")
    sp.add_argument("tables", nargs="+")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, InvalidSweep) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if getattr(exc, "filename", None) in (getattr(args, "config", None),) else 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
