"""Multi-seed experiment runners shared by the CLI, the demos and the acceptance tests."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .data import load_dataset, sample_dataset
from .trainer import LOSS_KINDS, train

log = logging.getLogger(__name__)

GROUP_COLUMNS = ["Many", "Medium", "Few", "All"]


class InvalidSweep(ValueError):
    """Bad sweep or comparison arguments, detected before any training."""


def experiment_dataset(config):
    if config.dataset_path:
        return load_dataset(config.dataset_path)
    return sample_dataset(config.dataset)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def header_line(config, seed):
    seeds = ",".join(str(s) for s in np.atleast_1d(seed))
    return f"# config_hash={config.hash()} seed={seeds}"


def write_table(path, rows, columns, header):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_table(path):
    """Read a table written by ``write_table``; returns (header, rows as dicts of str)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return header, list(csv.DictReader(body))


def _one_run(job):
    train_config, dataset, tag = job
    _, trace = train(train_config, dataset)
    row = dict(tag)
    row["seed"] = train_config.seed
    if len(trace):
        final = trace.final
        for g in GROUP_COLUMNS:
            row[g] = final.groups.get(g)
        row["spearman"] = final.conflicts.spearman() if final.conflicts is not None else None
    return row


def run_variants(config, variants, seeds=None, jobs=1, dataset=None):
    """Train every (tag, train_config) variant for every seed; one row per run."""
    dataset = experiment_dataset(config) if dataset is None else dataset
    seeds = config.seeds if seeds is None else seeds
    work = [(replace(tc, seed=s), dataset, tag) for tag, tc in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_one_run, work))
    return [_one_run(w) for w in work]


def _dedupe(values, what):
    out = []
    for v in values:
        if v in out:
            log.warning("duplicate %s %r ignored", what, v)
        else:
            out.append(v)
    return out


def sweep_views(config, views, loss_kind="bs_only", **kw):
    views = _dedupe([int(v) for v in views], "view count")
    if not views:
        raise InvalidSweep("views list is empty")
    if min(views) < 1:
        raise InvalidSweep("view counts must be positive")
    most = max(views)
    policy = config.train.view_policy
    if most > len(policy.noise_scales):
        raise InvalidSweep(f"{most} views need {most} noise scales, policy has {len(policy.noise_scales)}")
    variants = [({"views": v}, replace(config.train, views=v, loss_kind=loss_kind)) for v in views]
    return run_variants(config, variants, **kw)


def compare_losses(config, kinds, **kw):
    kinds = _dedupe(list(kinds), "loss kind")
    if not kinds:
        raise InvalidSweep("loss kind list is empty")
    bad = [k for k in kinds if k not in LOSS_KINDS]
    if bad:
        raise InvalidSweep(f"unknown loss kind(s) {bad}; expected some of {LOSS_KINDS}")
    variants = [({"loss_kind": k}, replace(config.train, loss_kind=k)) for k in kinds]
    return run_variants(config, variants, **kw)


def sweep_alpha(config, alphas, **kw):
    alphas = sorted(_dedupe([float(a) for a in alphas], "alpha"))
    if not alphas:
        raise InvalidSweep("alpha list is empty")
    if alphas[0] < 0:
        raise InvalidSweep("alpha must be non-negative")
    variants = [({"alpha": a}, replace(config.train, alpha=a)) for a in alphas]
    return run_variants(config, variants, **kw)


def summarize(rows, key, columns=GROUP_COLUMNS):
    """Mean of each column per value of ``key``, in first-seen order."""
    out = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    summary = {}
    for k, rs in out.items():
        summary[k] = {}
        for c in columns:
            vals = [float(r[c]) for r in rs if r.get(c) not in (None, "")]
            summary[k][c] = float(np.mean(vals)) if vals else None
        summary[k]["n"] = len(rs)
    return summary
