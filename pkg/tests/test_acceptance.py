"""Acceptance suite: one test per acceptance criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the summary lines are repeated
at the end of the session) or directly with ``python3 tests/test_acceptance.py``.
The training criteria share one cache of multi-seed runs of the pinned
experiment in ``configs/acceptance.ini``.
"""
import math
import sys
import time
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import naive_acl, naive_scl, random_batch, rel_err, replace_row  # noqa: E402
from ltcontrast.cli import main as cli_main  # noqa: E402
from ltcontrast.config import load_config  # noqa: E402
from ltcontrast.core import normalize  # noqa: E402
from ltcontrast.diagnostics import conflict_ratio_per_class, positive_pair_count  # noqa: E402
from ltcontrast.experiments import experiment_dataset, read_table, run_variants  # noqa: E402
from ltcontrast.gradients import (  # noqa: E402
    acl_coefficients,
    acl_negative_grad,
    acl_positive_grad,
    anchor_grad,
    finite_difference_oracle,
    nabla,
    scl_instance_grad,
    scl_pairwise_grad,
)
from ltcontrast.losses import (  # noqa: E402
    ContrastiveBatch,
    acl_anchor_losses,
    acl_loss,
    batch_negative_weights,
    scl_anchor_losses,
    scl_loss,
    scl_pairwise_loss,
)
from ltcontrast.prototypes import ClassCenters  # noqa: E402

CONFIG_PATH = Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini"
SEEDS = (0, 1, 2, 3, 4)
RESULTS = {}


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return passed


# shared multi-seed training runs

@lru_cache(maxsize=None)
def experiment():
    config = load_config(CONFIG_PATH)
    return config, experiment_dataset(config)


@lru_cache(maxsize=None)
def runs(loss_kind, views=None, alpha=None):
    """Final-epoch rows for every seed of one variant of the pinned experiment."""
    config, dataset = experiment()
    kw = {"loss_kind": loss_kind}
    if views is not None:
        kw["views"] = views
    if alpha is not None:
        kw["alpha"] = alpha
    return tuple(run_variants(config, [({}, replace(config.train, **kw))], seeds=SEEDS, dataset=dataset))


def mean_of(rows, column):
    return float(np.mean([r[column] for r in rows]))


def groups(rows):
    return {g: mean_of(rows, g) for g in ("Many", "Medium", "Few", "All")}


def pct(x):
    return f"{100 * x:.2f}"


# 1

def fd_field_error(batch, field, loss_of_batch):
    fd = np.array([
        finite_difference_oracle(lambda x, k=k: loss_of_batch(replace_row(batch, k, x)), batch.features[k])
        for k in field.indices
    ])
    return rel_err(field.vectors, fd)


def test_gradient_certification():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    for _ in range(100):
        n_classes, dim = int(rng.integers(2, 6)), int(rng.integers(2, 9))
        tau = float(rng.choice([0.05, 0.1, 0.5]))
        b = random_batch(rng, n_classes=n_classes, dim=dim, centers=True)
        w = batch_negative_weights(b)
        for i in rng.choice(b.anchors, size=2, replace=False):
            i = int(i)
            p = int(rng.choice(b.positives(i)))
            errs = [
                fd_field_error(b, scl_pairwise_grad(b, i, p, tau), lambda bb: scl_pairwise_loss(bb, i, p, tau)),
                fd_field_error(b, scl_instance_grad(b, i, tau), lambda bb: scl_loss(bb, i, tau)),
                fd_field_error(b, acl_positive_grad(b, i, w, tau), lambda bb: acl_loss(bb, i, w, tau)),
                fd_field_error(b, acl_negative_grad(b, i, w, tau), lambda bb: acl_loss(bb, i, w, tau)),
            ]
            for kind, loss in (
                ("scl_pairwise", lambda x: scl_pairwise_loss(replace_row(b, i, x), i, p, tau)),
                ("scl", lambda x: scl_loss(replace_row(b, i, x), i, tau)),
                ("acl", lambda x: acl_loss(replace_row(b, i, x), i, w, tau)),
            ):
                g = anchor_grad(kind, b, i, w, tau, p=p)
                errs.append(rel_err(g, finite_difference_oracle(loss, b.features[i])))
            worst = max(worst, max(errs))
            checked += len(errs)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 30
    record(1, "gradient certification", ok,
           f"{checked} fields, max relative error {worst:.2e} (< 1e-6), {elapsed:.1f} s (< 30 s)")
    assert ok


# 2

def test_sign_laws():
    rng = np.random.default_rng(7)
    bad_acl = bad_scl = pairs = 0
    for _ in range(10_000):
        b = random_batch(rng, n_classes=int(rng.integers(2, 5)), dim=int(rng.integers(2, 8)), centers=True,
                         min_per_class=1)
        w = batch_negative_weights(b)
        tau = float(rng.choice([0.05, 0.1, 0.5]))
        i = int(rng.choice(b.anchors))
        bad_acl += int(acl_positive_grad(b, i, w, tau).coefficients.max() > 0)
        bad_acl += int(acl_negative_grad(b, i, w, tau).coefficients.min() < 0)
        pos = b.positives(i)
        if pos.size:
            g = scl_instance_grad(b, i, tau)
            cand = g.indices
            q = dict(zip(cand.tolist(), np.exp(b.features[cand] @ b.features[i] / tau
                                               - np.log(np.sum(np.exp(b.features[cand] @ b.features[i] / tau))))))
            for k in pos:
                expected = np.sign(-nabla(pos.size, q[int(k)]))
                bad_scl += int(np.sign(g.coefficient(int(k))) != expected)
                pairs += 1
    ok = bad_acl == 0 and bad_scl == 0
    record(2, "sign laws", ok, f"10000 batches: {bad_acl} ACL sign violations, {bad_scl} SCL mismatches over {pairs} positives")
    assert ok


# 3

def test_conflict_existence():
    e = np.eye(5)
    a, p2 = e[0], normalize(e[0] + 0.5 * e[1])
    feats = [a, a, p2, e[2], e[3], normalize(a + p2), e[4]]
    b = ContrastiveBatch(np.array(feats), [0, 0, 0, 0, 1, 0, 1], [0, 1, 0, 0, 0, -1, -1], [100, 10])
    tau = 0.1
    scl_rep = int(conflict_ratio_per_class([b], tau).repulsive.sum())
    coef = acl_coefficients(b, batch_negative_weights(b), tau)
    acl_rep = int(np.sum((coef > 0) & (b.positive_mask() | b.center_mask())))
    ok = scl_rep >= 1 and acl_rep == 0
    record(3, "conflict existence", ok, f"duplicate-anchor batch: SCL repulsive positives {scl_rep} (>= 1), ACL {acl_rep} (== 0)")
    assert ok


# 4

def test_oracle_equivalence():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        b = random_batch(rng, n_classes=int(rng.integers(2, 5)), dim=int(rng.integers(2, 8)), centers=True)
        tau = float(rng.choice([0.05, 0.1, 0.5]))
        w = batch_negative_weights(b)
        scl, acl = scl_anchor_losses(b, tau), acl_anchor_losses(b, w, tau)
        for i in b.anchors:
            worst = max(worst, abs(scl[i] - naive_scl(b, i, tau)), abs(acl[i] - naive_acl(b, i, w, tau)))
    ok = worst <= 1e-12
    record(4, "oracle equivalence", ok, f"1000 batches, max |vectorized - naive| {worst:.1e} (<= 1e-12)")
    assert ok


# 5

def test_pair_count_law():
    bad = [(m, n) for m in range(1, 7) for n in range(21) if positive_pair_count(m, n) != (m * n) ** 2 - m * n]
    ok = not bad and positive_pair_count(2, 3) == 30
    record(5, "pair-count law", ok, f"m 1..6 x n 0..20, {len(bad)} mismatches; (2, 3) -> {positive_pair_count(2, 3)}")
    assert ok


# 6

@pytest.mark.slow
def test_conflict_frequency_correlation():
    start = time.perf_counter()
    rows = runs("bs+scl_uniform", views=4)
    rho = [r["spearman"] for r in rows]
    elapsed = time.perf_counter() - start
    ok = np.mean(rho) >= 0.5 and elapsed < 600
    record(6, "conflict-frequency correlation", ok,
           f"mean Spearman {np.mean(rho):.3f} (>= 0.5) over seeds {[round(x, 3) for x in rho]}, {elapsed:.0f} s")
    assert ok


# 7

@pytest.mark.slow
def test_multi_view_trend():
    acc = [mean_of(runs("bs_only", views=v), "All") for v in (1, 2, 3, 4)]
    gain = acc[3] - acc[0]
    monotone = all(b >= a - 0.005 for a, b in zip(acc, acc[1:]))
    ok = gain >= 0.02 and monotone
    record(7, "multi-view trend", ok,
           f"bs_only All by views 1..4 = {[pct(a) for a in acc]}; 4 vs 1 +{100 * gain:.2f} pts (>= 2), "
           f"non-decreasing within 0.5 pts: {monotone}")
    assert ok


# 8

@pytest.mark.slow
def test_acl_beats_scl():
    acl, scl, bs = groups(runs("bs+acl")), groups(runs("bs+scl_uniform")), groups(runs("bs_only"))
    gains = {g: acl[g] - scl[g] for g in ("Many", "Medium", "Few")}
    best = max(gains, key=gains.get)
    ok = acl["All"] - scl["All"] >= 0.01 and acl["All"] >= bs["All"] and best == "Many"
    record(8, "ACL beats SCL", ok,
           f"All acl {pct(acl['All'])} vs scl {pct(scl['All'])} (+1 pt needed) vs bs_only {pct(bs['All'])}; "
           f"gains Many/Medium/Few {', '.join(f'{100 * v:+.2f}' for v in gains.values())} (largest: {best})")
    assert ok


# 9

@pytest.mark.slow
def test_strategy_ordering():
    acc = {k: mean_of(runs(k), "All") for k in ("bs+scl_uniform", "bs+acl_noweight", "bs+acl")}
    a, b, c = acc.values()
    ok = a <= b + 0.003 and b <= c + 0.003
    record(9, "strategy ordering", ok,
           "All " + ", ".join(f"{k} {pct(v)}" for k, v in acc.items()) + " (non-decreasing, 0.3 pt ties)")
    assert ok


# 10

@pytest.mark.slow
def test_alpha_tradeoff():
    low, high = mean_of(runs("bs+acl", alpha=0.2), "Few"), mean_of(runs("bs+acl", alpha=0.8), "Few")
    ok = high >= low
    record(10, "alpha trade-off", ok, f"Few at alpha 0.8 {pct(high)} vs 0.2 {pct(low)}")
    assert ok


# 11

def test_determinism(tmp_path):
    out = []
    for name in ("first", "second"):
        code = cli_main(["train", str(CONFIG_PATH), "--set", "train.epochs=3", "--out", str(tmp_path / name)])
        assert code == 0
        out.append(read_table(tmp_path / name / "metrics.csv"))
    same = out[0] == out[1]
    raw = [(tmp_path / n / "metrics.csv").read_bytes() for n in ("first", "second")]
    ok = same and raw[0] == raw[1] and len(out[0][1]) == 3
    record(11, "determinism", ok, f"two train runs, metrics.csv identical bytes: {raw[0] == raw[1]}")
    assert ok


# 12

def test_ema_convergence():
    rng = np.random.default_rng(5)
    report = []
    ok = True
    for mu in (0.5, 0.9, 0.99):
        budget = math.ceil(math.log(1e-6) / math.log(mu)) + 1
        worst = 0
        for _ in range(20):
            target = normalize(rng.normal(size=8))
            # acute start, up to 45 degrees from the fixed point
            perp = rng.normal(size=8)
            perp = normalize(perp - (perp @ target) * target)
            angle = rng.uniform(0.0, np.pi / 4)
            centers = ClassCenters(1, 8, momentum=mu)
            centers.init_center(0, np.cos(angle) * target + np.sin(angle) * perp)
            steps = 0
            while np.linalg.norm(centers.vectors[0] - target) >= 1e-6 and steps <= budget:
                centers.ema_update(0, 3.0 * target)
                steps += 1
            worst = max(worst, steps)
        ok &= worst <= budget
        report.append(f"mu {mu}: {worst} <= {budget}")
    record(12, "EMA convergence", ok, "updates to 1e-6, worst of 20 starts: " + "; ".join(report))
    assert ok


if __name__ == "__main__":
    import tempfile

    checks = [test_gradient_certification, test_sign_laws, test_conflict_existence, test_oracle_equivalence,
              test_pair_count_law, test_conflict_frequency_correlation, test_multi_view_trend, test_acl_beats_scl,
              test_strategy_ordering, test_alpha_tradeoff, test_determinism, test_ema_convergence]
    failed = 0
    for check in checks:
        try:
            if check is test_determinism:
                with tempfile.TemporaryDirectory() as tmp:
                    check(Path(tmp))
            else:
                check()
        except AssertionError:
            failed += 1
    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(1 if failed else 0)
