"""Train the small encoder with each loss variant and compare group accuracies.

This is a short version of the acceptance experiment (two seeds instead of
five), so the numbers are noisy. The full, pinned setting lives in
configs/acceptance.ini and runs through tests/test_acceptance.py or the CLI.
"""
from dataclasses import replace
from pathlib import Path

import numpy as np

from ltcontrast.config import load_config
from ltcontrast.experiments import compare_losses, experiment_dataset, summarize

config = load_config(Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini")
config = replace(config, seeds=(0, 1))
dataset = experiment_dataset(config)
print("class counts:", dataset.class_counts)

rows = compare_losses(config, ["bs_only", "bs+scl_uniform", "bs+acl_noweight", "bs+acl"], dataset=dataset)
print(f"\n{'loss':>16s}   Many  Medium    Few    All")
for kind, s in summarize(rows, "loss_kind").items():
    print(f"{kind:>16s} " + " ".join(f"{100 * s[g]:6.2f}" for g in ("Many", "Medium", "Few", "All")))

rho = [r["spearman"] for r in rows if r["loss_kind"] == "bs+scl_uniform"]
print("\nSCL run: Spearman(class count, final conflict ratio) per seed:", np.round(rho, 3))
