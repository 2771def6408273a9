"""The command line workflow, driven from Python.

Equivalent shell session::

    export LTCONTRAST_OUTPUT_ROOT=/tmp/ltcontrast-demo
    ltcontrast train configs/acceptance.ini --set train.epochs=5
    ltcontrast diagnose <run dir>/checkpoint.npz --batches 10
    ltcontrast export-embeddings <run dir>/checkpoint.npz
    ltcontrast sweep-views configs/acceptance.ini --views 1,2 --set train.epochs=3
    ltcontrast report <sweep dir>/sweep-views.csv
"""
import os
import tempfile
from pathlib import Path

from ltcontrast.cli import main

config = str(Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini")
root = Path(tempfile.mkdtemp(prefix="ltcontrast-demo-"))
os.environ["LTCONTRAST_OUTPUT_ROOT"] = str(root)

assert main(["train", config, "--set", "train.epochs=5", "--out", str(root / "run")]) == 0
print(sorted(p.name for p in (root / "run").iterdir()))
# the default loss is ACL, which has no repulsive positives: conflict ratio 0, Spearman undefined
print((root / "run" / "metrics.csv").read_text())

main(["diagnose", str(root / "run" / "checkpoint.npz"), "--batches", "10", "--out", str(root / "diag")])
main(["export-embeddings", str(root / "run" / "checkpoint.npz"), "--out", str(root / "emb.csv")])

main(["sweep-views", config, "--views", "1,2", "--set", "train.epochs=3", "--set", "run.seeds=0",
      "--out", str(root / "views")])
main(["report", str(root / "views" / "sweep-views.csv")])

# a config error names the offending line and exits with status 2
bad = root / "bad.ini"
bad.write_text("[train]\nepochs = 2\nlearning_rate = 0.1\n")
print("exit status:", main(["train", str(bad)]))
