"""Batch certification, the CSV table, and how batch averages settle down."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from probcert.driver import CertificationRequest, certify_input, report_csv, resampling_trials, run_batch
from probcert.network import load_network

data = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
model = data / "synthetic_50x20x20x5.json"
inputs = sorted(str(p) for p in (data / "inputs").glob("*.json"))

req = CertificationRequest(model=str(model), inputs=inputs, mode="adaptive")
report = run_batch(req)
print(report_csv(report))
print(json.dumps(report["summary"]["improvement_percent"]))

# same thing through the command line
subprocess.run([sys.executable, "-m", "probcert", "--model", str(model), "--inputs", str(data / "inputs"),
                "--confidences", "0.9999,0.5", "--out", "/tmp/report.json", "--csv", "/tmp/report.csv"],
               check=True)
print(Path("/tmp/report.csv").read_text())

# averages over 10 random inputs wobble more than over 50
net = load_network(model)
pool = json.loads((data / "synthetic_pool.json").read_text())
quick = CertificationRequest(model=net, confidences=(0.9999,))
vals = []
for i, item in enumerate(pool):
    row = certify_input(net, item["x0"], quick, i)
    vals.append([row["eps_worst_case"], row["eps_proven"]["0.9999"]])
trials = resampling_trials(np.array(vals), (10, 50, 100), n_trials=100)
for size, st in trials.items():
    print(size, "mean", st["mean"].round(5), "std", st["std"].round(5))
