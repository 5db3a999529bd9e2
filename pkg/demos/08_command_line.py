"""
The command-line pipeline
=========================

Each stage writes files the next stage reads. The same calls work from a
shell as ``topo-ensemble <stage> ...`` or ``python -m topo_ensemble``.
"""

import json
import tempfile
from pathlib import Path

from topo_ensemble.cli import main

work = Path(tempfile.mkdtemp())
run = lambda *args: print(" ".join(args[:1]), "->", main([*args]))

run("synth", "--task", "tser", "--n-sensors", "8", "--events", "20", "--sample-rate", "10", "--out", str(work / "data"))
run("ph", "--sensors", str(work / "data/sensors.csv"), "--out", str(work / "pd.csv"))
run("graphs", "--sensors", str(work / "data/sensors.csv"), "--diagram", str(work / "pd.csv"),
    "--family", "g01", "--out", str(work / "graphs"))
run("train", "--data", str(work / "data"), "--graphs", str(work / "graphs"), "--epochs", "10", "--lr", "1e-3",
    "--optimizer", "adam", "--conv-channels", "8,16", "--seed", "7", "--out", str(work / "run"))
run("eval", "--checkpoint", str(work / "run/model.ckpt"), "--data", str(work / "data"),
    "--out", str(work / "run/metrics.json"))
run("explain", "--checkpoint", str(work / "run/model.ckpt"), "--data", str(work / "data"),
    "--out", str(work / "run/attention"))

print((work / "pd.csv").read_text()[:120])
print(json.loads((work / "graphs/manifest.json").read_text())["graphs"][0])
print((work / "run/history.csv").read_text().splitlines()[-1])

# failures map to exit codes: 1 usage, 2 data, 3 numerical
print(main(["ph", "--sensors", str(work / "missing.csv"), "--out", str(work / "x.csv")]))
