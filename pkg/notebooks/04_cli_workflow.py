# %% [markdown]
# # The command-line workflow
#
# Train a GAP run and two single baselines, score them with GAM-II, measure
# coverage and produce reports.  Every step goes through ``gapforge.cli.main``
# exactly as the shell command would.

# %%
import json
import tempfile
from pathlib import Path

from gapforge import cli

root = Path(tempfile.mkdtemp())
cfg = root / "base.ini"
cfg.write_text("""
[data]
n = 1000
component_std = 0.2
[gap]
total_updates = 200
[gan]
g_hidden = 32,32,32
d_hidden = 32,32,32
[eval]
n_samples = 500
""")
runs = root / "runs"
cli.main(["train", "--config", str(cfg), "--out", str(runs), "--set", "run.name=gap4"])
for seed in (1, 2):
    cli.main(["train", "--config", str(cfg), "--out", str(runs), "--workers", "1", "--swap-every", "none",
              "--seed", str(seed), "--set", f"run.name=single{seed}"])

# %%
cli.main(["eval", str(runs / "gap4"), str(runs / "single1"), str(runs / "single2"), "--out", str(root / "eval")])
summary = json.loads((root / "eval" / "gam2_summary.json").read_text())
print(summary["verdict"], summary["best"])

# %%
cli.main(["coverage", str(runs / "gap4"), "--out", str(root / "cov")])
print(json.loads((root / "cov" / "coverage.json").read_text()))
cli.main(["report", str(runs / "gap4")])
print((runs / "gap4" / "reports" / "summary.json").read_text())
