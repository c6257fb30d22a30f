"""
A small grid sweep
==================

Runs the filter x stride x learning-rate grid for a couple of epochs on a
small corpus and prints the summary table.
"""

# %%
import tempfile
from pathlib import Path

from scenechar.experiment import default_grid, report, sweep
from scenechar.synth import synth_generate

out = Path(tempfile.mkdtemp())
synth_generate(out / "glyphs", num_classes=5, base_per_class=6, seed=2)

grid = default_grid("B", seeds=(0,), epochs=2, k1=4, k2=8, fc_hidden=16)
reports = sweep(grid, out / "glyphs" / "manifest.jsonl", out / "runs", jobs=2)

print(report(out / "runs", "csv"))
for r in reports:
    c = r.config
    print(f"{c['filter_size']}x{c['filter_size']} s{c['stride']} lr {c['learning_rate']}: {r.status}")
