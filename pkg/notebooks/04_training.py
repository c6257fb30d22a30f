"""
Training one configuration
==========================

A reduced run on a small corpus so it finishes in well under a minute.
The full-size grid is what ``scenechar sweep`` runs.
"""

# %%
import tempfile
from pathlib import Path

from scenechar.experiment import ExperimentConfig, evaluate, train
from scenechar.network import Network
from scenechar.synth import synth_generate

out = Path(tempfile.mkdtemp())
manifest, _ = synth_generate(out / "glyphs", num_classes=6, base_per_class=10, seed=1)

config = ExperimentConfig(filter_size=3, stride=2, learning_rate=0.05, epochs=15, k1=8, k2=8, fc_hidden=32)
net, report = train(config, manifest)

for epoch, (loss, err) in enumerate(zip(report.epoch_loss, report.epoch_test_error[1:]), 1):
    print(f"epoch {epoch:2d}  loss {loss:.3f}  test error {err:5.1f}%")
print("kept epoch", report.best_epoch, "with", report.error_rate, "% test error")

# %%
# The checkpoint carries the architecture and the input mean, so it evaluates on its own.
net.save(out / "run.ckpt")
again = evaluate(Network.load(out / "run.ckpt"), manifest, "test")
print(again.error_rate == report.error_rate)
for row in again.confusion:
    print(" ".join(f"{v:2d}" for v in row))
