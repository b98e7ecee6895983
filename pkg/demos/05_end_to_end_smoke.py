"""The whole flow on synthetic data: split, resample, preprocess, train two
branches, stack their predictions, train the meta-model, evaluate.

Uses the calibrated desk-scale configuration (64px synthetic images,
tiny-cnn branches, scaled learning rate). Takes a minute or two on a CPU
and is fully reproducible for the seed.

Usage: python demos/05_end_to_end_smoke.py
"""
from pathlib import Path

from drstack import run_pipeline
from drstack.config import smoke_config

out_dir = Path("demo_output/smoke_run")
cfg = smoke_config(out_dir, seed=0)
print(f"training config: {cfg.train_base.epochs} branch epochs, "
      f"{cfg.train_meta.epochs} meta epochs, lr {cfg.train_base.learning_rate}, "
      f"{cfg.synth_per_class} images/grade at {cfg.synth_size}px")
print("running (about a minute on a laptop CPU)...\n")

report = run_pipeline(cfg)

for line in report.summary_lines():
    print(line)

print("\nper-epoch curves (meta-model, last 5 epochs):")
history = report.histories["meta"]
for i in range(max(0, len(history) - 5), len(history)):
    print(f"  epoch {history.epoch[i]:>3d}: train_loss={history.train_loss[i]:.4f} "
          f"val_acc={history.val_acc[i]:.3f} val_qwk={history.val_qwk[i]:.3f}")

print(f"\ncomparison table ({report.artifacts['comparison']}):")
print(report.artifacts["comparison"].read_text())
print(f"all artifacts under {out_dir}/")
