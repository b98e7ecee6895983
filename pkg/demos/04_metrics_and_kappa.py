"""The metrics suite, and why quadratic weighted kappa suits ordinal grades.

Accuracy treats every miss the same; QWK charges (i-j)^2 for predicting j
when the truth is i, so grading a proliferative eye as healthy costs 16x
more than an off-by-one. Two raters with the same accuracy can have very
different kappas.

Usage: python demos/04_metrics_and_kappa.py
"""
import numpy as np

from drstack import confusion, format_confusion, metrics_report, quadratic_weighted_kappa

rng = np.random.default_rng(0)
actual = rng.integers(0, 5, size=200)

# rater A: mostly right, misses land on an adjacent grade
near = np.clip(actual + rng.choice([-1, 0, 0, 0, 1], size=200), 0, 4)
# rater B: correct on exactly the same cases, but misses land on any
# other grade with equal probability
anywhere_else = (actual + rng.integers(1, 5, size=200)) % 5
far = np.where(near == actual, actual, anywhere_else)

for name, predicted in (("near-miss rater", near), ("far-miss rater", far)):
    report = metrics_report(actual, predicted)
    print(f"{name}: accuracy={report.accuracy:.3f} qwk={report.qwk:.3f} "
          f"precision={report.precision:.3f} recall={report.recall:.3f} f1={report.f1:.3f}")
print("same accuracy, very different kappa: distance matters.\n")

report = metrics_report(actual, near)
print("full report for the near-miss rater:")
print(report.to_text())

print("edge cases:")
print(f"  perfect diagonal:     qwk = {quadratic_weighted_kappa(np.diag([40, 10, 25, 5, 20]))}")
print(f"  total disagreement:   qwk = {quadratic_weighted_kappa(confusion([0, 4], [4, 0]))}")
cm = confusion(actual, near)
print(f"  count-scale invariance: qwk(cm) == qwk(10*cm) -> "
      f"{abs(quadratic_weighted_kappa(cm) - quadratic_weighted_kappa(cm * 10)) < 1e-12}")
print("\nconfusion grid (rows = actual):")
print(format_confusion(cm))
