"""Cumulative ordinal targets and class-balancing resample plans.

Shows the grade <-> 4-bit encoding in both directions, why the prefix
decode is robust to non-monotone probabilities, and how a resample plan
turns a badly imbalanced class histogram into exactly N-per-class.

Usage: python demos/02_ordinal_labels_and_resampling.py
"""
import numpy as np

from drstack import GRADE_NAMES, build_resample_plan, decode, encode

print("grade -> cumulative 4-bit target")
for grade in range(5):
    bits = encode(grade).astype(int).tolist()
    print(f"  {grade} ({GRADE_NAMES[grade]:>13s}) -> {bits}")

print("\nprobability vectors -> decoded grade (threshold 0.5)")
for probs in ([0.97, 0.91, 0.88, 0.76], [0.9, 0.8, 0.2, 0.1], [0.9, 0.3, 0.8, 0.1]):
    print(f"  {probs} -> {decode(probs)}")
print("  note: the last vector stops at bit 1 even though bit 2 is high;")
print("  the prefix rule respects the ordinal chain.")

# a typical screening-population histogram, heavily skewed toward healthy
counts = {0: 1543, 1: 314, 2: 849, 3: 164, 4: 251}
target = 700
plan = build_resample_plan(counts, per_class_target=target, seed=0)

print(f"\nresampling to {target} per class (seed 0):")
print(f"  {'grade':>5s} {'sources':>8s} {'plan':>6s}  multiplicity histogram")
for grade, n in counts.items():
    mapping = plan.mapping[grade]
    mult = np.bincount(mapping, minlength=n)
    hist = {int(k): int(v) for k, v in zip(*np.unique(mult, return_counts=True))}
    print(f"  {grade:>5d} {n:>8d} {len(mapping):>6d}  {hist}")
print(f"  total after resampling: {sum(len(m) for m in plan.mapping.values())}")
print("  majority classes are subsampled without replacement; minority")
print("  classes replicate every index floor(target/n) times plus a random")
print("  remainder, so multiplicities never differ by more than one.")
