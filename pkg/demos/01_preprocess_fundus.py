"""Walk the fundus normalization pipeline stage by stage.

Generates one synthetic fundus-like image, applies each preprocessing step
separately, saves every intermediate as a PNG next to this script's output
directory, and demonstrates that augmentation is reproducible for a seed.

Usage: python demos/01_preprocess_fundus.py
"""
import tempfile
from pathlib import Path

import numpy as np

from drstack import (
    AugmentConfig,
    GaussianKernelSpec,
    PreprocessConfig,
    apply_circle_mask,
    augment,
    crop_dark_border,
    gaussian_blur,
    generate_synthetic,
    load_image,
    preprocess_image,
    resize,
    save_image,
)

out_dir = Path("demo_output/preprocess")
out_dir.mkdir(parents=True, exist_ok=True)

# one severe-grade synthetic image, padded with a dark border like a raw
# sensor frame
with tempfile.TemporaryDirectory() as td:
    manifest = generate_synthetic(1, 96, seed=3, out_dir=td)
    raw_small = load_image(manifest.records[-1].image_path)  # grade 4, many lesions
framed = np.zeros((140, 160, 3))
framed[22:118, 32:128] = raw_small
save_image(out_dir / "0_raw.png", framed)
print(f"raw frame: {framed.shape}, mean intensity {framed.mean():.3f}")

cropped = crop_dark_border(framed, dark_threshold=0.03)
save_image(out_dir / "1_cropped.png", cropped)
print(f"after dark-border crop: {cropped.shape} (border rows/cols removed)")

resized = resize(cropped, 96)
save_image(out_dir / "2_resized.png", resized)
print(f"after bilinear resize:  {resized.shape}")

masked = apply_circle_mask(resized, circle_margin=0.0)
save_image(out_dir / "3_masked.png", masked)
corners_dark = masked[0, 0].max() == 0 and masked[-1, -1].max() == 0
print(f"after circle mask:      corners zeroed: {corners_dark}")

kernel = GaussianKernelSpec.from_sigma(1.5)
blurred = gaussian_blur(masked, kernel)
save_image(out_dir / "4_blurred.png", blurred)
print(f"after gaussian blur:    window {kernel.window}x{kernel.window}, "
      f"sigma {kernel.sigma_x}")

cfg = PreprocessConfig(dark_threshold=0.03, target_size=96, circle_margin=0.0, kernel=kernel)
composed = preprocess_image(framed, cfg)
print(f"single-call pipeline equals the manual chain: "
      f"{np.array_equal(composed, blurred)}")

aug_cfg = AugmentConfig(zoom_range=0.15, horizontal_flip=True, vertical_flip=True, seed=0)
a = augment(composed, aug_cfg, rng_state=42)
b = augment(composed, aug_cfg, rng_state=42)
c = augment(composed, aug_cfg, rng_state=43)
save_image(out_dir / "5_augmented.png", a)
print(f"augmentation reproducible for one seed: {np.array_equal(a, b)}; "
      f"different seed differs: {not np.array_equal(a, c)}")
print(f"stage images written to {out_dir}/")
