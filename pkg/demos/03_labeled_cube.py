"""
From a labeled image to patches and a reference signature
=========================================================

Real scenes come as an image with a background label per pixel. Windows that
straddle exactly two labels become patches, and the labeled foreground pixels
give an oracle reference to score against.
"""

import numpy as np

from fgextract import LabeledCube, oracle_reference, sample_patches

rng = np.random.default_rng(0)
W, H, M = 40, 16, 8
f = rng.uniform(0.5, 1.5, M)
v = rng.uniform(0.5, 1.5, (2, M))

# %%
# Left half is one background, right half another. Foreground sits well away
# from the boundary, so every foreground/background pair shares a label.
labels = (np.arange(W)[:, None] >= W // 2).astype(np.uint16).repeat(H, axis=1)
far = np.abs(np.arange(W) - W // 2 + 0.5)[:, None].repeat(H, axis=1) > 10
fg = far & (rng.random((W, H)) < 0.3)
scale = rng.uniform(0.5, 2.0, (W, H, 1))
image = scale * v[labels] * np.where(fg[..., None], f, 1.0)
cube = LabeledCube(image, labels, fg, ("left", "right"))

# %%
patches = sample_patches(cube, window=4, stride=2)
print(f"{len(patches)} straddling windows, pixels per patch: {sorted(set(patches.sizes))}")

# %%
ref = oracle_reference(cube, max_dist=10, top_k=10, detailed=True)
cos = ref.f_ref @ f / np.linalg.norm(ref.f_ref) / np.linalg.norm(f)
print(f"{ref.n_candidates} candidate ratios, cosine to planted signature {cos:.12f}")
