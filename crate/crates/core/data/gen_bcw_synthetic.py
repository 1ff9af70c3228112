"""Seeded generator for bcw_synthetic.csv: 683 rows, nine integer cytology-style
features in 1..10 and a 0/1 class (0 benign, 1 malignant), about 65/35."""
import numpy as np

rng = np.random.default_rng(20201015)
n = 683
y = (rng.random(n) < 0.35).astype(int)
# A latent severity drives every feature; the classes overlap in its tails.
severity = np.where(y == 1, rng.normal(6.5, 1.8, n), rng.normal(1.8, 1.0, n))
loading = np.array([0.9, 1.0, 1.0, 0.8, 0.7, 1.1, 0.8, 0.9, 0.4])
noise = rng.normal(0.0, 1.3, (n, 9))
x = np.clip(np.rint(1.0 + severity[:, None] * loading + noise), 1, 10).astype(int)
names = ["clump", "size_uniformity", "shape_uniformity", "adhesion", "epithelial",
         "bare_nuclei", "chromatin", "nucleoli", "mitoses", "class"]
with open("bcw_synthetic.csv", "w") as f:
    f.write(",".join(names) + "\n")
    for row, label in zip(x, y):
        f.write(",".join(map(str, row)) + f",{label}\n")
