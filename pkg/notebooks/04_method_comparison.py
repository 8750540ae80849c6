"""
Methods against architectures
=============================

The full grid of three optimizers and three network shapes, scored by
cross-validated mean absolute error over a few seeds.
"""

from sensorfill.evaluation import compare_methods
from sensorfill.field_data import gen_synthetic, reference_field_config, select_subsets
from sensorfill.mlp import PRESETS
from sensorfill.optimizers import TrainConfig

d = gen_synthetic(reference_field_config(noise_sd=0.1, samples=1000))
split = select_subsets(d, 14)

table = compare_methods(d, split, list(PRESETS), TrainConfig("hybrid", 200), k=5,
                        seeds=(0, 1, 2), n_jobs=4)
print(table.format())

# Best cell per architecture.
for arch in PRESETS:
    rows = [r for r in table.rows if r.architecture == arch]
    best = min(rows, key=lambda r: r.median_abs_error)
    print(f"{arch:>15}: best {best.method} ({best.median_abs_error:.4f} C)")
