"""
Five-fold cross-validation
==========================

Estimates reconstruction error of the moved sensors on held-out samples,
once on a noiseless field and once with 0.1 C sensor noise.
"""

from sensorfill.evaluation import cross_validate
from sensorfill.field_data import gen_synthetic, reference_field_config, select_subsets
from sensorfill.mlp import NetworkSpec
from sensorfill.optimizers import TrainConfig

spec = NetworkSpec("14:11:9")
cfg = TrainConfig("hybrid", 300)

for noise in (0.0, 0.1):
    d = gen_synthetic(reference_field_config(noise_sd=noise))
    split = select_subsets(d, 14)
    report = cross_validate(d, split, spec, cfg, k=5, seed=0, n_jobs=5)
    print(f"noise sd {noise}:")
    for f in report.folds:
        print(f"  fold {f.fold}: {f.n_train} train / {f.n_test} test, "
              f"test SSE {f.test_sse:8.3f}, abs error {f.test_abs_error:.4f} C")
    print(f"  mean {report.mean_abs_error:.4f} C, sd {report.std_abs_error:.4f} C")

# With noise, the error floor is roughly the mean absolute noise itself:
# E|N(0, 0.1^2)| = 0.1 * sqrt(2 / pi).
print("noise floor: %.4f C" % (0.1 * (2 / 3.141592653589793) ** 0.5))
