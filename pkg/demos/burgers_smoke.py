"""Train both kernel variants on a small Burgers problem.

Generates 306 samples (about 10 minutes on one core at the 8192-point
solver grid), trains for 100 epochs on 256 of them at s=256 and reports test
relative L2 error.  Pass ``--fast`` to solve at 1024 points instead.
"""
import sys
import time

from mcno.model import MCNOConfig, init_model
from mcno.rng import Rng
from mcno.spectral import generate_dataset
from mcno.training import TrainConfig, train

hi_res = 1024 if "--fast" in sys.argv else 8192
t0 = time.perf_counter()
data = generate_dataset("burgers", 306, hi_res=hi_res, resolutions=[256], seed=0)[256]
print(f"data: {time.perf_counter() - t0:.0f}s")
tr, te = data.split(256, 50)


def progress(row):
    if row.epoch % 20 == 0:
        print(f"  epoch {row.epoch}: train {row.train_rel_l2:.4f} test {row.test_rel_l2:.4f}")


for variant in ("interp", "global"):
    model = init_model(MCNOConfig(kernel_variant=variant), 256, Rng(0))
    rep = train(model, tr, te, TrainConfig(epochs=100), on_epoch=progress)
    print(f"{variant}: final test rel-L2 {rep.final_test:.4f}, "
          f"{rep.mean_epoch_seconds:.2f}s/epoch")
