"""Evaluate one trained model on finer grids.

Sample locations are stored as fractions of the domain, so a model trained at
s=256 can be queried at 512 or 1024 points: the latent field is interpolated
at the stored coordinates and every other map is pointwise.  The training run
is deliberately short; what matters is that the error stays flat across grids.
"""
from mcno.model import MCNOConfig, init_model
from mcno.rng import Rng
from mcno.spectral import generate_dataset
from mcno.training import TrainConfig, evaluate, train

data = generate_dataset("burgers", 140, hi_res=1024, resolutions=[256, 512, 1024], seed=1)
tr, te = data[256].split(120, 20)
model = init_model(MCNOConfig(kernel_variant="global", d_v=32), 256, Rng(0))
train(model, tr, te, TrainConfig(epochs=40))

for s in (256, 512, 1024):
    print(f"s={s:5d}: test rel-L2 {evaluate(model, data[s].split(120, 20)[1]):.4f}")
