"""Monte Carlo-type neural operator.

Lift ``P`` -> ``n_layers`` kernel layers -> two-stage projection ``Q``.  Each
kernel layer evaluates the latent field at a fixed set of sampled grid points,
mixes channels there with one learnable matrix per sample, and brings the
result back to the full grid, either as a single Monte Carlo average
(``global``) or by periodic linear interpolation of the per-sample values
(``interp``).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng

VARIANTS = ("global", "interp")


@dataclass(frozen=True)
class MCNOConfig:
    d_v: int = 64
    n_layers: int = 4
    n_samples: int = 100
    kernel_variant: str = "interp"
    include_coordinate: bool = True
    d_proj: int = 128
    linear_bias: bool = True

    def __post_init__(self):
        if self.d_v < 1:
            raise ValueError("d_v must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.d_proj < 1:
            raise ValueError("d_proj must be >= 1")
        if self.kernel_variant not in VARIANTS:
            raise ValueError(f"kernel_variant must be one of {VARIANTS}")

    @property
    def d_in(self) -> int:
        return 2 if self.include_coordinate else 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    grid_size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError("sample indices must be a non-empty list")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.grid_size:
            raise ValueError("sample indices must be strictly increasing and inside the grid")
        object.__setattr__(self, "indices", idx)

    @property
    def coords(self) -> np.ndarray:
        return self.indices / self.grid_size

    def __len__(self):
        return self.indices.size


def draw_samples(grid_size: int, n: int, rng: Rng) -> SampleSet:
    """``n`` distinct grid indices, uniform without replacement, sorted."""
    if n > grid_size:
        raise ValueError(f"cannot draw {n} distinct samples from a grid of {grid_size}")
    if n < 2:
        raise ValueError("need at least two samples")
    return SampleSet(rng.choice(grid_size, n), grid_size)


class MCNOModel:
    """Parameters plus the fixed sample set.  ``scales = (input, output)`` are
    non-learnable constants: inputs are divided by the first before lifting and
    outputs multiplied by the second, so the network itself works in O(1) units."""

    def __init__(self, config: MCNOConfig, grid_size: int, samples: SampleSet, params,
                 scales=(1.0, 1.0)):
        self.config = config
        self.scales = check_scales(scales)
        self.grid_size = int(grid_size)
        self.samples = samples
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(params)
        self._plans = {}
        if len(samples) != config.n_samples or samples.grid_size != self.grid_size:
            raise ValueError("sample set does not match config / grid size")
        for t in range(config.n_layers):
            if self.params[f"layer{t}.phi"].shape[0] != config.n_samples:
                raise ValueError(f"layer {t} kernel does not match the sample count")

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def plan(self, kind: str, G: int) -> ad.InterpPlan:
        """Cached interpolation plans between the sample coordinates and a ``G`` grid."""
        key = (kind, G)
        if key not in self._plans:
            grid = np.arange(G) / G
            xs = self.samples.coords
            if kind == "to_grid":
                self._plans[key] = ad.interp_plan(xs, grid)
            else:
                self._plans[key] = ad.interp_plan(grid, xs)
        return self._plans[key]


def check_scales(scales):
    sc = tuple(float(v) for v in scales)
    if len(sc) != 2 or not all(np.isfinite(v) and v > 0 for v in sc):
        raise ValueError(f"scales must be two positive finite numbers, got {scales!r}")
    return sc


def data_scales(a, u):
    """Root-mean-square of inputs and targets (1 where a field is identically zero)."""
    out = []
    for f in (a, u):
        r = float(np.sqrt(np.mean(np.square(f))))
        out.append(r if r > 0 and np.isfinite(r) else 1.0)
    return tuple(out)


def param_shapes(config: MCNOConfig):
    c = config
    shapes = [("lift.weight", (c.d_in, c.d_v)), ("lift.bias", (c.d_v,))]
    for t in range(c.n_layers):
        shapes.append((f"layer{t}.weight", (c.d_v, c.d_v)))
        if c.linear_bias:
            shapes.append((f"layer{t}.bias", (c.d_v,)))
        shapes.append((f"layer{t}.phi", (c.n_samples, c.d_v, c.d_v)))
    shapes += [("proj1.weight", (c.d_v, c.d_proj)), ("proj1.bias", (c.d_proj,)),
               ("proj2.weight", (c.d_proj, 1)), ("proj2.bias", (1,))]
    return shapes


def init_model(config: MCNOConfig, grid_size: int, rng: Rng) -> MCNOModel:
    """Gaussian weights with std ``1/sqrt(fan_in)``, kernels with std ``1/(d_v sqrt N)``, zero biases."""
    wrng = rng.spawn("weights")
    samples = draw_samples(grid_size, config.n_samples, rng.spawn("samples"))
    params = OrderedDict()
    phi_std = 1.0 / (config.d_v * np.sqrt(config.n_samples))
    for name, shape in param_shapes(config):
        if name.endswith("bias"):
            data = np.zeros(shape)
        elif name.endswith("phi"):
            data = wrng.normal(shape, std=phi_std)
        else:
            data = wrng.normal(shape, std=1.0 / np.sqrt(shape[0]))
        params[name] = Tensor(data, requires_grad=True)
    return MCNOModel(config, grid_size, samples, params)


def _sampled_latent(model: MCNOModel, v: Tensor) -> Tensor:
    G = v.shape[1]
    if G == model.grid_size:
        return ad.gather_points(v, model.samples.indices)
    return ad.interp1d_periodic(v, plan=model.plan("from_grid", G))


def kernel_term(model: MCNOModel, t: int, v: Tensor) -> Tensor:
    """Monte Carlo kernel estimate of layer ``t`` on the grid of ``v``."""
    G = v.shape[1]
    vs = _sampled_latent(model, v)
    z = ad.sample_mix(model.params[f"layer{t}.phi"], vs)
    if model.config.kernel_variant == "global":
        return ad.broadcast_points(ad.reduce_mean_samples(z), G)
    return ad.interp1d_periodic(z, plan=model.plan("to_grid", G))


def kernel_layer(model: MCNOModel, t: int, v: Tensor, activate: bool = True,
                 allow_transfer: bool = False) -> Tensor:
    if not allow_transfer and v.shape[1] != model.grid_size:
        raise ValueError(f"grid of {v.shape[1]} points does not match model grid {model.grid_size}")
    p = model.params
    local = ad.pointwise_linear(v, p[f"layer{t}.weight"], p.get(f"layer{t}.bias"))
    out = ad.add(local, kernel_term(model, t, v))
    return ad.relu(out) if activate else out


def lift_input(model: MCNOModel, a) -> Tensor:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"input must be [B, G], got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("input contains non-finite values")
    a = a / model.scales[0]
    if model.config.include_coordinate:
        x = np.broadcast_to(np.arange(a.shape[1]) / a.shape[1], a.shape)
        return Tensor(np.stack([a, x], axis=-1))
    return Tensor(a[:, :, None])


def _forward(model: MCNOModel, a, allow_transfer: bool) -> Tensor:
    p = model.params
    v = ad.pointwise_linear(lift_input(model, a), p["lift.weight"], p["lift.bias"])
    L = model.config.n_layers
    for t in range(L):
        v = kernel_layer(model, t, v, activate=t < L - 1, allow_transfer=allow_transfer)
    h = ad.relu(ad.pointwise_linear(v, p["proj1.weight"], p["proj1.bias"]))
    out = ad.squeeze_channel(ad.pointwise_linear(h, p["proj2.weight"], p["proj2.bias"]))
    return out if model.scales[1] == 1.0 else ad.scale(out, model.scales[1])


def forward(model: MCNOModel, a) -> Tensor:
    """``a[B, G] -> u[B, G]`` on the training grid."""
    return _forward(model, a, allow_transfer=False)


def forward_at_resolution(model: MCNOModel, a) -> Tensor:
    """Evaluate on any power-of-two grid; latent values at the stored sample
    coordinates are interpolated from that grid."""
    G = np.shape(a.data if isinstance(a, Tensor) else a)[-1]
    if G < 2 or G & (G - 1):
        raise ValueError(f"grid size must be a power of two, got {G}")
    return _forward(model, a, allow_transfer=True)
