"""Finite-difference gradient suites for every differentiable op and the full model."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .model import MCNOConfig, init_model, forward
from .rng import Rng


def _u(rng, shape):
    return rng.uniform(shape) * 2.0 - 1.0


def op_cases(seed: int = 0):
    """``(name, fn, params)`` triples; each ``fn`` builds a scalar from ``params``."""
    rng = Rng(seed).spawn("gradcheck-ops")
    B, G, N, C = 2, 12, 5, 3
    truth_bg = _u(rng, (B, G)) + 2.0
    x = Tensor(_u(rng, (B, G, C)), requires_grad=True)
    w = Tensor(_u(rng, (C, 4)), requires_grad=True)
    b = Tensor(_u(rng, (4,)), requires_grad=True)
    phi = Tensor(_u(rng, (N, C, C)), requires_grad=True)
    vs = Tensor(_u(rng, (B, N, C)), requires_grad=True)
    z = Tensor(_u(rng, (B, N, C)), requires_grad=True)
    m = Tensor(_u(rng, (B, C)), requires_grad=True)
    r = Tensor(_u(rng, (B, G, C)), requires_grad=True)
    q = Tensor(_u(rng, (B, G)), requires_grad=True)
    w1 = Tensor(_u(rng, (C, 1)), requires_grad=True)
    proj = _u(rng, (B, G, C))
    proj4 = _u(rng, (B, G, 4))
    projN = _u(rng, (B, N, C))
    idx = np.sort(rng.choice(G, N))
    xs = np.sort(rng.choice(64, N)) / 64.0
    xq = np.arange(G) / G

    cases = [
        ("pointwise_linear", lambda: _wsum(ad.pointwise_linear(x, w, b), proj4), [x, w, b]),
        ("sample_mix", lambda: _wsum(ad.sample_mix(phi, vs), projN), [phi, vs]),
        ("gather_points", lambda: _wsum(ad.gather_points(x, idx), projN), [x]),
        ("reduce_mean_samples", lambda: _wsum(ad.broadcast_points(ad.reduce_mean_samples(z), G), proj), [z]),
        ("broadcast_points", lambda: _wsum(ad.broadcast_points(m, G), proj), [m]),
        ("interp1d_periodic", lambda: _wsum(ad.interp1d_periodic(z, xs, xq), proj), [z]),
        ("relu", lambda: _wsum(ad.relu(r), proj), [r]),
        ("scale", lambda: _wsum(ad.scale(r, -2.5), proj), [r]),
        ("add", lambda: _wsum(ad.add(r, x), proj), [r, x]),
        ("squeeze_channel", lambda: ad.rel_l2_loss(ad.squeeze_channel(ad.pointwise_linear(x, w1)), truth_bg), [x, w1]),
        ("rel_l2_loss", lambda: ad.rel_l2_loss(q, truth_bg), [q]),
        ("linear_relu_rel_l2", lambda: ad.rel_l2_loss(
            ad.squeeze_channel(ad.relu(ad.pointwise_linear(x, w1))), truth_bg), [x, w1]),
    ]
    return cases


def _wsum(t: Tensor, c: np.ndarray) -> Tensor:
    """Scalar ``sum(t * c)`` for a constant weight array ``c``."""
    scaled = ad._emit("mul_const", [t], t.data * c, lambda g: (g * c,))
    return ad.sum_all(scaled)


def model_case(seed: int = 0, variant: str = "interp", B: int = 2, G: int = 64, d_v: int = 8,
               N: int = 8):
    rng = Rng(seed).spawn("gradcheck-model", 0 if variant == "global" else 1)
    model = init_model(MCNOConfig(d_v=d_v, n_samples=N, kernel_variant=variant),
                       G, rng)
    # larger kernels than the default init so the kernel path carries weight
    for name, p in model.params.items():
        if name.endswith("phi"):
            p.data *= d_v
        elif name.endswith("bias"):
            p.data[...] = 0.1 * (rng.uniform(p.shape) * 2 - 1)
    x = np.arange(G) / G
    data_rng = rng.spawn("data")
    a = np.sin(2 * np.pi * (x[None, :] + data_rng.uniform((B, 1)))) + 0.3 * data_rng.normal((B, G))
    u = np.cos(2 * np.pi * x)[None, :] * np.ones((B, 1)) + 0.1 * data_rng.normal((B, G))
    return model, (lambda: ad.rel_l2_loss(forward(model, a), u)), model.parameters(), rng


def run_gradcheck(scope: str = "ops", seed: int = 0, h: float = 1e-6, tol: float = 1e-4):
    """Returns ``[(name, GradCheckReport), ...]``."""
    results = []
    if scope in ("ops", "all"):
        sel = Rng(seed).spawn("gradcheck-coords")
        for name, fn, params in op_cases(seed):
            results.append((name, grad_check(fn, params, h=h, tol=tol, rng=sel)))
    if scope in ("model", "all"):
        for variant in ("interp", "global"):
            _, fn, params, rng = model_case(seed, variant)
            results.append((f"mcno[{variant}]",
                            grad_check(fn, params, h=h, tol=tol, rng=rng.spawn("coords"))))
    if not results:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    return results
