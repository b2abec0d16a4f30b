"""Empirical check of the fixed-grid Monte Carlo estimation-error bound.

For an analytic integrand ``f(x, y) = kappa(x, y) v(y)`` on ``D = [0, 1]`` the
estimator averages ``f(x, y_s)`` over ``N`` points drawn from a cell-centred
grid of ``N_grid`` points.  Its error splits into the grid bias (Riemann sum
vs. integral) and the sampling deviation (estimate vs. Riemann sum); both are
measured over many independent draws and compared with the closed-form bound

    bias      C * sqrt(d)/2 * Vol(D) * L * N_grid^(-1/d)
    deviation 3/2 * C * sqrt(2 (d log N_grid + log(2/delta)) / N)

alongside the variant whose bias term lacks the factor ``C`` and whose
deviation prefactor is ``3 C``.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .rng import Rng, derive

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AnalyticKernel:
    """Integrand ``kappa(x, y) v(y)`` with declared Assumption-style constants.

    ``C`` bounds ``|f|``, ``L`` is a Lipschitz constant in ``y`` and ``L_x`` in
    ``x``.  The constants are checked on a fine grid at construction.
    """

    name: str
    f: Callable = field(repr=False, compare=False)
    C: float
    L: float
    L_x: float
    d: int = 1
    vol: float = 1.0
    validate: bool = True

    def __post_init__(self):
        if self.C <= 0 or self.L < 0 or self.L_x < 0:
            raise ValueError(f"invalid constants for kernel {self.name}")
        if self.d != 1:
            raise ValueError("analytic trial kernels are one-dimensional")
        if self.validate:
            check_constants(self)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.f(x[:, None], y[None, :])


def check_constants(kernel: AnalyticKernel, n_fine: int = 2**14, n_coarse: int = 65):
    """Sampled sup and difference quotients must not exceed the declared constants."""
    fine = np.linspace(0.0, 1.0, n_fine + 1)
    coarse = np.linspace(0.0, 1.0, n_coarse)
    slack = 1.0 + 1e-9
    F = kernel(coarse, fine)  # x coarse, y fine
    sup = np.max(np.abs(F))
    qy = np.max(np.abs(np.diff(F, axis=1))) / (fine[1] - fine[0])
    Fx = kernel(fine, coarse)  # x fine, y coarse
    sup = max(sup, np.max(np.abs(Fx)))
    qx = np.max(np.abs(np.diff(Fx, axis=0))) / (fine[1] - fine[0])
    for label, measured, declared in (("C", sup, kernel.C), ("L", qy, kernel.L),
                                      ("L_x", qx, kernel.L_x)):
        if measured > declared * slack + 1e-12:
            raise ValueError(f"kernel {kernel.name}: declared {label}={declared} is below the "
                             f"sampled value {measured:.6g}")
    return {"C": sup, "L": qy, "L_x": qx}


def _gauss(x, y):
    return np.exp(-(x - y) ** 2) * np.sin(TWO_PI * y)


def _absdiff(x, y):
    return np.abs(x - y - 0.25) * np.sin(TWO_PI * y)


KERNELS = {
    # |d/dy| <= 2|x-y| + 2 pi,  |d/dx| <= max 2|t| exp(-t^2) = sqrt(2/e)
    "gauss": lambda: AnalyticKernel("gauss", _gauss, C=1.0, L=2.0 + TWO_PI, L_x=0.86),
    "absdiff": lambda: AnalyticKernel("absdiff", _absdiff, C=1.25, L=1.0 + 1.25 * TWO_PI,
                                      L_x=1.0),
    "constant": lambda: AnalyticKernel("constant", lambda x, y: np.ones(np.broadcast(x, y).shape),
                                       C=1.0, L=0.0, L_x=0.0),
    "linear": lambda: AnalyticKernel("linear", lambda x, y: np.broadcast_to(y, np.broadcast(x, y).shape) * 1.0,
                                     C=1.0, L=1.0, L_x=0.0),
    "quadratic": lambda: AnalyticKernel("quadratic", lambda x, y: np.broadcast_to(y**2, np.broadcast(x, y).shape) * 1.0,
                                        C=1.0, L=2.0, L_x=0.0),
}


def get_kernel(name: str) -> AnalyticKernel:
    try:
        return KERNELS[name]()
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def cell_centres(n_grid: int) -> np.ndarray:
    return (np.arange(n_grid) + 0.5) / n_grid


def _midpoint(kernel, xs, n, chunk=16):
    y = cell_centres(n)
    return np.concatenate([kernel(xs[i:i + chunk], y).mean(axis=1)
                           for i in range(0, xs.size, chunk)])


def reference_integral(kernel: AnalyticKernel, probe_xs, n0: int = 2**16, tol: float = 1e-8,
                       max_doublings: int = 4) -> np.ndarray:
    """Midpoint quadrature, doubled until successive values agree to ``tol``."""
    xs = np.atleast_1d(np.asarray(probe_xs, dtype=np.float64))
    prev = _midpoint(kernel, xs, n0)
    n = n0
    for _ in range(max_doublings):
        n *= 2
        cur = _midpoint(kernel, xs, n)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise ArithmeticError(f"midpoint quadrature for {kernel.name} did not settle to {tol:g} "
                          f"at {n} points")


def _column_mean(F, idx) -> np.ndarray:
    # one code path for grid sums and estimates, so exhaustive draws agree bitwise
    return np.ascontiguousarray(F[:, idx]).sum(axis=1) / len(idx)


def riemann_grid_sum(kernel: AnalyticKernel, probe_xs, n_grid: int) -> np.ndarray:
    """Expected value of the estimator: the mean of ``f`` over the whole grid."""
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    xs = np.atleast_1d(np.asarray(probe_xs, dtype=np.float64))
    return _column_mean(kernel(xs, cell_centres(n_grid)), np.arange(n_grid))


def draw_indices(n_grid: int, n: int, rng: Rng, replace: bool = False) -> np.ndarray:
    if replace:
        return np.minimum((rng.uniform(n) * n_grid).astype(np.int64), n_grid - 1)
    if n > n_grid:
        raise ValueError(f"cannot draw {n} distinct points from a grid of {n_grid}")
    return rng.choice(n_grid, n)


def mc_estimate(kernel: AnalyticKernel, probe_xs, n_grid: int, n: int, rng: Rng,
                replace: bool = False) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(probe_xs, dtype=np.float64))
    idx = draw_indices(n_grid, n, rng, replace)
    return _column_mean(kernel(xs, cell_centres(n_grid)), idx)


def bound_terms(C, L, d, vol, n_grid, n, delta, version="theorem"):
    """``(bias_term, deviation_term)`` of the estimation-error bound."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if C <= 0 or L < 0 or vol <= 0 or d < 1 or n_grid < 1 or n < 1:
        raise ValueError("bound constants must be positive")
    log_term = d * np.log(n_grid) + np.log(2.0 / delta)
    grid_term = np.sqrt(d) / 2.0 * vol * L * n_grid ** (-1.0 / d)
    if version == "theorem":
        return C * grid_term, 1.5 * C * np.sqrt(2.0 * log_term / n)
    if version == "appendix":
        return grid_term, 3.0 * C * np.sqrt(2.0 / n * log_term)
    raise ValueError(f"unknown bound version {version!r}")


def theorem_bound(C, L, L_x, d, vol, n_grid, n, delta, version="theorem") -> float:
    # L_x enters only through the net argument behind the log term
    bias, dev = bound_terms(C, L, d, vol, n_grid, n, delta, version)
    return float(bias + dev)


@dataclass
class TrialConfig:
    kernel: str = "gauss"
    n_grid: tuple = (16, 64, 256, 1024)
    n: tuple = (25, 50, 100, 200, 400)
    delta: float = 0.05
    trials: int = 200
    probes: int = 256
    seed: int = 0
    replace: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.trials < 1 or self.probes < 2:
            raise ValueError("need trials >= 1 and probes >= 2")
        if not self.pairs():
            raise ValueError("no (n_grid, n) pair satisfies n <= n_grid")

    def pairs(self):
        return [(g, n) for g in self.n_grid for n in self.n if self.replace or n <= g]


@dataclass
class BoundReport:
    config: dict
    constants: dict
    sup_gap: float
    cells: list
    bias: dict
    deviation_slopes: dict
    sup_errors: dict = field(repr=False)
    sup_deviations: dict = field(repr=False)

    def cell(self, n_grid, n) -> dict:
        for c in self.cells:
            if c["n_grid"] == n_grid and c["n"] == n:
                return c
        raise KeyError((n_grid, n))

    @property
    def min_coverage(self) -> float:
        return min(c["coverage"] for c in self.cells)

    def to_dict(self) -> dict:
        return {"config": self.config, "constants": self.constants, "sup_gap": self.sup_gap,
                "cells": self.cells,
                "bias": {str(k): v for k, v in self.bias.items()},
                "deviation_slopes": {str(k): v for k, v in self.deviation_slopes.items()}}


def _run_cell(kernel_name, n_grid, n, cfg, probes, ref, riem):
    kernel = get_kernel(kernel_name)
    F = kernel(probes, cell_centres(n_grid))
    sup_err = np.empty(cfg.trials)
    sup_dev = np.empty(cfg.trials)
    for m in range(cfg.trials):
        rng = Rng(derive(cfg.seed, "trial", n_grid, n, m))
        est = _column_mean(F, draw_indices(n_grid, n, rng, cfg.replace))
        sup_err[m] = np.max(np.abs(est - ref))
        sup_dev[m] = np.max(np.abs(est - riem))
    return sup_err, sup_dev


def run_trials(cfg: TrialConfig, jobs: int = 1) -> BoundReport:
    kernel = get_kernel(cfg.kernel)
    probes = np.linspace(0.0, 1.0, cfg.probes)
    ref = reference_integral(kernel, probes)
    riem = {g: riemann_grid_sum(kernel, probes, g) for g in cfg.n_grid}
    bias = {g: float(np.max(np.abs(riem[g] - ref))) for g in cfg.n_grid}
    pairs = cfg.pairs()
    args = [(cfg.kernel, g, n, cfg, probes, ref, riem[g]) for g, n in pairs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, *zip(*args)))
    else:
        results = [_run_cell(*a) for a in args]

    cells, sup_errors, sup_devs = [], {}, {}
    q = 1.0 - cfg.delta
    for (g, n), (err, dev) in zip(pairs, results):
        sup_errors[(g, n)] = err
        sup_devs[(g, n)] = dev
        bt, dt = bound_terms(kernel.C, kernel.L, kernel.d, kernel.vol, g, n, cfg.delta, "theorem")
        ba, da = bound_terms(kernel.C, kernel.L, kernel.d, kernel.vol, g, n, cfg.delta, "appendix")
        cells.append({
            "n_grid": g, "n": n, "bias_sup": bias[g],
            "bias_term_theorem": float(bt), "bias_term_appendix": float(ba),
            "bound_theorem": float(bt + dt), "bound_appendix": float(ba + da),
            "coverage": float(np.mean(err <= bt + dt)),
            "coverage_appendix": float(np.mean(err <= ba + da)),
            "mean_sup_error": float(err.mean()), "max_sup_error": float(err.max()),
            "quantile_sup_error": float(np.quantile(err, q)),
            "quantile_sup_deviation": float(np.quantile(dev, q)),
        })

    slopes = {}
    for g in cfg.n_grid:
        pts = [(c["n"], c["quantile_sup_deviation"]) for c in cells if c["n_grid"] == g]
        if len(pts) >= 2 and all(v > 0 for _, v in pts):
            ns, qs = np.array(pts).T
            slopes[g] = float(np.polyfit(np.log(ns), np.log(qs), 1)[0])
    spacing = probes[1] - probes[0]
    return BoundReport(config=asdict(cfg), constants={"C": kernel.C, "L": kernel.L,
                                                      "L_x": kernel.L_x, "d": kernel.d,
                                                      "vol": kernel.vol},
                       sup_gap=kernel.L_x * spacing / 2.0, cells=cells, bias=bias,
                       deviation_slopes=slopes, sup_errors=sup_errors, sup_deviations=sup_devs)
