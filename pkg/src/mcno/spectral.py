"""Fourier utilities and the benchmark data generators.

Both benchmark equations live on the periodic unit interval.  Burgers is
advanced by split stepping (forward Euler on the conservative flux, exact
heat propagation in Fourier space); KdV by ETDRK4 with the dispersive term
integrated exactly and a 2/3-rule dealiased nonlinearity.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng, derive

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised on NaN/blow-up or a violated stability condition."""

    def __init__(self, msg, sample=None, required_dt=None):
        super().__init__(msg)
        self.sample = sample
        self.required_dt = required_dt


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# ----------------------------------------------------------------------------
# radix-2 FFT


def fft(x, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis.

    Forward: ``X_k = sum_j x_j exp(-2 pi i jk/n)``; inverse carries the ``1/n``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    a = x[..., rev]
    lead = x.shape[:-1]
    sign = 1.0 if inverse else -1.0
    m = 1
    while m < n:
        tw = np.exp(sign * 1j * np.pi * np.arange(m) / m)
        a = a.reshape(lead + (n // (2 * m), 2, m))
        even = a[..., 0, :]
        odd = a[..., 1, :] * tw
        a = np.stack([even + odd, even - odd], axis=-2).reshape(lead + (n,))
        m *= 2
    return a / n if inverse else a


def dft(x, direction: str = "forward") -> np.ndarray:
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return fft(x, inverse=direction == "inverse")


def wavenumbers(n: int) -> np.ndarray:
    """Angular wavenumbers ``2 pi m`` of the rfft layout on the unit interval."""
    return 2.0 * np.pi * np.arange(n // 2 + 1)


def spectral_derivative(u: np.ndarray) -> np.ndarray:
    n = u.shape[-1]
    ik = 1j * wavenumbers(n)
    ik[-1] = 0.0  # odd derivative: drop the Nyquist mode
    return np.fft.irfft(ik * np.fft.rfft(u), n)


# ----------------------------------------------------------------------------
# grids and random fields


@dataclass(frozen=True)
class Grid1D:
    n: int
    length: float = 1.0

    def __post_init__(self):
        if not _is_pow2(self.n):
            raise ValueError(f"grid size must be a power of two, got {self.n}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n) * self.h


@dataclass(frozen=True)
class GrfSpec:
    """Covariance ``scale * (-Laplacian + shift)^(-power)`` on the periodic unit interval."""

    scale: float
    shift: float
    power: float

    def __post_init__(self):
        if self.scale < 0 or self.shift <= 0 or self.power <= 0.5:
            raise ValueError(f"invalid GRF parameters {self}")

    def eigenvalues(self, kmax: int) -> np.ndarray:
        k = np.arange(1, kmax + 1)
        return self.scale * (4.0 * np.pi**2 * k**2 + self.shift) ** (-self.power)

    def pointwise_variance(self, n: int) -> float:
        return float(2.0 * self.eigenvalues(n // 2 - 1).sum())


BURGERS_GRF = GrfSpec(scale=625.0, shift=25.0, power=2.0)
KDV_GRF = GrfSpec(scale=7.0**4, shift=49.0, power=2.5)


def grf_sample(spec: GrfSpec, grid: Grid1D, rng: Rng) -> np.ndarray:
    """One zero-mean periodic field from the orthonormal real Fourier basis.

    Modes ``k = 1 .. n/2 - 1`` get ``sqrt(lambda_k) (xi sqrt2 cos + eta sqrt2 sin)``;
    the mean and Nyquist modes are zero.
    """
    n = grid.n
    if n % 2:
        raise ValueError("grid size must be even")
    K = n // 2 - 1
    xi = rng.normal(K)
    eta = rng.normal(K)
    coef = np.zeros(n, dtype=np.complex128)
    amp = n * np.sqrt(spec.eigenvalues(K) / 2.0)
    coef[1:K + 1] = amp * (xi - 1j * eta)
    coef[n - K:] = np.conj(coef[1:K + 1])[::-1]
    return fft(coef, inverse=True).real


# ----------------------------------------------------------------------------
# solvers


@dataclass(frozen=True)
class BurgersParams:
    nu: float = 0.1
    T: float = 1.0
    dt: float = 1e-4
    n_hi: int = 8192
    cfl_limit: float = 4.0

    @property
    def n_steps(self) -> int:
        steps = round(self.T / self.dt)
        if abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        return steps


@dataclass(frozen=True)
class KdvParams:
    T: float = 1.0
    dt: float = 1e-4
    n_hi: int = 1024
    dealias: float = 2.0 / 3.0
    contour_points: int = 64

    @property
    def n_steps(self) -> int:
        steps = round(self.T / self.dt)
        if abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        return steps


def burgers_solve(u0, params: BurgersParams = BurgersParams()) -> np.ndarray:
    """Advance ``u_t + (u^2/2)_x = nu u_xx`` to ``T``; ``u0`` may be batched ``[..., n]``."""
    u0 = np.asarray(u0, dtype=np.float64)
    n = u0.shape[-1]
    if not np.all(np.isfinite(u0)):
        raise SolverError("initial condition is not finite")
    if params.nu <= 0:
        raise ValueError("viscosity must be positive")
    h = 1.0 / n
    dt = params.dt
    k = wavenumbers(n)
    ik_dt = 1j * k * dt
    ik_dt[-1] = 0.0
    heat = np.exp(-params.nu * k**2 * dt)
    u_hat = np.fft.rfft(u0)
    u = u0
    for step in range(params.n_steps):
        umax = np.max(np.abs(u), axis=-1)
        worst = np.max(umax) if umax.ndim else umax
        if not np.isfinite(worst):
            bad = np.flatnonzero(~np.isfinite(np.atleast_1d(umax)))
            raise SolverError(f"non-finite solution at step {step}", sample=int(bad[0]))
        if dt * worst > params.cfl_limit * h:
            bad = int(np.argmax(np.atleast_1d(umax)))
            need = params.cfl_limit * h / worst
            raise SolverError(
                f"stability violated at step {step}: dt={dt:g} exceeds {need:.3e} "
                f"(max|u|={worst:.3f}, cfl_limit={params.cfl_limit})",
                sample=bad, required_dt=need)
        u_hat = (u_hat - ik_dt * np.fft.rfft(0.5 * u * u)) * heat
        u = np.fft.irfft(u_hat, n)
    return u


def etdrk4_coefficients(L: np.ndarray, dt: float, m: int = 64):
    """ETDRK4 weights by contour averaging over a unit circle around ``dt*L``."""
    r = np.exp(2j * np.pi * (np.arange(m) + 0.5) / m)
    LR = dt * L[:, None] + r[None, :]
    eLR = np.exp(LR)
    Q = dt * np.mean((np.exp(LR / 2) - 1) / LR, axis=1)
    f1 = dt * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=1)
    f2 = dt * np.mean((2 + LR + eLR * (LR - 2)) / LR**3, axis=1)
    f3 = dt * np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=1)
    return np.exp(dt * L), np.exp(dt * L / 2), Q, f1, f2, f3


def kdv_solve(u0, params: KdvParams = KdvParams()) -> np.ndarray:
    """Advance ``u_t = -0.5 u u_x - u_xxx`` to ``T``; ``u0`` may be batched ``[..., n]``."""
    u0 = np.asarray(u0, dtype=np.float64)
    n = u0.shape[-1]
    if not np.all(np.isfinite(u0)):
        raise SolverError("initial condition is not finite")
    k = wavenumbers(n)
    L = 1j * k**3
    E, E2, Q, f1, f2, f3 = etdrk4_coefficients(L, params.dt, params.contour_points)
    mask = (np.arange(n // 2 + 1) <= params.dealias * n / 2).astype(np.float64)
    g = -0.25 * 1j * k * mask
    g[-1] = 0.0

    def nonlin(v):
        w = np.fft.irfft(v * mask, n)
        return g * np.fft.rfft(w * w)

    v = np.fft.rfft(u0)
    scale0 = max(float(np.max(np.abs(v))), 1.0)
    # overflow on the way to a blow-up is expected; it is detected and reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(params.n_steps):
            Nv = nonlin(v)
            a = E2 * v + Q * Nv
            Na = nonlin(a)
            b = E2 * v + Q * Na
            Nb = nonlin(b)
            c = E2 * a + Q * (2 * Nb - Nv)
            Nc = nonlin(c)
            v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
            if step % 100 == 99 or step == params.n_steps - 1:
                amp = np.max(np.abs(v), axis=-1)
                bad = ~np.isfinite(amp) | (amp > 1e6 * scale0)
                if np.any(bad):
                    raise SolverError(
                        f"blow-up at step {step + 1}; try a smaller dt than {params.dt:g}",
                        sample=int(np.flatnonzero(np.atleast_1d(bad))[0]))
    return np.fft.irfft(v, n)


# ----------------------------------------------------------------------------
# datasets


def subsample(u, m: int) -> np.ndarray:
    u = np.asarray(u)
    n = u.shape[-1]
    if m < 1 or n % m:
        raise ValueError(f"factor {m} does not divide grid size {n}")
    return u[..., ::m]


@dataclass
class Dataset:
    pde: str
    resolution: int
    a: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        if self.a.shape != self.u.shape or self.a.ndim != 2 or self.a.shape[1] != self.resolution:
            raise ValueError(f"inputs {self.a.shape} and outputs {self.u.shape} must be "
                             f"[n_samples, {self.resolution}]")

    @property
    def n_samples(self) -> int:
        return self.a.shape[0]

    def take(self, rows) -> "Dataset":
        return Dataset(self.pde, self.resolution, self.a[rows], self.u[rows], dict(self.meta))

    def split(self, n_train: int, n_test: int):
        """First ``n_train`` rows for training, last ``n_test`` for testing."""
        if n_train + n_test > self.n_samples:
            raise ValueError(f"{n_train}+{n_test} samples requested, dataset has {self.n_samples}")
        return (self.take(slice(0, n_train)),
                self.take(slice(self.n_samples - n_test, self.n_samples)))

    def at_resolution(self, s: int) -> "Dataset":
        m = self.resolution // s
        if m * s != self.resolution:
            raise ValueError(f"cannot subsample {self.resolution} points to {s}")
        return Dataset(self.pde, s, subsample(self.a, m), subsample(self.u, m),
                       {**self.meta, "resolution": s})


PDE_DEFAULTS = {
    "burgers": {"grf": BURGERS_GRF, "hi_res": 8192,
                "resolutions": [256, 512, 1024, 2048, 4096, 8192]},
    "kdv": {"grf": KDV_GRF, "hi_res": 1024, "resolutions": [128, 256, 512, 1024]},
}

CHUNK = 32


def _solve_chunk(pde, seed, start, stop, hi_res, params):
    grf = PDE_DEFAULTS[pde]["grf"]
    grid = Grid1D(hi_res)
    a = np.stack([grf_sample(grf, grid, Rng(derive(seed, "sample", j)))
                  for j in range(start, stop)])
    solve = burgers_solve if pde == "burgers" else kdv_solve
    try:
        u = solve(a, params)
    except SolverError as e:
        idx = start + (e.sample or 0)
        raise SolverError(f"sample {idx}: {e}", sample=idx, required_dt=e.required_dt) from e
    return a, u


def generate_dataset(pde: str, n_samples: int, hi_res=None, resolutions=None, seed: int = 0,
                     params=None, jobs: int = 1) -> dict:
    """Draw GRF inputs, solve at ``hi_res`` and return ``{resolution: Dataset}``.

    Sample ``j`` uses the sub-seed ``derive(seed, "sample", j)``; samples are
    solved in fixed chunks so the output does not depend on ``jobs``.
    """
    if pde not in PDE_DEFAULTS:
        raise ValueError(f"unknown pde {pde!r}")
    d = PDE_DEFAULTS[pde]
    hi_res = hi_res or (params.n_hi if params is not None else d["hi_res"])
    if params is None:
        params = BurgersParams(n_hi=hi_res) if pde == "burgers" else KdvParams(n_hi=hi_res)
    resolutions = list(resolutions or [r for r in d["resolutions"] if r <= hi_res])
    for r in resolutions:
        if hi_res % r:
            raise ValueError(f"resolution {r} does not divide {hi_res}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")

    bounds = [(s, min(s + CHUNK, n_samples)) for s in range(0, n_samples, CHUNK)]
    args = [(pde, seed, s, e, hi_res, params) for s, e in bounds]
    if jobs > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_solve_chunk, *zip(*args)))
    else:
        parts = []
        for arg in args:
            parts.append(_solve_chunk(*arg))
            log.info("solved samples %d-%d of %d", arg[2], arg[3], n_samples)
    a = np.concatenate([p[0] for p in parts])
    u = np.concatenate([p[1] for p in parts])
    meta = {"pde": pde, "n_samples": n_samples, "seed": seed, "hi_res": hi_res,
            "solver": {k: getattr(params, k) for k in params.__dataclass_fields__}}
    out = {}
    for r in resolutions:
        m = hi_res // r
        out[r] = Dataset(pde, r, subsample(a, m), subsample(u, m), {**meta, "resolution": r})
    return out
