"""Likelihood evaluation: Parzen windows, Monte-Carlo oracles and model checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import lde as lde_mod
from .autoencoder import AeModel, decode, encode, interpolate_latents
from .lde import LdeModel

DEFAULT_BANDWIDTH_GRID = tuple(np.logspace(-2, 0, 20))


@dataclass(frozen=True)
class ParzenEstimate:
    support_samples: np.ndarray
    sigma: float

    def __post_init__(self):
        if np.asarray(self.support_samples).ndim != 2 or len(self.support_samples) < 1:
            raise ValueError("support_samples must be a nonempty [n x d] array")
        if not self.sigma > 0:
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float


def mean_and_stderr(values) -> Estimate:
    values = np.asarray(values, dtype=np.float64)
    se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    return Estimate(float(values.mean()), float(se))


def _sq_distances(points: np.ndarray, support: np.ndarray, support_sq: np.ndarray) -> np.ndarray:
    d2 = (points * points).sum(axis=1)[:, None] + support_sq[None, :] - 2.0 * points @ support.T
    return np.maximum(d2, 0.0)


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(a - m).sum(axis=1))


PARZEN_BLOCK_ELEMENTS = 4_000_000


def parzen_point_logliks(support, points, sigmas: Sequence[float], chunk: int = 512) -> np.ndarray:
    """Per-point Gaussian-kernel log-likelihoods for each bandwidth, shape ``[len(sigmas), m]``.

    Squared distances are computed once per chunk and shared across bandwidths.
    Chunks shrink so one distance block stays under ``PARZEN_BLOCK_ELEMENTS``.
    """
    support = np.asarray(support, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if support.ndim != 2 or points.ndim != 2 or support.shape[1] != points.shape[1]:
        raise ValueError(f"dimension mismatch: support {support.shape}, points {points.shape}")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas <= 0):
        raise ValueError("bandwidths must be positive")
    n, d = support.shape
    chunk = max(1, min(chunk, PARZEN_BLOCK_ELEMENTS // n))
    support_sq = (support * support).sum(axis=1)
    out = np.empty((len(sigmas), len(points)))
    for lo in range(0, len(points), chunk):
        d2 = _sq_distances(points[lo:lo + chunk], support, support_sq)
        for j, s in enumerate(sigmas):
            out[j, lo:lo + chunk] = (_lse_rows(-d2 / (2.0 * s * s)) - math.log(n)
                                     - 0.5 * d * math.log(2.0 * math.pi * s * s))
    return out


def parzen_loglik(estimate: ParzenEstimate, test) -> Estimate:
    """Mean and standard error of the Parzen log-likelihood over ``test`` rows."""
    ll = parzen_point_logliks(estimate.support_samples, test, [estimate.sigma])[0]
    return mean_and_stderr(ll)


def bandwidth_grid_search(support, validation, grid: Sequence[float] = DEFAULT_BANDWIDTH_GRID) -> float:
    """Grid bandwidth with the highest mean validation log-likelihood; ties go to the smaller one."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty bandwidth grid")
    means = parzen_point_logliks(support, validation, grid).mean(axis=1)
    best = max(range(len(grid)), key=lambda i: (means[i], -grid[i]))
    return grid[best]


def mc_cross_entropy_oracle(log_density_fn: Callable[[np.ndarray], np.ndarray], samples) -> Estimate:
    """Monte-Carlo estimate of E_p[log p] from draws of p."""
    return mean_and_stderr(log_density_fn(np.asarray(samples, dtype=np.float64)))


@dataclass
class CausalityReport:
    passed: bool
    trials: int
    counterexample: dict | None = None


CAUSALITY_DELTAS = (0.1, -0.1, 10.0, -10.0)


def causality_check(model: LdeModel, trials: int, seed: int) -> CausalityReport:
    """Perturb one coordinate ``z_j`` and require bit-identical parameters at positions ``i <= j``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = model.config.latent_dim
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(trials, d)) * model.scale + model.shift
    js = rng.integers(0, d, size=trials)
    deltas = rng.choice(CAUSALITY_DELTAS, size=trials)
    z2 = z.copy()
    z2[np.arange(trials), js] += deltas
    a = lde_mod.lde_forward(model, z)
    b = lde_mod.lde_forward(model, z2)
    for t in range(trials):
        j = js[t]
        for name in ("log_pi", "mu", "sigma"):
            lhs = getattr(a, name)[t, :j + 1]
            rhs = getattr(b, name)[t, :j + 1]
            if not np.array_equal(lhs, rhs):
                pos = int(np.argwhere(lhs != rhs)[0][0])
                return CausalityReport(False, t + 1, {
                    "trial": t, "perturbed": int(j), "delta": float(deltas[t]),
                    "position": pos, "field": name,
                })
    return CausalityReport(True, trials)


@dataclass
class InterpolationCurve:
    alphas: np.ndarray
    loglik: np.ndarray
    latents: np.ndarray
    images: np.ndarray | None = field(default=None)


def interpolation_loglik(ae: AeModel, lde: LdeModel, x0, x1, alphas: Sequence[float],
                         decode_images: bool = False) -> InterpolationCurve:
    """LDE log-density along the straight latent path between two encoded inputs."""
    z = encode(ae, np.stack([np.asarray(x0, dtype=np.float64).ravel(),
                             np.asarray(x1, dtype=np.float64).ravel()]))
    path = interpolate_latents(z[0], z[1], alphas)
    ll = lde_mod.lde_log_density(lde, path)
    images = decode(ae, path) if decode_images else None
    return InterpolationCurve(np.asarray(alphas, dtype=np.float64), ll, path, images)


def held_out_nll(lde: LdeModel, latents) -> Estimate:
    """Mean per-dimension negative log-likelihood, the training loss on held-out rows."""
    return mean_and_stderr(-lde_mod.lde_log_density(lde, latents) / lde.config.latent_dim)


def format_report(metrics: dict[str, Estimate | float | int | str]) -> str:
    lines = []
    for key, val in metrics.items():
        if isinstance(val, Estimate):
            lines.append(f"{key} = {val.mean!r}")
            lines.append(f"{key}_stderr = {val.stderr!r}")
        else:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def format_csv(metrics: dict[str, Estimate | float]) -> str:
    rows = ["metric,value,stderr"]
    for key, val in metrics.items():
        if isinstance(val, Estimate):
            rows.append(f"{key},{val.mean!r},{val.stderr!r}")
        elif isinstance(val, (int, float)):
            rows.append(f"{key},{float(val)!r},")
    return "\n".join(rows) + "\n"
