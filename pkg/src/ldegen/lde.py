"""Latent density estimator: autoregressive mixture-of-Gaussians over latent vectors.

The density factorizes as ``p(z) = prod_i p(z_i | z_<i)``. Each
conditional is a K-component univariate Gaussian mixture whose parameters
come from a stack of dilated causal convolutions followed by a 1x1
convolution head.

Input encoding: the latent vector is shifted right by one slot and paired
with a mask channel, so position ``i`` carries ``(z_{i-1}, 1)`` and
position 0 carries the padding pair ``(0, 0)``. Combined with causal
convolutions this gives every position a view of exactly ``z_<i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .data import batch_iter
from .optim import LDE_LEARNING_RATE, adam_init, adam_step

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_SIGMA_FLOOR = 1e-3


def layer_count(latent_dim: int, filter_size: int) -> int:
    """Smallest L with ``filter_size ** L >= latent_dim``, i.e. ceil(log_s D) in exact arithmetic."""
    layers = 0
    while filter_size ** layers < latent_dim:
        layers += 1
    return layers


@dataclass(frozen=True)
class LdeConfig:
    latent_dim: int
    mixtures: int
    filter_size: int = 2
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.mixtures < 1:
            raise ValueError(f"mixtures must be >= 1, got {self.mixtures}")
        if self.filter_size < 2:
            raise ValueError(f"filter_size must be >= 2, got {self.filter_size}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")

    @property
    def layer_count(self) -> int:
        return layer_count(self.latent_dim, self.filter_size)

    @property
    def channels(self) -> tuple[int, ...]:
        # layer l = 1..L has 2^(l+3) filters
        return tuple(2 ** (l + 3) for l in range(1, self.layer_count + 1))

    @property
    def dilations(self) -> tuple[int, ...]:
        # 1, s, s^2, ...: with width-s filters the receptive field is exactly s^L
        return tuple(self.filter_size ** l for l in range(self.layer_count))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c_in = 2
        for l, c_out in enumerate(self.channels):
            shapes[f"conv{l}_w"] = (c_out, c_in, self.filter_size)
            shapes[f"conv{l}_b"] = (c_out,)
            c_in = c_out
        shapes["head_w"] = (c_in, 3 * self.mixtures)
        shapes["head_b"] = (3 * self.mixtures,)
        return shapes


@dataclass
class LdeModel:
    """Trainable weights plus a fixed per-dimension affine standardization.

    The network sees ``(z - shift) / scale``; densities and samples are
    always reported in the original units.
    """

    config: LdeConfig
    params: dict[str, np.ndarray]
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        d = self.config.latent_dim
        if self.shift is None:
            self.shift = np.zeros(d)
        if self.scale is None:
            self.scale = np.ones(d)
        expected = self.config.param_shapes()
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape}, expected {shape}")
        if self.shift.shape != (d,) or self.scale.shape != (d,) or np.any(self.scale <= 0):
            raise ValueError("shift/scale must be length-D with positive scale")


@dataclass
class MdnParams:
    """Mixture parameters per batch row and latent position, each ``[B, D, K]``."""

    log_pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    def row(self, b: int) -> "MdnParams":
        return MdnParams(self.log_pi[b], self.mu[b], self.sigma[b])


def lde_init(config: LdeConfig, seed: int) -> LdeModel:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = shape[1] * shape[2] if len(shape) == 3 else shape[0]
        bound = math.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return LdeModel(config, params)


def fit_standardization(model: LdeModel, data: np.ndarray) -> None:
    """Set shift/scale to the per-dimension mean and standard deviation of ``data``."""
    data = np.asarray(data, dtype=np.float64)
    std = data.std(axis=0)
    model.shift = data.mean(axis=0)
    model.scale = np.where(std > 0, std, 1.0)


def _network_input(zn: np.ndarray) -> np.ndarray:
    batch, d = zn.shape
    x = np.zeros((batch, 2, d))
    x[:, 0, 1:] = zn[:, :-1]
    x[:, 1, 1:] = 1.0
    return x


def _forward_nodes(tape: dc.Tape, model: LdeModel, zn: np.ndarray, leaves: dict):
    cfg = model.config
    h = tape.constant(_network_input(zn))
    for l, dilation in enumerate(cfg.dilations):
        h = dc.dilated_causal_conv1d(h, leaves[f"conv{l}_w"], dilation, leaves[f"conv{l}_b"])
        h = dc.pointwise("leaky_relu", h)
    h = dc.transpose(h, (0, 2, 1))
    out = dc.affine(h, leaves["head_w"], leaves["head_b"])
    k = cfg.mixtures
    log_pi = dc.log_softmax(out[..., :k])
    mu = dc.pointwise("identity", out[..., k:2 * k])
    sigma = dc.add(dc.pointwise("exp", out[..., 2 * k:]), cfg.sigma_floor)
    return log_pi, mu, sigma


def _bind(tape: dc.Tape, model: LdeModel, trainable: bool) -> dict:
    if trainable:
        return {k: tape.param(v, k) for k, v in model.params.items()}
    return {k: tape.constant(v) for k, v in model.params.items()}


def _check_batch(model: LdeModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.config.latent_dim:
        raise dc.DimensionError(f"expected [B x {model.config.latent_dim}] latents, got {z.shape}")
    return z


def _normalized_params(model: LdeModel, zn: np.ndarray) -> MdnParams:
    tape = dc.Tape(record=False)
    log_pi, mu, sigma = _forward_nodes(tape, model, zn, _bind(tape, model, False))
    return MdnParams(log_pi.value, mu.value, sigma.value)


def lde_forward(model: LdeModel, z) -> MdnParams:
    """Mixture parameters for every row of ``z``; position i depends on z[:, :i] only."""
    z = _check_batch(model, z)
    p = _normalized_params(model, (z - model.shift) / model.scale)
    return MdnParams(p.log_pi, p.mu * model.scale[:, None] + model.shift[:, None],
                     p.sigma * model.scale[:, None])


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True)))[..., 0]


def conditional_log_density(pi, mu, sigma, z) -> np.ndarray:
    """log sum_k pi_k N(z; mu_k, sigma_k^2); mixture axis last, ``z`` broadcasts over the rest."""
    pi, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (pi, mu, sigma))
    z = np.asarray(z, dtype=np.float64)[..., None]
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    u = (z - mu) / sigma
    return _logsumexp(log_pi - 0.5 * u * u - np.log(sigma) - HALF_LOG_2PI)


def _mixture_log_density(params: MdnParams, z: np.ndarray) -> np.ndarray:
    u = (z[..., None] - params.mu) / params.sigma
    return _logsumexp(params.log_pi - 0.5 * u * u - np.log(params.sigma) - HALF_LOG_2PI)


def lde_conditionals(model: LdeModel, z, chunk: int = 4096) -> np.ndarray:
    """Per-dimension conditional log-densities ``log p(z_i | z_<i)``, shape ``[B, D]``."""
    z = _check_batch(model, z)
    out = np.empty(z.shape)
    for lo in range(0, z.shape[0], chunk):
        zc = z[lo:lo + chunk]
        zn = (zc - model.shift) / model.scale
        out[lo:lo + chunk] = _mixture_log_density(_normalized_params(model, zn), zn) - np.log(model.scale)
    return out


def lde_log_density(model: LdeModel, z, chunk: int = 4096) -> np.ndarray:
    """``log p(z)`` per row: the sum of the conditional log-densities."""
    return lde_conditionals(model, z, chunk).sum(axis=1)


def lde_nll_loss(model: LdeModel, batch, check_finite: bool = False) -> dc.Node:
    """Batch mean of ``-(1/D) * log p(z)``; the returned node's tape holds the graph."""
    batch = _check_batch(model, batch)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    tape = dc.Tape(check_finite=check_finite)
    zn = (batch - model.shift) / model.scale
    log_pi, mu, sigma = _forward_nodes(tape, model, zn, _bind(tape, model, True))
    per_dim = dc.mixture_log_prob(log_pi, mu, sigma, zn)
    # the Jacobian term keeps the loss in the original (unstandardized) units
    return dc.add(dc.scale(dc.mean(per_dim), -1.0), np.log(model.scale).mean())


def lde_sample(model: LdeModel, n: int, rng_seed: int) -> np.ndarray:
    """Ancestral sampling: z_1, then z_2 | z_1, ... each from its mixture conditional."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    d = model.config.latent_dim
    zn = np.zeros((n, d))
    rows = np.arange(n)
    for i in range(d):
        p = _normalized_params(model, zn)
        cdf = np.cumsum(np.exp(p.log_pi[:, i, :]), axis=1)
        u = rng.random(n) * cdf[:, -1]
        k = np.minimum((cdf < u[:, None]).sum(axis=1), model.config.mixtures - 1)
        eps = rng.standard_normal(n)
        zn[:, i] = p.mu[rows, i, k] + p.sigma[rows, i, k] * eps
    return zn * model.scale + model.shift


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)


def train_lde(model: LdeModel, data: np.ndarray, steps: int, batch_size: int = 128,
              lr: float = LDE_LEARNING_RATE, seed: int = 0, beta1: float = 0.5,
              beta2: float = 0.999, epsilon: float = 1e-8,
              callback: Callable[[int, float], None] | None = None) -> list[float]:
    """Minimize the mean per-dimension negative log-likelihood with Adam.

    Weights are updated in place; returns the per-step training loss.
    """
    data = _check_batch(model, data)
    state = adam_init(model.params, lr, beta1, beta2, epsilon)
    losses = []
    epoch = 0
    while len(losses) < steps:
        for batch in batch_iter(data, batch_size, seed, epoch):
            loss = lde_nll_loss(model, batch)
            grads = dc.backward(loss.tape, loss)
            adam_step(state, model.params, grads)
            losses.append(float(loss.value))
            if callback is not None:
                callback(len(losses), losses[-1])
            if len(losses) >= steps:
                break
        epoch += 1
    return losses
