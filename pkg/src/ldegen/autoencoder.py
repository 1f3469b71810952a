"""Deterministic fully connected autoencoder with incremental latent learning.

During training only a prefix of the latent vector is active. The tail is
multiplied by a constant 0/1 mask, so it is zero in the forward pass and
receives exactly zero gradient. The active prefix widens with the step
count until the whole vector is in use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .data import batch_iter
from .optim import AE_LEARNING_RATE, AdamState, adam_init, adam_step

FeatureDistance = Callable[[np.ndarray, dc.Node], dc.Node]


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AeConfig:
    input_dim: int
    hidden_widths: tuple[int, ...]
    latent_dim: int
    output_activation: str = "tanh"
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ConfigurationError("hidden_widths must be nonempty")
        if not 1 <= self.latent_dim < self.input_dim:
            raise ConfigurationError(
                f"latent_dim must satisfy 1 <= D < input_dim (undercomplete), got "
                f"D={self.latent_dim}, input_dim={self.input_dim}")
        if self.output_activation not in ("tanh", "sigmoid"):
            raise ConfigurationError(f"output_activation must be tanh or sigmoid, got {self.output_activation!r}")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")

    @property
    def data_range(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self.output_activation == "tanh" else (0.0, 1.0)

    def layer_dims(self, part: str) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_widths, self.latent_dim]
        if part == "dec":
            widths = widths[::-1]
        return list(zip(widths[:-1], widths[1:]))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for part in ("enc", "dec"):
            for i, (a, b) in enumerate(self.layer_dims(part)):
                shapes[f"{part}{i}_w"] = (a, b)
                shapes[f"{part}{i}_b"] = (b,)
        return shapes


@dataclass
class AeModel:
    config: AeConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.config.param_shapes()
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape}, expected {shape}")


def ae_init(config: AeConfig, seed: int) -> AeModel:
    """Uniform fan-in scaled weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return AeModel(config, params)


@dataclass(frozen=True)
class MaskSchedule:
    initial_dim: int
    full_dim: int
    ramp_end_step: int
    total_steps: int

    def __post_init__(self):
        if not 1 <= self.initial_dim <= self.full_dim:
            raise ValueError(f"need 1 <= initial_dim <= full_dim, got {self.initial_dim}, {self.full_dim}")
        if not 0 <= self.ramp_end_step <= self.total_steps:
            raise ValueError("need 0 <= ramp_end_step <= total_steps")

    @classmethod
    def default(cls, latent_dim: int, total_steps: int, ramp_fraction: float = 0.5,
                initial_dim: int | None = None) -> "MaskSchedule":
        d0 = max(1, math.ceil(latent_dim / 8)) if initial_dim is None else initial_dim
        return cls(d0, latent_dim, int(total_steps * ramp_fraction), total_steps)

    @classmethod
    def disabled(cls, latent_dim: int, total_steps: int) -> "MaskSchedule":
        return cls(latent_dim, latent_dim, 0, total_steps)


def effective_dim(schedule: MaskSchedule, step: int) -> int:
    """Linear ramp from ``initial_dim`` at step 0 to ``full_dim`` at ``ramp_end_step``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    d0, d = schedule.initial_dim, schedule.full_dim
    if schedule.ramp_end_step == 0:
        return d
    progress = min(step, schedule.ramp_end_step)
    # integer arithmetic: floor((D - d0) * progress / ramp_end) without float rounding
    return min(d, d0 + (d - d0) * progress // schedule.ramp_end_step)


def latent_mask(latent_dim: int, d: int) -> np.ndarray:
    if not 1 <= d <= latent_dim:
        raise ValueError(f"active dimension {d} outside [1, {latent_dim}]")
    mask = np.zeros(latent_dim)
    mask[:d] = 1.0
    return mask


def apply_latent_mask(z: dc.Node, d: int) -> dc.Node:
    """Zero components past index ``d``; multiplying by a constant blocks their gradient."""
    return dc.mul(z, latent_mask(z.value.shape[-1], d))


def _bind(tape, model, trainable=True):
    if trainable:
        return {k: tape.param(v, k) for k, v in model.params.items()}
    return {k: tape.constant(v) for k, v in model.params.items()}


def _check_input(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise dc.DimensionError(f"{what}: expected [B x {width}], got {x.shape}")
    return x


def _encode_nodes(model: AeModel, h: dc.Node, leaves) -> dc.Node:
    n = len(model.config.layer_dims("enc"))
    for i in range(n):
        h = dc.affine(h, leaves[f"enc{i}_w"], leaves[f"enc{i}_b"])
        if i < n - 1:
            h = dc.pointwise("leaky_relu", h)
    return h


def _decode_nodes(model: AeModel, h: dc.Node, leaves) -> dc.Node:
    n = len(model.config.layer_dims("dec"))
    for i in range(n):
        h = dc.affine(h, leaves[f"dec{i}_w"], leaves[f"dec{i}_b"])
        h = dc.pointwise("leaky_relu" if i < n - 1 else model.config.output_activation, h)
    return h


def encode(model: AeModel, x) -> np.ndarray:
    x = _check_input(x, model.config.input_dim, "encode")
    tape = dc.Tape(record=False)
    return _encode_nodes(model, tape.constant(x), _bind(tape, model, False)).value


def decode(model: AeModel, z) -> np.ndarray:
    z = _check_input(z, model.config.latent_dim, "decode")
    tape = dc.Tape(record=False)
    return _decode_nodes(model, tape.constant(z), _bind(tape, model, False)).value


def recon_loss(x, x_hat: dc.Node, beta: float = 0.0,
               feature_distance: FeatureDistance | None = None) -> dc.Node:
    """Pixel MSE plus ``beta`` times an optional feature-space distance."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != x_hat.value.shape:
        raise dc.DimensionError(f"recon_loss: {x.shape} vs {x_hat.value.shape}")
    loss = dc.mean(dc.square(dc.sub(x_hat, x)))
    if beta > 0:
        if feature_distance is None:
            raise ConfigurationError("beta > 0 requires a feature_distance hook")
        loss = dc.add(loss, dc.scale(feature_distance(x, x_hat), beta))
    return loss


def ae_loss(model: AeModel, batch, active_dim: int | None = None,
            feature_distance: FeatureDistance | None = None) -> tuple[dc.Node, dc.Node]:
    """Reconstruction loss and the unmasked latent node; ``active_dim=None`` skips masking."""
    batch = _check_input(batch, model.config.input_dim, "ae_loss")
    tape = dc.Tape()
    leaves = _bind(tape, model)
    z = _encode_nodes(model, tape.constant(batch), leaves)
    zm = z if active_dim is None else apply_latent_mask(z, active_dim)
    x_hat = _decode_nodes(model, zm, leaves)
    return recon_loss(batch, x_hat, model.config.beta, feature_distance), z


@dataclass
class AeStepResult:
    loss: float
    active_dim: int
    grads: dict[str, np.ndarray]


def ae_train_step(model: AeModel, batch, schedule: MaskSchedule | None, step: int,
                  state: AdamState, feature_distance: FeatureDistance | None = None) -> AeStepResult:
    """One Adam step on the (masked) reconstruction loss; weights change in place.

    ``schedule=None`` is the plain autoencoder path with no mask at all.
    The reported loss is the one whose gradient was applied. ``grads``
    includes the gradient at the pre-mask latent under the key ``"latent"``.
    """
    d = model.config.latent_dim if schedule is None else effective_dim(schedule, step)
    loss, z = ae_loss(model, batch, None if schedule is None else d, feature_distance)
    grads = dc.backward(loss.tape, loss)
    adam_step(state, model.params, grads)
    return AeStepResult(float(loss.value), d, {**grads, "latent": z.grad})


def train_autoencoder(model: AeModel, data: np.ndarray, steps: int, schedule: MaskSchedule | None,
                      batch_size: int = 128, lr: float = AE_LEARNING_RATE, seed: int = 0,
                      beta1: float = 0.5, beta2: float = 0.999, epsilon: float = 1e-8,
                      feature_distance: FeatureDistance | None = None,
                      callback: Callable[[int, AeStepResult], None] | None = None) -> list[float]:
    state = adam_init(model.params, lr, beta1, beta2, epsilon)
    losses: list[float] = []
    epoch = 0
    while len(losses) < steps:
        for batch in batch_iter(data, batch_size, seed, epoch):
            result = ae_train_step(model, batch, schedule, len(losses), state, feature_distance)
            losses.append(result.loss)
            if callback is not None:
                callback(len(losses) - 1, result)
            if len(losses) >= steps:
                break
        epoch += 1
    return losses


def interpolate_latents(z0, z1, alphas: Sequence[float]) -> np.ndarray:
    """Rows ``(1 - a) * z0 + a * z1`` for each ``a`` in ``alphas``."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("alphas must lie in [0, 1]")
    return (1.0 - a)[:, None] * z0[None, :] + a[:, None] * z1[None, :]
