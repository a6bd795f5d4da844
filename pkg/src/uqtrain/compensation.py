"""Stochastic compensation of feature statistics.

During training the network never sees the whole population, so the
instance statistics it produces are themselves uncertain.  Compensation
models that uncertainty directly: each feature map is re-standardized
and then re-scaled and re-shifted with statistics that have been jittered
by Gaussian noise whose magnitude is the observed batch-level spread.
Writing U, S for the instance mean/std and Sm, Ss for the batch spread
of means/stds, a map F becomes

    F' = (S + eps_s * Ss) * (F - U) / (S + eps_div) + (U + eps_m * Sm)

with eps_m, eps_s ~ N(0, 1) drawn fresh per step from a keyed stream.
With eps = 0 this is the identity up to the eps_div smoothing, and in
expectation it leaves the map unchanged.  The layer is train-only by
default; evaluation runs the plain forward pass.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .rng import STREAM_PERTURB, keyed_rng
from .stats import layer_stats

# smoothing added to the normalization denominator; much coarser than the
# 1e-12 division guard so near-constant channels stay well-conditioned.
EPS_DIV = 1e-6

PER_ELEMENT = "per-element"
SHARED_SCALAR = "shared-scalar"


@dataclass
class CompensationConfig:
    """Where and how compensation is applied."""

    enabled_layers: tuple[int, ...] = (1, 2)  # 1-based block indices
    mode: str = PER_ELEMENT                   # or SHARED_SCALAR
    apply_in_eval: bool = False
    use_batch_stats: bool = False             # normalize with batch-level
                                              # stats instead of per-instance

    def __post_init__(self):
        if self.mode not in (PER_ELEMENT, SHARED_SCALAR):
            raise ContractError(f"unknown compensation mode {self.mode!r}")


@dataclass
class PerturbationDraw:
    """The Gaussian factors for one layer at one step.

    Per-element mode holds two independent (B, C) fields; shared-scalar
    mode holds one scalar used for both the shift and the scale.
    """

    eps_mean: np.ndarray
    eps_std: np.ndarray
    mode: str = PER_ELEMENT


def draw_perturbation(batch_size: int, channels: int, mode: str,
                      seed: int, epoch: int, batch_index: int,
                      layer_index: int) -> PerturbationDraw:
    """Draw the noise for (seed, epoch, batch, layer); same key, same noise."""
    rng = keyed_rng(seed, STREAM_PERTURB, epoch, batch_index, layer_index)
    if mode == PER_ELEMENT:
        eps_mean = rng.standard_normal((batch_size, channels))
        eps_std = rng.standard_normal((batch_size, channels))
    elif mode == SHARED_SCALAR:
        e = np.asarray(rng.standard_normal())
        eps_mean = e
        eps_std = e
    else:
        raise ContractError(f"unknown compensation mode {mode!r}")
    return PerturbationDraw(eps_mean=eps_mean, eps_std=eps_std, mode=mode)


def _as_bc11(x: T.DiffArray, b: int, c: int) -> T.DiffArray:
    """Reshape a (B, C) or (C,) statistic so it broadcasts over (B, C, H, W)."""
    if x.shape == (b, c):
        return T.reshape(x, (b, c, 1, 1))
    if x.shape == (c,):
        return T.reshape(x, (1, c, 1, 1))
    raise ShapeError(f"statistic shape {x.shape} does not match map "
                     f"batch {b} / channels {c}")


def compensate(feat: T.DiffArray, stats, draw: PerturbationDraw,
               cfg: CompensationConfig) -> T.DiffArray:
    """Apply one compensation step to a (B, C, H, W) map.

    stats is a LayerStats for this exact map; gradients flow through both
    the map and the statistics, so the network feels how its own feature
    distribution shifts under the jitter.
    """
    if feat.ndim != 4:
        raise ShapeError(f"compensate needs a 4-d map, got {feat.shape}")
    b, c, _, _ = feat.shape
    if stats.instance_mean.shape != (b, c):
        raise ShapeError(
            f"stats shape {stats.instance_mean.shape} does not match map "
            f"({b}, {c})")
    if draw.mode == PER_ELEMENT and np.shape(draw.eps_mean) != (b, c):
        raise ShapeError(
            f"perturbation shape {np.shape(draw.eps_mean)} does not match "
            f"map ({b}, {c})")

    if cfg.use_batch_stats:
        center, scale = stats.mean_of_means, stats.mean_of_stds
    else:
        center, scale = stats.instance_mean, stats.instance_std

    eps_m = T.constant(draw.eps_mean)
    eps_s = T.constant(draw.eps_std)
    jittered_scale = T.add(scale, T.mul(eps_s, stats.std_of_stds))
    jittered_shift = T.add(center, T.mul(eps_m, stats.std_of_means))

    normalized = T.div(T.sub(feat, _as_bc11(center, b, c)),
                       T.add(_as_bc11(scale, b, c), T.constant(EPS_DIV)))
    return T.add(T.mul(_as_bc11(jittered_scale, b, c), normalized),
                 _as_bc11(jittered_shift, b, c))


def forward_with_compensation(x: T.DiffArray, net, cfg: CompensationConfig,
                              mode: str, seed: int, epoch: int,
                              batch_index: int) -> T.DiffArray:
    """Run a network's backbone, compensating the enabled layers.

    mode is "train" or "eval".  In eval mode (unless apply_in_eval is
    set) no statistics are computed and no noise is drawn, so the result
    is bitwise identical to the plain forward pass.  Returns the flat
    (B, feature_dim) activations that feed the heads.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    apply_noise = (mode == "train") or cfg.apply_in_eval

    h = x
    for k, block in enumerate(net.blocks, start=1):
        feat = block.apply(h)
        if apply_noise and k in cfg.enabled_layers:
            st = layer_stats(feat)
            bsz, ch = feat.shape[0], feat.shape[1]
            draw = draw_perturbation(bsz, ch, cfg.mode, seed, epoch,
                                     batch_index, k)
            feat = compensate(feat, st, draw, cfg)
        feat = T.relu(feat)
        h = block.post(feat)
    if h.ndim != 2:
        h = T.reshape(h, (h.shape[0], int(np.prod(h.shape[1:]))))
    return h
