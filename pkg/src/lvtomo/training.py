"""Co-training of voxel intensities and the weight encoder.

The voxel grid is an explicit trainable parameter block. Each batch predicts
pixel values as sum(w_i * v_i) over every ray's padded hit list, where w comes
from the encoder and v from gathering the current voxel values. The backward
rule for the two factors is deliberately asymmetric:

    g_v_i = g * w_i / max(||w||, 1e-12)     (per-ray norm; the modified rule)
    g_w_i = g * v_i                          (plain product rule)

With the normalization disabled both sides are the plain product rule, which
is the exact gradient of the loss and is what the finite-difference oracle
checks. Enabling it only rescales each ray's voxel gradients by 1/||w||, never
changing their sign.

Optimization is Adam with separate learning rates for the voxel and encoder
groups and a step decay applied to both every few epochs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import RayDataset
from .encoder import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    init_encoder,
)
from .errors import (
    IndexRangeError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .grids import VoxelGrid
from .metrics import MetricRecord

EPS_NORM = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the co-training loop."""

    lr_voxel: float = 0.01
    lr_encoder: float = 0.0005
    lr_decay_rate: float = 0.5
    lr_decay_every: int = 5
    epochs: int = 80
    batch_samples: int = 32
    rays_per_sample: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    encoder_variant: str = "no_bias_bn"
    encoder_channels: tuple[int, ...] = (6, 32, 1)
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    grad_norm_enabled: bool = True
    clamp_voxels: bool = True
    log_batches_first_epochs: int = 1
    compute_dtype: str = "float32"  # encoder forward/backward maps; all
    # reductions (loss, norms, voxel-gradient accumulation) stay float64

    def validate(self):
        if min(self.lr_voxel, self.lr_encoder) <= 0:
            raise ParameterError("learning rates must be > 0")
        if not (0 < self.lr_decay_rate <= 1):
            raise ParameterError("lr decay rate must be in (0, 1]")
        if self.lr_decay_every < 1 or self.epochs < 1:
            raise ParameterError("decay period and epochs must be >= 1")
        if self.batch_samples < 1 or self.rays_per_sample < 1:
            raise ParameterError("batch structure must be >= 1")
        if self.compute_dtype not in ("float32", "float64"):
            raise ParameterError(f"unknown compute dtype {self.compute_dtype!r}")

    @property
    def rays_per_batch(self) -> int:
        return self.batch_samples * self.rays_per_sample


@dataclass
class AdamBuffers:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def for_arrays(arrays) -> "AdamBuffers":
        return AdamBuffers([np.zeros_like(a) for a in arrays],
                           [np.zeros_like(a) for a in arrays])


@dataclass
class TrainState:
    """Everything that evolves during a run."""

    grid_dims: tuple[int, int, int]
    voxels: np.ndarray  # (n_voxels,) float64, x-fastest
    encoder: EncoderParams
    vox_adam: AdamBuffers
    enc_adam: AdamBuffers | None
    rng: np.random.Generator
    config: TrainConfig
    frozen_encoder: bool = False
    step: int = 0
    epoch: int = 0
    history: list[MetricRecord] = field(default_factory=list)

    def to_grid(self, template: VoxelGrid) -> VoxelGrid:
        values = self.voxels.reshape(self.grid_dims, order="F")
        return template.copy_with(values)


def init_state(grid_dims, config: TrainConfig, seed: int | None = None) -> TrainState:
    """Fresh state: voxels i.i.d. uniform [0, 0.1], encoder freshly initialized,
    Adam moments zero; bit-deterministic given the seed."""
    config.validate()
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    n_vox = int(np.prod(grid_dims))
    voxels = rng.uniform(0.0, 0.1, size=n_vox)
    encoder = init_encoder(
        rng,
        config.encoder_variant,
        list(config.encoder_channels),
        config.leaky_slope,
        config.bn_momentum,
        config.bn_eps,
    )
    return TrainState(
        grid_dims=tuple(int(d) for d in grid_dims),
        voxels=voxels,
        encoder=encoder,
        vox_adam=AdamBuffers.for_arrays([voxels]),
        enc_adam=AdamBuffers.for_arrays(encoder.trainable_arrays()),
        rng=rng,
        config=config,
    )


def voxel_pool(voxels: np.ndarray, indices: np.ndarray, n=None, N=None) -> np.ndarray:
    """Gather voxel values at the hit indices; padded slots (index < 0) give 0.

    Accepts a (N,) vector for one ray or (B, N) for a batch.
    """
    idx = np.asarray(indices)
    valid = idx >= 0
    if valid.any() and int(idx.max()) >= len(voxels):
        raise IndexRangeError(
            f"voxel index {int(idx.max())} outside grid of {len(voxels)} voxels"
        )
    return np.where(valid, voxels[np.where(valid, idx, 0)], 0.0)


def predict_pixel(w: np.ndarray, v: np.ndarray):
    """sum(w_i * v_i) in index order; batched along the leading axis."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.shape != v.shape:
        raise ShapeError(f"weight/value length mismatch: {w.shape} vs {v.shape}")
    return (w * v).sum(axis=-1)


def gradnorm_backward(g, w, v, grad_norm_enabled: bool, eps_norm: float = EPS_NORM):
    """Backward rule at the weighted sum; returns (g_v, g_w).

    The enabled mode is computed literally as the disabled gradients with g_v
    divided by max(||w||, eps_norm), so the two modes are bitwise identical up
    to that single scaling.
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    gg = g[..., None] if w.ndim > g.ndim else g
    g_v = gg * w
    g_w = gg * v
    if grad_norm_enabled:
        norm = np.sqrt((w * w).sum(axis=-1))
        scale = np.maximum(norm, eps_norm)
        g_v = g_v / (scale[..., None] if w.ndim > 1 else scale)
    return g_v, g_w


def lr_schedule(epoch: int, base_lr: float, rate: float = 0.5, every: int = 5) -> float:
    """Step decay: base * rate^floor(epoch / every)."""
    return base_lr * rate ** (epoch // every)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              buffers: AdamBuffers, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place. buffers.t must already count
    this step (caller increments once per optimizer step)."""
    t = buffers.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, buffers.m, buffers.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _batch_forward_backward(state: TrainState, feats, idx, n, targets):
    """One batch: returns (loss, residual-scaled upstream, w, v, cache)."""
    training_mode = not state.frozen_encoder
    w, cache = encoder_forward(
        state.encoder, feats, n, training=training_mode, want_cache=training_mode
    )
    v = voxel_pool(state.voxels, idx)
    pred = predict_pixel(w, v)
    resid = pred - targets
    loss = float(np.mean(resid * resid))
    g = 2.0 * resid / len(resid)
    return loss, g, w, v, cache


def _apply_batch(state: TrainState, dataset: RayDataset, chunk, lr_v, lr_e):
    cfg = state.config
    feats = dataset.features[chunk].astype(cfg.compute_dtype)
    idx = dataset.indices[chunk].astype(np.int64)
    n = dataset.n[chunk]
    targets = dataset.targets[chunk]

    loss, g, w, v, cache = _batch_forward_backward(state, feats, idx, n, targets)
    g_v, g_w = gradnorm_backward(g, w, v, cfg.grad_norm_enabled)
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss at step {state.step} (lr_voxel={lr_v:g}, "
            f"lr_encoder={lr_e:g}, |g_v|={np.abs(g_v).max():g}, "
            f"|g_w|={np.abs(g_w).max():g})"
        )

    valid = idx >= 0
    vox_grad = np.bincount(
        idx[valid], weights=g_v[valid], minlength=len(state.voxels)
    )
    state.vox_adam.t += 1
    adam_step([state.voxels], [vox_grad], state.vox_adam, lr_v,
              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    if not state.frozen_encoder:
        enc_grads = encoder_backward(state.encoder, cache, g_w)
        state.enc_adam.t += 1
        adam_step(
            state.encoder.trainable_arrays(),
            enc_grads.trainable_arrays(),
            state.enc_adam,
            lr_e,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        )
    if cfg.clamp_voxels:
        np.maximum(state.voxels, 0.0, out=state.voxels)
    state.step += 1
    return loss


def _similarity(state: TrainState, ground_truth) -> float | None:
    if ground_truth is None:
        return None
    truth = (
        ground_truth.flat_values().astype(np.float64)
        if isinstance(ground_truth, VoxelGrid)
        else np.asarray(ground_truth, dtype=np.float64).ravel()
    )
    num = float(np.dot(truth, state.voxels))
    den = float(np.linalg.norm(truth) * np.linalg.norm(state.voxels))
    return num / den if den > 0 else 0.0


def _run_loop(state: TrainState, dataset: RayDataset, ground_truth):
    cfg = state.config
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        lr_v = lr_schedule(epoch, cfg.lr_voxel, cfg.lr_decay_rate, cfg.lr_decay_every)
        lr_e = lr_schedule(epoch, cfg.lr_encoder, cfg.lr_decay_rate, cfg.lr_decay_every)
        perm = state.rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(perm), cfg.rays_per_batch):
            chunk = perm[lo : lo + cfg.rays_per_batch]
            loss = _apply_batch(state, dataset, chunk, lr_v, lr_e)
            losses.append(loss)
            if epoch < cfg.log_batches_first_epochs:
                state.history.append(
                    MetricRecord(
                        epoch, state.step, loss, _similarity(state, ground_truth),
                        lr_v, lr_e, 1e3 * (time.perf_counter() - t_start),
                    )
                )
        state.history.append(
            MetricRecord(
                epoch, state.step, float(np.mean(losses)),
                _similarity(state, ground_truth),
                lr_v, lr_e, 1e3 * (time.perf_counter() - t_start),
            )
        )
    return state, state.history


def train(dataset: RayDataset, config: TrainConfig, ground_truth=None,
          seed: int | None = None):
    """Co-train voxels and encoder on the dataset.

    Returns (state, history). Per-epoch records carry the mean batch loss and,
    when ground truth is supplied, the cosine similarity of the current voxels
    to it. The first log_batches_first_epochs epochs also log per batch.
    """
    state = init_state(_dims_of(dataset), config, seed)
    return _run_loop(state, dataset, ground_truth)


def transfer_train(frozen_encoder: EncoderParams, dataset: RayDataset,
                   config: TrainConfig, ground_truth=None,
                   seed: int | None = None):
    """Same loop with the encoder frozen: voxels are randomly re-initialized
    and are the only parameters updated; BN (if present) uses its running
    statistics, and no encoder scalar — running stats included — changes."""
    state = init_state(_dims_of(dataset), config, seed)
    state.encoder = frozen_encoder
    state.enc_adam = None
    state.frozen_encoder = True
    return _run_loop(state, dataset, ground_truth)


def _dims_of(dataset: RayDataset):
    if any(d < 1 for d in dataset.grid_dims):
        raise ParameterError(f"dataset carries invalid grid dims {dataset.grid_dims}")
    return dataset.grid_dims
