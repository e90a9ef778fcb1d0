"""Optimization: photometric + TV loss, Adam with cyclic learning rates.

Rays are drawn uniformly over all training frames and pixels each step, so
time and space are sampled jointly at random; there is no frame ordering or
temporal curriculum.  One Adam step per parameter group per iteration:
coefficient tensors and basis MLPs keep separate moment buffers and
learning-rate schedules.

Determinism: the step-i batch comes from a generator seeded by (seed, i),
so an interrupted run resumed from a checkpoint replays the identical ray
stream.  Gradient reduction over ray chunks is ordered by chunk index,
which makes results independent of the worker-pool size.
"""

import csv
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .basis import BasisKind, highpass_penalty, highpass_penalty_grad
from .errors import ContractError, TrainingError
from .field import tv_penalty, tv_penalty_grad
from .model import ModelGradients, SceneModel
from .render import SamplingSpec, backward_render, render_rays, sample_depths

CHUNK_RAYS = 128  # fixed reduction granularity, independent of thread count

LOG_HEADER = ("iter", "photometric", "tv_density", "tv_color", "highpass",
              "total", "lr_tensor", "lr_mlp", "seconds")


@dataclass
class TrainConfig:
    lambda1: float = 0.1          # TV weight, density
    lambda2: float = 0.1          # TV weight, color
    lambda_hp: float = 0.0        # optional high-pass trajectory penalty
    batch_rays: int = 256
    iters: int = 5000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    lr_tensor_max: float = 0.02
    lr_mlp_max: float = 0.001
    lr_cycle_period: int = 2000
    lr_floor_ratio: float = 0.1
    grad_clip: float = 0.0        # global-norm clip; 0 disables
    hp_samples: int = 64

    def __post_init__(self):
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ContractError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ContractError("Adam eps must be positive")
        if not 0.0 < self.lr_floor_ratio <= 1.0:
            raise ContractError("lr_floor_ratio must be in (0, 1]")
        if min(self.lambda1, self.lambda2, self.lambda_hp) < 0:
            raise ContractError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lambda1", "lambda2", "lambda_hp", "batch_rays", "iters", "seed",
            "adam_beta1", "adam_beta2", "adam_eps", "lr_tensor_max", "lr_mlp_max",
            "lr_cycle_period", "lr_floor_ratio", "grad_clip", "hp_samples")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class LossBreakdown:
    photometric: float
    tv_density: float
    tv_color: float
    highpass: float
    total: float

    def as_tuple(self):
        return (self.photometric, self.tv_density, self.tv_color,
                self.highpass, self.total)


@dataclass
class AdamState:
    """First/second moment buffers congruent with one parameter group."""

    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def photometric_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean over rays of the squared L2 distance between rgb triples."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"batch shapes differ: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def cyclic_lr(iteration: int, lr_max: float, period: int, floor_ratio: float) -> float:
    """Triangular wave: lr_max at cycle start, lr_max*floor_ratio at mid-cycle."""
    if period < 2:
        raise ContractError("cycle period must be >= 2")
    x = (iteration % period) / period
    tri = 1.0 - 2.0 * x if x <= 0.5 else 2.0 * x - 1.0
    return lr_max * (floor_ratio + (1.0 - floor_ratio) * tri)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient in Adam update")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _chunk_forward_backward(model, origins, dirs, times, depths, gt, spec, n_batch):
    """Worker unit: render a ray chunk, backprop its photometric term."""
    grads = model.new_gradients()
    pixels, _, cache = render_rays(model, origins, dirs, times, spec,
                                   depths=depths, want_cache=True)
    diff = pixels - gt
    sq = float(np.sum(diff * diff))
    backward_render(model, grads, cache, (2.0 / n_batch) * diff)
    return sq, grads


def loss_and_grads(model: SceneModel, origins, dirs, times, gt,
                   spec: SamplingSpec, config: TrainConfig, rng=None,
                   threads: int = 1):
    """Total loss and its exact gradients for one ray batch."""
    n_batch = origins.shape[0]
    depths = sample_depths(n_batch, spec, rng) if spec.perturb else \
        sample_depths(n_batch, spec)

    chunks = [(lo, min(lo + CHUNK_RAYS, n_batch))
              for lo in range(0, n_batch, CHUNK_RAYS)]
    run = lambda lo, hi: _chunk_forward_backward(
        model, origins[lo:hi], dirs[lo:hi], times[lo:hi], depths[lo:hi],
        gt[lo:hi], spec, n_batch)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: run(*c), chunks))
    else:
        results = [run(*c) for c in chunks]

    grads = model.new_gradients()
    sq_sum = 0.0
    for sq, g in results:  # ordered reduction
        sq_sum += sq
        grads.add_(g)
    photometric = sq_sum / n_batch

    tv_d = tv_penalty(model.density_field)
    tv_c = tv_penalty(model.color_field)
    tv_penalty_grad(model.density_field, grads.density, config.lambda1)
    tv_penalty_grad(model.color_field, grads.color, config.lambda2)

    hp = 0.0
    if config.lambda_hp > 0.0:
        ts = np.linspace(0.0, 1.0, config.hp_samples)
        for basis, bgrads in ((model.density_basis, grads.density_basis),
                              (model.color_basis, grads.color_basis)):
            samples, cache = basis.forward_with_cache(ts)
            hp += highpass_penalty(samples)
            if basis.kind == BasisKind.NEURAL:
                up = config.lambda_hp * highpass_penalty_grad(samples)
                for (gw, gb), (dw, db) in zip(bgrads, basis.backward(cache, up)):
                    gw += dw
                    gb += db

    total = (photometric + config.lambda1 * tv_d + config.lambda2 * tv_c
             + config.lambda_hp * hp)
    return LossBreakdown(photometric, tv_d, tv_c, hp, total), grads


@dataclass
class Optimizer:
    """Two Adam groups: coefficient tensors and basis MLP parameters."""

    tensor_state: AdamState
    mlp_state: AdamState

    @classmethod
    def for_model(cls, model: SceneModel) -> "Optimizer":
        return cls(AdamState.for_params(_tensor_params(model)),
                   AdamState.for_params(_mlp_params(model)))


def _tensor_params(model):
    return list(model.density_field.tensors()) + list(model.color_field.tensors())


def _mlp_params(model):
    out = []
    for basis in (model.density_basis, model.color_basis):
        for _, arr in basis.parameters():
            out.append(arr)
    return out


def _tensor_grads(grads: ModelGradients):
    return list(grads.density.tensors()) + list(grads.color.tensors())


def _mlp_grads(grads: ModelGradients):
    out = []
    for pair_list in (grads.density_basis, grads.color_basis):
        for dw, db in pair_list:
            out.extend((dw, db))
    return out


def sample_ray_batch(dataset, rng, batch_rays: int, split=None):
    """Uniform (frame, pixel) draws; returns origins, dirs, times, gt colors."""
    frame_ids = np.asarray(dataset.train_idx if split is None else split)
    h, w = dataset.images.shape[1:3]
    pick_f = frame_ids[rng.integers(0, len(frame_ids), size=batch_rays)]
    pick_p = rng.integers(0, h * w, size=batch_rays)

    origins = np.empty((batch_rays, 3))
    dirs = np.empty((batch_rays, 3))
    times = dataset.times[pick_f]
    gt = dataset.images.reshape(len(dataset.images), -1, 3)[pick_f, pick_p].astype(np.float64)
    rows = (pick_p // w).astype(np.float64)
    cols = (pick_p % w).astype(np.float64)
    from .render import _pixel_directions
    for f in np.unique(pick_f):
        sel = pick_f == f
        cam = dataset.cameras[f]
        dirs[sel] = _pixel_directions(cam, rows[sel], cols[sel])
        origins[sel] = cam.c2w[:3, 3]
    return origins, dirs, times, gt


def train_step(model: SceneModel, dataset, config: TrainConfig,
               opt: Optimizer, iteration: int, spec: SamplingSpec,
               threads: int = 1) -> LossBreakdown:
    """One optimization step; the rng stream is a pure function of (seed, iter)."""
    rng = np.random.default_rng([config.seed, iteration])
    origins, dirs, times, gt = sample_ray_batch(dataset, rng, config.batch_rays)
    breakdown, grads = loss_and_grads(model, origins, dirs, times, gt, spec,
                                      config, rng=rng, threads=threads)
    if not np.isfinite(breakdown.total):
        raise TrainingError(f"non-finite loss at iteration {iteration}: "
                            f"{breakdown}", iteration=iteration)
    if config.grad_clip > 0.0:
        norm = grads.global_norm()
        if norm > config.grad_clip:
            grads.scale_(config.grad_clip / norm)

    lr_t = cyclic_lr(iteration, config.lr_tensor_max, config.lr_cycle_period,
                     config.lr_floor_ratio)
    lr_m = cyclic_lr(iteration, config.lr_mlp_max, config.lr_cycle_period,
                     config.lr_floor_ratio)
    try:
        adam_step(_tensor_params(model), _tensor_grads(grads), opt.tensor_state,
                  lr_t, config.adam_beta1, config.adam_beta2, config.adam_eps)
        adam_step(_mlp_params(model), _mlp_grads(grads), opt.mlp_state,
                  lr_m, config.adam_beta1, config.adam_beta2, config.adam_eps)
    except TrainingError as err:
        raise TrainingError(f"{err} (iteration {iteration})",
                            iteration=iteration) from None
    return breakdown


def train_loop(model: SceneModel, dataset, config: TrainConfig,
               spec: SamplingSpec, out_dir=None, threads: int = 1,
               opt: Optimizer = None, start_iter: int = 0,
               log_every: int = 0, checkpoint_path=None):
    """Run config.iters steps; returns (model, opt, log_rows).

    Writes log.csv under out_dir (one row per iteration) and a checkpoint at
    the end when paths are given.  Resuming: pass the loaded optimizer plus
    start_iter and the same seed; the result is bit-identical to an
    uninterrupted run because training state lives on the float32 lattice.
    """
    import os
    if opt is None:
        opt = Optimizer.for_model(model)
    log_rows = []
    writer = None
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if start_iter > 0 else "w"
        log_file = open(os.path.join(out_dir, "log.csv"), mode, newline="")
        writer = csv.writer(log_file)
        if start_iter == 0:
            writer.writerow(LOG_HEADER)
    try:
        for it in range(start_iter, config.iters):
            t0 = _time.perf_counter()
            breakdown = train_step(model, dataset, config, opt, it, spec, threads)
            dt = _time.perf_counter() - t0
            lr_t = cyclic_lr(it, config.lr_tensor_max, config.lr_cycle_period,
                             config.lr_floor_ratio)
            lr_m = cyclic_lr(it, config.lr_mlp_max, config.lr_cycle_period,
                             config.lr_floor_ratio)
            row = (it, *breakdown.as_tuple(), lr_t, lr_m, dt)
            log_rows.append(row)
            if writer is not None:
                writer.writerow([f"{v:.10g}" if isinstance(v, float) else v
                                 for v in row])
            if log_every and (it % log_every == 0 or it == config.iters - 1):
                print(f"iter {it:6d}  photo {breakdown.photometric:.5f}  "
                      f"tv_d {breakdown.tv_density:.5f}  tv_c {breakdown.tv_color:.5f}  "
                      f"hp {breakdown.highpass:.5f}  total {breakdown.total:.5f}  "
                      f"lr_t {lr_t:.4g}  ({dt*1e3:.0f} ms)", flush=True)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(checkpoint_path, model, train_config=config, opt=opt,
                        iteration=config.iters)
    return model, opt, log_rows
