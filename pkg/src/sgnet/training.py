"""Training protocol: heatmap MSE with intermediate supervision, RMSprop,
stepped learning rate, affine augmentation, and weight initialization.

The per-head loss is the batch mean over keypoints of the summed
per-pixel squared error; the training loss sums this over every stack's
head, giving each stack its own supervision signal.

Determinism contract: all per-sample augmentation randomness comes from a
stream seeded by (seed, epoch, sample index) and the epoch shuffle from
(seed, epoch), so batch assembly order cannot change results.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigurationError, DataError, NumericalError, UsageError
from .layers import BatchNorm2d, Conv2d
from .blocks import LearnablePerChannelGate, LearnableScalarGate
from .data import Sample
from .sgt import save_checkpoint
from .tensor import Tape, Tensor

PAPER_LR_INITIAL = 2.5e-4
PAPER_LR_FINAL = 1e-5
# stated endpoints with three drops; the per-drop split is 1/2.5, 1/5, 1/2
PAPER_DROP_FACTORS = (1 / 2.5, 1 / 5, 1 / 2)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    lr_initial: float = PAPER_LR_INITIAL
    lr_final: float = PAPER_LR_FINAL
    lr_drop_epochs: tuple = (22, 30, 45)
    weight_decay: float = 0.0
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    augment: bool = True
    rotation_max_deg: float = 30.0
    scale_min: float = 0.75
    scale_max: float = 1.25
    flip_prob: float = 0.5
    jitter_strength: float = 0.2
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not 0 <= self.lr_final <= self.lr_initial:
            raise ConfigurationError(
                f"need 0 <= lr_final <= lr_initial, got {self.lr_final} / {self.lr_initial}"
            )
        drops = tuple(int(e) for e in self.lr_drop_epochs)
        if list(drops) != sorted(set(drops)) or (drops and drops[0] < 1):
            raise ConfigurationError(f"lr_drop_epochs must be increasing and >= 1, got {drops}")
        object.__setattr__(self, "lr_drop_epochs", drops)
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigurationError(
                f"need 0 < scale_min <= scale_max, got {self.scale_min}/{self.scale_max}"
            )
        if self.rotation_max_deg < 0 or self.jitter_strength < 0 or self.sigma <= 0:
            raise ConfigurationError("rotation/jitter must be >= 0 and sigma > 0")


def lr_schedule(cfg: TrainConfig):
    """Per-epoch learning rates, non-increasing from lr_initial to lr_final.

    With three drops and the stated endpoints the split follows the known
    triple; any other drop count uses equal geometric factors so the
    endpoints still hold.
    """
    drops = cfg.lr_drop_epochs
    if not drops:
        factors = ()
    elif (len(drops) == 3 and np.isclose(cfg.lr_initial, PAPER_LR_INITIAL)
          and np.isclose(cfg.lr_final, PAPER_LR_FINAL)):
        factors = PAPER_DROP_FACTORS
    elif cfg.lr_final == cfg.lr_initial:
        # also keeps the all-zero schedule out of the 0/0 ratio below
        factors = (1.0,) * len(drops)
    else:
        ratio = (cfg.lr_final / cfg.lr_initial) ** (1.0 / len(drops))
        factors = (ratio,) * len(drops)
    lrs = []
    lr = cfg.lr_initial
    drop_at = dict(zip(drops, factors))
    for epoch in range(cfg.epochs):
        if epoch in drop_at:
            lr *= drop_at[epoch]
        lrs.append(lr)
    return lrs


def render_gt_heatmaps(sample: Sample, size: int, sigma: float = 1.0) -> np.ndarray:
    """(K, size, size) unnormalized Gaussians, peak 1; invisible -> zeros."""
    kps = np.asarray(sample.keypoints, dtype=np.float64)
    maps = np.zeros((kps.shape[0], size, size), dtype=np.float64)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    for k, (x, y, vis) in enumerate(kps):
        if vis <= 0:
            continue
        maps[k] = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))
    return maps


def mse_heatmap_loss(pred: Tensor, gt) -> Tensor:
    """Batch mean over keypoints of the per-map summed squared error."""
    if not isinstance(gt, Tensor):
        gt = Tensor(np.asarray(gt, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise UsageError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.ndim != 4:
        raise UsageError(f"heatmap sets must be (B,K,H,W), got {pred.shape}")
    diff = ops.sub(pred, gt)
    total = ops.sum_all(ops.mul(diff, diff))
    batch, keypoints = pred.shape[0], pred.shape[1]
    return ops.scale(total, 1.0 / (batch * keypoints))


def transform_keypoints(xy, theta_deg, scale_factor, center):
    """Rotate-scale (x,y) rows about center; pure coordinate math."""
    xy = np.asarray(xy, dtype=np.float64)
    theta = np.deg2rad(theta_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    dx = xy[..., 0] - center[0]
    dy = xy[..., 1] - center[1]
    out = np.empty_like(xy)
    out[..., 0] = scale_factor * (cos * dx - sin * dy) + center[0]
    out[..., 1] = scale_factor * (sin * dx + cos * dy) + center[1]
    return out


def warp_image_affine(image, theta_deg, scale_factor, fill=0.0):
    """Rotate-scale a (C,S,S) image about its center with bilinear sampling.

    Content at p moves to scale*R(theta)(p-c)+c, matching
    transform_keypoints; pixels pulled from outside read as fill.
    """
    channels, height, width = image.shape
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    theta = np.deg2rad(theta_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    # inverse map: undo rotation, undo scaling
    sx = (cos * dx + sin * dy) / scale_factor + cx
    sy = (-sin * dx + cos * dy) / scale_factor + cy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.full((channels, height, width), float(fill), dtype=image.dtype)
    acc = np.zeros((height, width), dtype=image.dtype)
    for c in range(channels):
        acc[:] = 0.0
        for oy, ox, w in (
            (0, 0, (1 - fx) * (1 - fy)),
            (0, 1, fx * (1 - fy)),
            (1, 0, (1 - fx) * fy),
            (1, 1, fx * fy),
        ):
            yy, xx = y0 + oy, x0 + ox
            valid = (yy >= 0) & (yy < height) & (xx >= 0) & (xx < width)
            acc += np.where(valid, image[c, yy.clip(0, height - 1), xx.clip(0, width - 1)] * w,
                            fill * w)
        out[c] = acc
    return out


def augment(sample: Sample, rng, cfg: TrainConfig, flip_pairs=()) -> Sample:
    """Flip / rotate-scale / color-jitter one sample.

    Draw order is fixed (flip, rotation, scale, jitter) so the stream
    consumed per sample never depends on which transforms fire. Keypoints
    pushed outside the heatmap grid become invisible, never clamped.
    """
    flip_u = rng.uniform(0.0, 1.0)
    theta = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
    scale_factor = rng.uniform(cfg.scale_min, cfg.scale_max)
    jitter = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength, size=3)

    image = sample.image
    kps = sample.keypoints.copy()
    hm_size = image.shape[1] // 4

    if flip_u < cfg.flip_prob:
        image = image[:, :, ::-1]
        kps[:, 0] = (hm_size - 1) - kps[:, 0]
        for i, j in flip_pairs:
            kps[[i, j]] = kps[[j, i]]
    if theta != 0.0 or scale_factor != 1.0:
        image = warp_image_affine(np.ascontiguousarray(image), theta, scale_factor)
        center = ((hm_size - 1) / 2.0, (hm_size - 1) / 2.0)
        kps[:, :2] = transform_keypoints(kps[:, :2], theta, scale_factor, center)
    else:
        image = np.ascontiguousarray(image)

    inside = ((kps[:, 0] >= 0) & (kps[:, 0] <= hm_size - 1)
              & (kps[:, 1] >= 0) & (kps[:, 1] <= hm_size - 1))
    kps[:, 2] = np.where(inside, kps[:, 2], 0.0)

    if cfg.jitter_strength > 0:
        image = np.clip(image * jitter[:, None, None], 0.0, 1.0)
    return Sample(image, kps, sample.normalizer)


def init_network(network, rng) -> None:
    """Conv weights U(-b,b) with b=1/sqrt(fan_in); biases 0; BN identity;
    every gate alpha exactly 0. Traversal order is registration order, so
    equal seeds give bit-identical networks."""

    def visit(layer):
        if isinstance(layer, Conv2d):
            bound = 1.0 / np.sqrt(layer.fan_in)
            draw = rng.uniform(-bound, bound, size=layer.weight.shape)
            layer.weight.data[...] = draw
            if layer.bias is not None:
                layer.bias.data[...] = 0.0
        elif isinstance(layer, BatchNorm2d):
            layer.gamma.data[...] = 1.0
            layer.beta.data[...] = 0.0
            layer.running_mean[...] = 0.0
            layer.running_var[...] = 1.0
        elif isinstance(layer, (LearnableScalarGate, LearnablePerChannelGate)):
            layer.alpha.data[...] = 0.0
        for child in layer._children.values():
            visit(child)

    visit(network)


def rmsprop_step(params, grads, state, lr, rho=0.99, eps=1e-8, weight_decay=0.0):
    """s <- rho*s + (1-rho)*g^2 ; p <- p - lr*g/(sqrt(s)+eps). In place."""
    for param, grad, accum in zip(params, grads, state):
        if grad is None:
            continue
        if weight_decay:
            grad = grad + weight_decay * param.data
        accum *= rho
        accum += (1.0 - rho) * grad * grad
        param.data -= lr * grad / (np.sqrt(accum) + eps)


class RMSprop:
    def __init__(self, params, rho=0.99, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = [np.zeros_like(p.data) for p in self.params]
        self.rho = rho
        self.eps = eps
        self.weight_decay = weight_decay

    def step(self, lr):
        grads = [p.grad for p in self.params]
        rmsprop_step(self.params, grads, self.state, lr,
                     self.rho, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class LogRow:
    epoch: int
    stack: int
    loss: float
    lr: float
    val_pckh: float


class TrainLog:
    """Per-(epoch, stack) rows; serializes to CSV deterministically."""

    header = "epoch,stack,loss,lr,val_pckh"

    def __init__(self, rows=None):
        self.rows = list(rows) if rows else []

    def add(self, epoch, stack, loss, lr, val_pckh):
        self.rows.append(LogRow(int(epoch), int(stack), float(loss),
                                float(lr), float(val_pckh)))

    @property
    def epochs(self):
        return 1 + max((r.epoch for r in self.rows), default=-1)

    @property
    def final_val_pckh(self):
        if not self.rows:
            raise UsageError("empty training log")
        return self.rows[-1].val_pckh

    def to_csv(self) -> str:
        lines = [self.header]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.stack},{r.loss!r},{r.lr!r},{r.val_pckh!r}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def _assemble_batch(dataset, indices, cfg, epoch, hm_size, dtype, with_augment):
    images, targets = [], []
    for idx in indices:
        sample = dataset[int(idx)]
        if with_augment:
            rng = np.random.default_rng([cfg.seed, epoch, int(idx)])
            sample = augment(sample, rng, cfg, dataset.flip_pairs)
        images.append(sample.image)
        targets.append(render_gt_heatmaps(sample, hm_size, cfg.sigma))
    x = np.stack(images).astype(dtype, copy=False)
    gt = np.stack(targets).astype(dtype, copy=False)
    return x, gt


def train(network, dataset, cfg: TrainConfig, val_dataset,
          out_dir=None, log_fn=None, checkpoint_meta=None) -> TrainLog:
    """Run the full protocol; returns the log, writes checkpoints if out_dir.

    Checkpoints land at every lr-drop epoch and at the end. A non-finite
    loss aborts by replaying the offending batch with per-op finite checks
    so the error names the first op that produced the bad values.
    """
    from .evaluation import evaluate_network

    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    if dataset.keypoints != network.cfg.keypoints:
        raise ConfigurationError(
            f"dataset has {dataset.keypoints} keypoints, network expects "
            f"{network.cfg.keypoints}"
        )
    if dataset.image_size != network.cfg.input_size:
        raise ConfigurationError(
            f"dataset images are {dataset.image_size}px, network expects "
            f"{network.cfg.input_size}px"
        )
    # train-mode batchnorm needs >= 2 values per channel; at the innermost
    # resolution that is batch * (heatmap/2^DEPTH)^2, so a trailing batch of
    # size 1 would abort mid-epoch on small inputs -- catch it up front
    from .network import DEPTH

    remainder = len(dataset) % cfg.batch_size
    smallest = min(cfg.batch_size, len(dataset)) if remainder == 0 else remainder
    bottleneck_res = network.cfg.heatmap_size // (1 << DEPTH)
    if smallest * bottleneck_res * bottleneck_res < 2:
        raise ConfigurationError(
            f"a batch of {smallest} sample(s) leaves batchnorm with a single "
            f"value per channel at the {bottleneck_res}x{bottleneck_res} "
            f"bottleneck; adjust batch_size or dataset size"
        )

    hm_size = network.cfg.heatmap_size
    dtype = network.cfg.np_dtype
    stacks = network.cfg.stacks
    optimizer = RMSprop(network.params(), cfg.rmsprop_rho, cfg.rmsprop_eps,
                        cfg.weight_decay)
    lrs = lr_schedule(cfg)
    log = TrainLog()

    for epoch in range(cfg.epochs):
        network.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
        loss_sums = np.zeros(stacks)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            x, gt = _assemble_batch(dataset, chunk, cfg, epoch, hm_size, dtype,
                                    cfg.augment)
            with Tape() as tape:
                outputs = network(Tensor(x))
                losses = [mse_heatmap_loss(out, Tensor(gt)) for out in outputs]
                total = losses[0]
                for extra in losses[1:]:
                    total = ops.add(total, extra)
                if not np.isfinite(total.data):
                    _hunt_nan(network, x, gt)
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} (origin op not identified)"
                    )
                tape.backward(total)
            optimizer.step(lrs[epoch])
            optimizer.zero_grad()
            loss_sums += [ls.item() for ls in losses]
            n_batches += 1

        network.eval()
        report = evaluate_network(network, val_dataset, batch_size=cfg.batch_size)
        for stack_idx in range(stacks):
            log.add(epoch, stack_idx, loss_sums[stack_idx] / n_batches,
                    lrs[epoch], report.mean_pckh)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch:3d}  lr {lrs[epoch]:.6g}  "
                f"loss {loss_sums[-1] / n_batches:.6f}  val_pckh {report.mean_pckh:.4f}"
            )
        if out_dir is not None and epoch in cfg.lr_drop_epochs:
            _save(network, os.path.join(out_dir, f"checkpoint_epoch{epoch:03d}.sgt"),
                  checkpoint_meta)

    if out_dir is not None:
        _save(network, os.path.join(out_dir, "checkpoint_final.sgt"), checkpoint_meta)
    return log


def _save(network, path, meta):
    save_checkpoint(path, network.state_arrays(), meta=meta)


def _hunt_nan(network, x, gt):
    """Replay a bad batch with finite checks on; raises naming the op."""
    network.zero_grad()
    with np.errstate(all="ignore"), Tape(check_finite=True) as tape:
        outputs = network(Tensor(x))
        losses = [mse_heatmap_loss(out, Tensor(gt)) for out in outputs]
        total = losses[0]
        for extra in losses[1:]:
            total = ops.add(total, extra)
        tape.backward(total)
