"""Metrics and cost accounting: heatmap decoding, PCKh, parameter/FLOP
tallies, gate-value histograms, and feature-distribution statistics.

FLOPs count only convolution multiply-accumulates (batchnorm, activations
and elementwise work are ignored, the usual convention for conv nets) and
are reported under both the MAC=1 and MAC=2 conventions because either
may be meant when a paper quotes a FLOP figure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .network import DEPTH, NetworkConfig
from .tensor import Tensor


def decode_heatmaps(maps, refine=True):
    """(B,K,H,W) heatmaps -> (B,K,2) coordinates as (x, y).

    Argmax per map, ties to the smallest row then column (row-major scan
    order), then an optional quarter-pixel shift along each axis toward
    the larger of the two in-bounds neighbors; edge peaks and tied
    neighbors get no shift.
    """
    if isinstance(maps, Tensor):
        maps = maps.data
    maps = np.asarray(maps)
    if maps.ndim != 4:
        raise UsageError(f"heatmaps must be (B,K,H,W), got {maps.shape}")
    b, k, h, w = maps.shape
    flat_idx = maps.reshape(b, k, h * w).argmax(axis=-1)
    row, col = np.divmod(flat_idx, w)
    coords = np.stack([col, row], axis=-1).astype(np.float64)
    if not refine:
        return coords

    bi = np.arange(b)[:, None]
    ki = np.arange(k)[None, :]
    left = maps[bi, ki, row, np.clip(col - 1, 0, w - 1)]
    right = maps[bi, ki, row, np.clip(col + 1, 0, w - 1)]
    x_ok = (col - 1 >= 0) & (col + 1 <= w - 1)
    coords[..., 0] += np.where(x_ok, 0.25 * np.sign(right - left), 0.0)
    up = maps[bi, ki, np.clip(row - 1, 0, h - 1), col]
    down = maps[bi, ki, np.clip(row + 1, 0, h - 1), col]
    y_ok = (row - 1 >= 0) & (row + 1 <= h - 1)
    coords[..., 1] += np.where(y_ok, 0.25 * np.sign(down - up), 0.0)
    return coords


@dataclass
class MetricReport:
    per_keypoint: np.ndarray
    counts: np.ndarray
    mean_pckh: float
    tau: float

    def to_csv(self) -> str:
        lines = ["keypoint,visible_count,pckh"]
        for idx, (count, value) in enumerate(zip(self.counts, self.per_keypoint)):
            lines.append(f"{idx},{int(count)},{float(value)!r}")
        lines.append(f"mean,{int(self.counts.sum())},{float(self.mean_pckh)!r}")
        return "\n".join(lines) + "\n"


def pckh(pred_coords, gt_keypoints, normalizers, tau=0.5) -> MetricReport:
    """Fraction of visible keypoints with ||pred-gt|| <= tau * normalizer.

    The boundary case counts as correct. Mean is weighted by per-keypoint
    visible counts, i.e. total correct over total visible.
    """
    pred = np.asarray(pred_coords, dtype=np.float64)
    gt = np.asarray(gt_keypoints, dtype=np.float64)
    norms = np.asarray(normalizers, dtype=np.float64)
    if pred.ndim != 3 or pred.shape[2] != 2:
        raise UsageError(f"pred_coords must be (B,K,2), got {pred.shape}")
    if gt.shape != (pred.shape[0], pred.shape[1], 3):
        raise UsageError(f"gt must be (B,K,3), got {gt.shape}")
    if norms.shape != (pred.shape[0],):
        raise UsageError(f"normalizers must be (B,), got {norms.shape}")
    if tau <= 0:
        raise UsageError(f"tau must be positive, got {tau}")
    if np.any(norms <= 0):
        raise UsageError("normalizers must be strictly positive")

    visible = gt[:, :, 2] > 0
    if not visible.any():
        raise UsageError("no visible keypoints to evaluate")
    dist = np.hypot(pred[:, :, 0] - gt[:, :, 0], pred[:, :, 1] - gt[:, :, 1])
    correct = (dist <= tau * norms[:, None]) & visible
    counts = visible.sum(axis=0)
    hits = correct.sum(axis=0)
    per_keypoint = np.where(counts > 0, hits / np.maximum(counts, 1), 0.0)
    mean = float(hits.sum() / counts.sum())
    return MetricReport(per_keypoint, counts, mean, tau)


def evaluate_network(network, dataset, batch_size=8, tau=0.5, refine=True) -> MetricReport:
    """PCKh of the final stack's decoded heatmaps over a dataset (eval mode)."""
    was_training = network.training
    network.eval()
    preds = []
    dtype = network.cfg.np_dtype
    try:
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
            x = np.stack([s.image for s in batch]).astype(dtype, copy=False)
            outputs = network(Tensor(x))
            preds.append(decode_heatmaps(outputs[-1].data, refine=refine))
    finally:
        network.train(was_training)
    pred_coords = np.concatenate(preds, axis=0)
    gt = np.stack([s.keypoints for s in dataset.samples])
    norms = np.asarray([s.normalizer for s in dataset.samples])
    return pckh(pred_coords, gt, norms, tau)


@dataclass
class CostReport:
    """Exact parameter and conv-FLOP tally, broken down by network part."""

    input_size: int
    batch: int
    parts: dict = field(default_factory=dict)

    def add(self, part, params=0, flops=0):
        entry = self.parts.setdefault(part, {"params": 0, "flops_mac1": 0})
        entry["params"] += int(params)
        entry["flops_mac1"] += int(flops)

    @property
    def total_params(self):
        return sum(entry["params"] for entry in self.parts.values())

    @property
    def total_flops_mac1(self):
        return sum(entry["flops_mac1"] for entry in self.parts.values())

    @property
    def total_flops_mac2(self):
        return 2 * self.total_flops_mac1

    def to_csv(self) -> str:
        lines = ["part,params,flops_mac1,flops_mac2"]
        for part, entry in self.parts.items():
            lines.append(
                f"{part},{entry['params']},{entry['flops_mac1']},{2 * entry['flops_mac1']}"
            )
        lines.append(f"total,{self.total_params},{self.total_flops_mac1},{self.total_flops_mac2}")
        return "\n".join(lines) + "\n"


def _conv_cost(report, part, cin, cout, k, out_hw, groups=1, bias=True, batch=1):
    weights = cout * (cin // groups) * k * k
    params = weights + (cout if bias else 0)
    report.add(part, params=params, flops=weights * out_hw * out_hw * batch)


def _block_cost(report, part, cfg, res):
    """One gated block at spatial resolution res."""
    width = cfg.width
    half, quarter = width // 2, width // 4
    # branch: three BN -> ReLU -> 3x3 conv stages, no bias
    report.add(part, params=2 * width)
    _conv_cost(report, part, width, half, 3, res, bias=False, batch=report.batch)
    report.add(part, params=2 * half)
    _conv_cost(report, part, half, quarter, 3, res, bias=False, batch=report.batch)
    report.add(part, params=2 * quarter)
    _conv_cost(report, part, quarter, quarter, 3, res, bias=False, batch=report.batch)
    # gate
    if cfg.gate_mode == "learnable_scalar":
        report.add(part, params=1)
    elif cfg.gate_mode == "learnable_per_channel":
        report.add(part, params=width)
    elif cfg.gate_mode == "hard_sigmoid":
        _conv_cost(report, part, width, width, 1, res, bias=True, batch=report.batch)
    # fixed: no parameters


def count_costs(cfg: NetworkConfig, batch: int = 1) -> CostReport:
    """Symbolic cost tally mirroring the network structure, no tensors built.

    Parameter counts are exact (the acceptance suite pins them against an
    enumeration over a real network); FLOPs are conv MACs at the declared
    input size.
    """
    report = CostReport(input_size=cfg.input_size, batch=batch)
    half_res = cfg.input_size // 2
    base_res = cfg.heatmap_size

    _conv_cost(report, "stem", cfg.in_channels, cfg.width, 7, half_res,
               bias=True, batch=batch)
    _block_cost(report, "stem", cfg, half_res)
    _block_cost(report, "stem", cfg, base_res)

    for stack in range(cfg.stacks):
        part = f"stack_{stack}"
        res = base_res
        for _ in range(DEPTH):
            _block_cost(report, part, cfg, res)  # encoder
            # skip transform: BN -> ReLU -> 1x1 conv with bias
            report.add(part, params=2 * cfg.width)
            _conv_cost(report, part, cfg.width, cfg.width, 1, res, bias=True, batch=batch)
            res //= 2
        _block_cost(report, part, cfg, res)  # bottleneck
        for _ in range(DEPTH):
            res *= 2
            if cfg.aggregation != "sum":
                groups = 2 if cfg.aggregation == "concat_grouped" else 1
                _conv_cost(report, part, 2 * cfg.width, cfg.width, 3, res,
                           groups=groups, bias=True, batch=batch)
            _block_cost(report, part, cfg, res)  # decoder

    for _ in range(cfg.stacks):
        _conv_cost(report, "heads", cfg.width, cfg.keypoints, 1, base_res,
                   bias=True, batch=batch)
    for _ in range(cfg.stacks - 1):
        _conv_cost(report, "remaps", cfg.width, cfg.width, 1, base_res,
                   bias=True, batch=batch)
        _conv_cost(report, "remaps", cfg.keypoints, cfg.width, 1, base_res,
                   bias=True, batch=batch)
    return report


def alpha_histogram(network, bins=64, limit=1.0):
    """Histogram of all gate values across blocks; CSV-ready rows."""
    values = np.concatenate([snap["values"].ravel()
                             for snap in network.alpha_snapshot()])
    edges = np.linspace(-limit, limit, bins + 1)
    counts, _ = np.histogram(np.clip(values, -limit, limit), bins=edges)
    rows = ["bin_low,bin_high,count"]
    for i in range(bins):
        rows.append(f"{float(edges[i])!r},{float(edges[i + 1])!r},{int(counts[i])}")
    return values, "\n".join(rows) + "\n"


def feature_stats(network, probe_batch, block_names=None, bins=64):
    """Per-block histograms of the four gated-block signals.

    Signals: 'branch' (post-concat branch output), 'pre_gate' (skip before
    scaling), 'post_gate' (skip after scaling), 'output' (after the sum).
    All four share one symmetric bin range per block so mass near zero is
    comparable across signals.
    """
    blocks = network.gated_blocks()
    if block_names is not None:
        wanted = set(block_names)
        blocks = [(name, blk) for name, blk in blocks if name in wanted]
        missing = wanted - {name for name, _ in blocks}
        if missing:
            raise UsageError(f"unknown block names: {sorted(missing)}")
    for _, blk in blocks:
        blk.probe = {}
    was_training = network.training
    network.eval()
    try:
        if not isinstance(probe_batch, Tensor):
            probe_batch = Tensor(np.asarray(probe_batch, dtype=network.cfg.np_dtype))
        network(probe_batch)
    finally:
        network.train(was_training)

    results = []
    for name, blk in blocks:
        signals = blk.probe
        blk.probe = None
        peak = max(float(np.abs(arr).max()) for arr in signals.values())
        if peak == 0.0:
            peak = 1.0
        edges = np.linspace(-peak, peak, bins + 1)
        histos = {}
        for signal in ("branch", "pre_gate", "post_gate", "output"):
            counts, _ = np.histogram(signals[signal], bins=edges)
            histos[signal] = counts
        results.append({"block": name, "edges": edges, "histograms": histos})
    return results


def feature_stats_csv(results) -> str:
    lines = ["block_id,signal,bin_low,bin_high,count"]
    for entry in results:
        edges = entry["edges"]
        for signal, counts in entry["histograms"].items():
            for i, count in enumerate(counts):
                lines.append(
                    f"{entry['block']},{signal},{float(edges[i])!r},"
                    f"{float(edges[i + 1])!r},{int(count)}"
                )
    return "\n".join(lines) + "\n"
