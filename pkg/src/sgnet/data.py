"""Synthetic stick-figure datasets.

Each sample is a jointed figure on a noisy background: torso, head disc,
two legs and two arms drawn as anti-aliased segments. Left-side limbs are
rendered brighter than right-side ones, so the two sides are visually
distinct and horizontal flips stay unambiguous without relabeling; the
dataset therefore declares an empty flip-pairing table (the pairing
mechanism itself lives in augment and is exercised with explicit tables
in tests).

Keypoints are stored in heatmap coordinates. With the network's 4x stem
reduction the two pixel grids align at pixel centers:

    x_hm = (x_img + 0.5) / 4 - 0.5

which maps image-grid mirror x -> S-1-x onto the same mirror law in the
heatmap grid, keeping flip augmentation exact in both frames.

On disk a dataset is a directory: meta.json, annotations.jsonl (one
record per sample: image path, keypoints [[x, y, v], ...], PCKh
normalizer), and images/NNNNNN.sgt tensors. Generation is deterministic:
sample i uses the RNG stream seeded by (seed, i).
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .sgt import load_tensor, save_tensor

JOINT_NAMES = ("head", "neck", "pelvis", "l_ankle", "r_ankle", "l_wrist", "r_wrist")
SKELETON = ((0, 1), (1, 2), (2, 3), (2, 4), (1, 5), (1, 6))
# left limbs bright, right limbs dim; torso/head in between
BONE_INTENSITY = (0.90, 0.80, 0.95, 0.55, 0.95, 0.55)
HEAD_DISC_INTENSITY = 0.90
CHANNEL_TINT = (1.00, 0.82, 0.62)

META_FORMAT = "sgnet-dataset-v1"


def image_to_heatmap_coords(xy_img, factor=4):
    """Pixel-center alignment between the image grid and the heatmap grid."""
    return (np.asarray(xy_img, dtype=np.float64) + 0.5) / factor - 0.5


def heatmap_to_image_coords(xy_hm, factor=4):
    return (np.asarray(xy_hm, dtype=np.float64) + 0.5) * factor - 0.5


@dataclass
class Sample:
    """One training instance; keypoints are (K,3) rows of (x, y, visible)."""

    image: np.ndarray
    keypoints: np.ndarray
    normalizer: float

    def copy(self):
        return Sample(self.image.copy(), self.keypoints.copy(), self.normalizer)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    num_samples: int
    image_size: int = 64
    keypoints: int = 4
    noise: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise DataError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.image_size < 8 or self.image_size % 4:
            raise DataError(f"image_size must be a multiple of 4 >= 8, got {self.image_size}")
        if not 1 <= self.keypoints <= len(JOINT_NAMES):
            raise DataError(
                f"keypoints must be in [1, {len(JOINT_NAMES)}], got {self.keypoints}"
            )
        if not 0.0 <= self.noise <= 0.5:
            raise DataError(f"noise must be in [0, 0.5], got {self.noise}")


def _draw_segment(canvas, a, b, intensity, thickness=1.8):
    """Max-blend an anti-aliased segment; coverage falls off linearly over 1px."""
    size = canvas.shape[0]
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    pax, pay = xs - a[0], ys - a[1]
    bax, bay = b[0] - a[0], b[1] - a[1]
    denom = bax * bax + bay * bay
    t = np.clip((pax * bax + pay * bay) / denom, 0.0, 1.0) if denom > 0 else 0.0
    dist = np.hypot(pax - t * bax, pay - t * bay)
    cover = np.clip(0.5 + (thickness / 2.0 - dist), 0.0, 1.0)
    np.maximum(canvas, cover * intensity, out=canvas)


def _draw_disc(canvas, center, radius, intensity):
    size = canvas.shape[0]
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.hypot(xs - center[0], ys - center[1])
    cover = np.clip(0.5 + (radius - dist), 0.0, 1.0)
    np.maximum(canvas, cover * intensity, out=canvas)


def _figure_joints(rng, size):
    """All 7 joints in image coordinates, guaranteed well inside the frame."""
    s = float(size)
    pelvis = np.array([rng.uniform(0.42, 0.58) * s, rng.uniform(0.55, 0.65) * s])
    torso_len = rng.uniform(0.22, 0.30) * s
    torso_ang = np.deg2rad(rng.uniform(-12.0, 12.0))
    neck = pelvis + torso_len * np.array([np.sin(torso_ang), -np.cos(torso_ang)])
    head_len = rng.uniform(0.08, 0.12) * s
    head_ang = np.deg2rad(rng.uniform(-15.0, 15.0))
    head = neck + head_len * np.array([np.sin(head_ang), -np.cos(head_ang)])

    def limb(origin, length, ang_deg):
        ang = np.deg2rad(ang_deg)
        return origin + length * np.array([np.cos(ang), np.sin(ang)])

    leg_l = limb(pelvis, rng.uniform(0.20, 0.28) * s, 90.0 + rng.uniform(12.0, 50.0))
    leg_r = limb(pelvis, rng.uniform(0.20, 0.28) * s, 90.0 - rng.uniform(12.0, 50.0))
    arm_l = limb(neck, rng.uniform(0.16, 0.26) * s, 90.0 + rng.uniform(25.0, 75.0))
    arm_r = limb(neck, rng.uniform(0.16, 0.26) * s, 90.0 - rng.uniform(25.0, 75.0))
    return np.stack([head, neck, pelvis, leg_l, leg_r, arm_l, arm_r])


def render_sample(spec: SyntheticSceneSpec, index: int) -> Sample:
    """Deterministic sample from (spec.seed, index); keypoints = first K joints."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    joints = _figure_joints(rng, size)

    strokes = np.zeros((size, size), dtype=np.float64)
    for (a, b), intensity in zip(SKELETON, BONE_INTENSITY):
        _draw_segment(strokes, joints[a], joints[b], intensity)
    _draw_disc(strokes, joints[0], 0.035 * size, HEAD_DISC_INTENSITY)

    noise = rng.uniform(0.0, spec.noise, size=(3, size, size))
    image = np.clip(strokes[None, :, :] * np.asarray(CHANNEL_TINT)[:, None, None] + noise,
                    0.0, 1.0)

    hm = image_to_heatmap_coords(joints)
    hm_max = size // 4 - 1
    if hm.min() < 0.0 or hm.max() > hm_max:
        raise DataError(f"sample {index}: joint left heatmap bounds {hm.min():.2f}..{hm.max():.2f}")
    keypoints = np.concatenate(
        [hm[: spec.keypoints], np.ones((spec.keypoints, 1))], axis=1)
    normalizer = float(np.hypot(*(hm[0] - hm[1])))
    return Sample(image, keypoints, normalizer)


@dataclass
class Dataset:
    samples: list
    image_size: int
    keypoints: int
    joint_names: tuple
    flip_pairs: tuple = ()
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index) -> Sample:
        return self.samples[index]

    @property
    def heatmap_size(self):
        return self.image_size // 4


def generate_dataset(spec: SyntheticSceneSpec, out_dir: str) -> None:
    """Write meta.json + annotations.jsonl + images/*.sgt under out_dir."""
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    meta = {
        "format": META_FORMAT,
        "num_samples": spec.num_samples,
        "image_size": spec.image_size,
        "heatmap_size": spec.image_size // 4,
        "keypoints": spec.keypoints,
        "joint_names": list(JOINT_NAMES[: spec.keypoints]),
        "flip_pairs": [],
        "skeleton": [list(edge) for edge in SKELETON],
        "noise": spec.noise,
        "seed": spec.seed,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "annotations.jsonl"), "w") as fh:
        for i in range(spec.num_samples):
            sample = render_sample(spec, i)
            rel = f"images/{i:06d}.sgt"
            save_tensor(os.path.join(out_dir, rel), sample.image)
            record = {
                "image": rel,
                "keypoints": [[float(v) for v in row] for row in sample.keypoints],
                "normalizer": sample.normalizer,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path: str) -> Dataset:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"not a dataset directory (no meta.json): {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format") != META_FORMAT:
        raise DataError(f"unsupported dataset format {meta.get('format')!r} in {meta_path}")
    samples = []
    with open(os.path.join(path, "annotations.jsonl")) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"annotations.jsonl line {line_no}: {exc}") from exc
            image = load_tensor(os.path.join(path, record["image"]))
            keypoints = np.asarray(record["keypoints"], dtype=np.float64)
            if keypoints.ndim != 2 or keypoints.shape[1] != 3:
                raise DataError(
                    f"annotations.jsonl line {line_no}: keypoints must be Kx3"
                )
            samples.append(Sample(image, keypoints, float(record["normalizer"])))
    if len(samples) != meta["num_samples"]:
        raise DataError(
            f"{path}: meta says {meta['num_samples']} samples, found {len(samples)}"
        )
    return Dataset(
        samples=samples,
        image_size=meta["image_size"],
        keypoints=meta["keypoints"],
        joint_names=tuple(meta["joint_names"]),
        flip_pairs=tuple(tuple(p) for p in meta["flip_pairs"]),
        meta=meta,
    )
