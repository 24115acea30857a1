"""Synthetic dataset tests: determinism, annotation integrity, rasterization
fidelity, coordinate-frame math, and on-disk round trips."""

import json
from pathlib import Path

import numpy as np
import pytest

from sgnet.data import (JOINT_NAMES, Dataset, Sample, SyntheticSceneSpec,
                        generate_dataset, heatmap_to_image_coords,
                        image_to_heatmap_coords, load_dataset, render_sample)
from sgnet.errors import DataError


def dir_bytes(root):
    out = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestCoordinateFrames:
    def test_round_trip(self, rng):
        x = rng.uniform(0, 63, size=20)
        np.testing.assert_allclose(
            heatmap_to_image_coords(image_to_heatmap_coords(x)), x,
            atol=1e-12)

    def test_centers_align(self):
        # image-grid center lands exactly on the heatmap-grid center
        assert image_to_heatmap_coords(31.5) == 7.5

    def test_mirror_law_commutes_with_downsampling(self, rng):
        s, hm = 64, 16
        x = rng.uniform(0, s - 1, size=20)
        mirrored_then_mapped = image_to_heatmap_coords((s - 1) - x)
        mapped_then_mirrored = (hm - 1) - image_to_heatmap_coords(x)
        np.testing.assert_allclose(mirrored_then_mapped, mapped_then_mirrored,
                                   atol=1e-12)


class TestSpecValidation:
    @pytest.mark.parametrize("kw", [
        dict(num_samples=0),
        dict(num_samples=1, image_size=30),
        dict(num_samples=1, image_size=4),
        dict(num_samples=1, keypoints=0),
        dict(num_samples=1, keypoints=len(JOINT_NAMES) + 1),
        dict(num_samples=1, noise=0.6),
        dict(num_samples=1, noise=-0.1),
    ])
    def test_rejects_bad_fields(self, kw):
        with pytest.raises(DataError):
            SyntheticSceneSpec(**kw)


class TestRenderSample:
    def test_deterministic_per_index(self):
        spec = SyntheticSceneSpec(num_samples=3, seed=4)
        a, b = render_sample(spec, 1), render_sample(spec, 1)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.keypoints.tobytes() == b.keypoints.tobytes()
        c = render_sample(spec, 2)
        assert a.image.tobytes() != c.image.tobytes()

    def test_keypoints_inside_heatmap_bounds_and_visible(self):
        spec = SyntheticSceneSpec(num_samples=20, image_size=64, keypoints=7,
                                  seed=0)
        for i in range(20):
            kps = render_sample(spec, i).keypoints
            assert kps.shape == (7, 3)
            assert (kps[:, 2] == 1.0).all()
            assert kps[:, :2].min() >= 0.0
            assert kps[:, :2].max() <= 15.0

    def test_normalizer_is_head_segment_length(self):
        spec = SyntheticSceneSpec(num_samples=5, keypoints=2, seed=3)
        for i in range(5):
            sample = render_sample(spec, i)
            head, neck = sample.keypoints[0, :2], sample.keypoints[1, :2]
            assert sample.normalizer > 0
            assert sample.normalizer == pytest.approx(
                np.hypot(*(head - neck)), abs=1e-12)

    def test_every_keypoint_lies_on_rendered_ink(self):
        # rasterization oracle: some bright pixel within 1px of each keypoint
        spec = SyntheticSceneSpec(num_samples=10, image_size=64, keypoints=7,
                                  noise=0.0, seed=1)
        for i in range(10):
            sample = render_sample(spec, i)
            bright = np.argwhere(sample.image[0] > 0.3)
            img_xy = heatmap_to_image_coords(sample.keypoints[:, :2])
            for x, y in img_xy:
                dist = np.hypot(bright[:, 1] - x, bright[:, 0] - y).min()
                assert dist <= 1.0

    def test_left_limbs_brighter_than_right(self):
        spec = SyntheticSceneSpec(num_samples=6, image_size=64, keypoints=7,
                                  noise=0.0, seed=2)
        for i in range(6):
            sample = render_sample(spec, i)
            img_xy = heatmap_to_image_coords(sample.keypoints[:, :2])
            lx, ly = np.round(img_xy[3]).astype(int)  # l_ankle
            rx, ry = np.round(img_xy[4]).astype(int)  # r_ankle
            assert sample.image[0, ly, lx] > 0.6
            assert sample.image[0, ly, lx] > sample.image[0, ry, rx]

    def test_channel_tint_scales_strokes(self):
        sample = render_sample(SyntheticSceneSpec(num_samples=1, noise=0.0,
                                                  seed=5), 0)
        np.testing.assert_allclose(sample.image[1], sample.image[0] * 0.82,
                                   atol=1e-12)
        np.testing.assert_allclose(sample.image[2], sample.image[0] * 0.62,
                                   atol=1e-12)

    def test_noise_is_additive_and_bounded(self):
        clean = render_sample(SyntheticSceneSpec(num_samples=1, noise=0.0,
                                                 seed=6), 0)
        noisy = render_sample(SyntheticSceneSpec(num_samples=1, noise=0.2,
                                                 seed=6), 0)
        assert noisy.image.min() >= 0.0 and noisy.image.max() <= 1.0
        diff = noisy.image - clean.image
        assert diff.min() >= 0.0
        assert diff.max() <= 0.2 + 1e-12
        assert diff.max() > 0.0


class TestDatasetOnDisk:
    def test_identical_specs_give_byte_identical_directories(self, tmp_path):
        spec = SyntheticSceneSpec(num_samples=4, seed=7)
        generate_dataset(spec, str(tmp_path / "a"))
        generate_dataset(spec, str(tmp_path / "b"))
        a, b = dir_bytes(tmp_path / "a"), dir_bytes(tmp_path / "b")
        assert a.keys() == b.keys()
        assert a == b

    def test_record_count_matches_spec(self, tmp_path):
        generate_dataset(SyntheticSceneSpec(num_samples=5, seed=0),
                         str(tmp_path))
        lines = (tmp_path / "annotations.jsonl").read_text().splitlines()
        assert len(lines) == 5
        assert len(list((tmp_path / "images").iterdir())) == 5

    def test_load_round_trips_samples_exactly(self, tmp_path):
        spec = SyntheticSceneSpec(num_samples=3, keypoints=5, seed=8)
        generate_dataset(spec, str(tmp_path))
        ds = load_dataset(str(tmp_path))
        assert len(ds) == 3
        assert ds.image_size == 64
        assert ds.heatmap_size == 16
        assert ds.keypoints == 5
        assert ds.joint_names == JOINT_NAMES[:5]
        assert ds.flip_pairs == ()
        for i in range(3):
            ref = render_sample(spec, i)
            np.testing.assert_array_equal(ds[i].image, ref.image)
            np.testing.assert_array_equal(ds[i].keypoints, ref.keypoints)
            assert ds[i].normalizer == ref.normalizer

    def test_missing_meta_rejected(self, tmp_path):
        with pytest.raises(DataError, match="meta.json"):
            load_dataset(str(tmp_path))

    def test_wrong_format_marker_rejected(self, tmp_path):
        generate_dataset(SyntheticSceneSpec(num_samples=1, seed=0),
                         str(tmp_path))
        meta = json.loads((tmp_path / "meta.json").read_text())
        meta["format"] = "other"
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(DataError, match="format"):
            load_dataset(str(tmp_path))

    def test_malformed_annotation_names_line(self, tmp_path):
        generate_dataset(SyntheticSceneSpec(num_samples=2, seed=0),
                         str(tmp_path))
        path = tmp_path / "annotations.jsonl"
        lines = path.read_text().splitlines()
        lines[1] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="line 2"):
            load_dataset(str(tmp_path))

    def test_bad_keypoint_shape_rejected(self, tmp_path):
        generate_dataset(SyntheticSceneSpec(num_samples=1, seed=0),
                         str(tmp_path))
        path = tmp_path / "annotations.jsonl"
        record = json.loads(path.read_text())
        record["keypoints"] = [[1.0, 2.0]]
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(DataError, match="Kx3"):
            load_dataset(str(tmp_path))

    def test_sample_count_mismatch_rejected(self, tmp_path):
        generate_dataset(SyntheticSceneSpec(num_samples=2, seed=0),
                         str(tmp_path))
        path = tmp_path / "annotations.jsonl"
        lines = path.read_text().splitlines()
        path.write_text(lines[0] + "\n")
        with pytest.raises(DataError, match="2 samples"):
            load_dataset(str(tmp_path))


class TestSampleContainer:
    def test_copy_is_deep_for_arrays(self, rng):
        sample = Sample(rng.uniform(0, 1, (3, 8, 8)),
                        np.array([[1.0, 2.0, 1.0]]), 2.0)
        dup = sample.copy()
        dup.image[...] = 0.0
        dup.keypoints[...] = 0.0
        assert sample.image.any()
        assert sample.keypoints.any()

    def test_dataset_len_and_indexing(self, tiny_dataset):
        assert len(tiny_dataset) == 8
        assert tiny_dataset[0].image.shape == (3, 64, 64)
        assert tiny_dataset.heatmap_size == 16
