import json

import numpy as np
import pytest

from normmatch.config import DataConfig
from normmatch.data import (
    IMAGE_SIZE,
    class_latent_bank,
    generate_dataset,
    generate_pair,
    pair_to_record,
    read_dataset,
    record_to_pair,
    write_dataset,
)
from normmatch.features import synthetic_backbone, write_feature_file


def _identity_spec(**overrides):
    base = dict(
        rotation_deg=0.0,
        scale_min=1.0,
        scale_max=1.0,
        translation_max=0.0,
        jitter_sigma=0.0,
        noise_level=0.0,
    )
    base.update(overrides)
    return DataConfig(**base)


class TestClassLatentBank:
    def test_rows_are_unit_norm(self):
        bank = class_latent_bank(3, latent_dim=16, slots=10)
        assert bank.shape == (10, 16)
        assert np.allclose(np.linalg.norm(bank, axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        a = class_latent_bank(7, latent_dim=8, slots=12)
        b = class_latent_bank(7, latent_dim=8, slots=12)
        assert np.array_equal(a, b)

    def test_classes_differ(self):
        a = class_latent_bank(0, latent_dim=8, slots=12)
        b = class_latent_bank(1, latent_dim=8, slots=12)
        assert not np.array_equal(a, b)


class TestGeneratePair:
    def test_same_seed_identical(self):
        spec = DataConfig()
        a = generate_pair(spec, class_id=2, seed=11, latent_dim=16)
        b = generate_pair(spec, class_id=2, seed=11, latent_dim=16)
        assert np.array_equal(a.keypoints1, b.keypoints1)
        assert np.array_equal(a.keypoints2, b.keypoints2)
        assert np.array_equal(a.truth, b.truth)
        assert np.array_equal(a.latents, b.latents)

    def test_identity_warp_no_shuffle_coincides(self):
        pair = generate_pair(_identity_spec(), class_id=0, seed=3,
                             latent_dim=8, shuffle=False)
        assert np.array_equal(pair.truth, np.arange(pair.m))
        assert np.allclose(pair.keypoints2, pair.keypoints1, atol=1e-12)

    def test_truth_records_the_shuffle(self):
        # with an identity warp, row truth[i] of image 2 is keypoint i of image 1
        pair = generate_pair(_identity_spec(), class_id=0, seed=4, latent_dim=8)
        assert sorted(pair.truth.tolist()) == list(range(pair.m))
        assert np.allclose(pair.keypoints2[pair.truth], pair.keypoints1, atol=1e-12)

    def test_keypoint_count_in_range(self):
        spec = DataConfig(m_min=4, m_max=7)
        for seed in range(10):
            pair = generate_pair(spec, class_id=1, seed=seed, latent_dim=8)
            assert 4 <= pair.m <= 7

    def test_keypoints_respect_margin_and_separation(self):
        spec = DataConfig()
        for seed in range(10):
            kp1 = generate_pair(spec, class_id=0, seed=seed, latent_dim=8).keypoints1
            assert np.all(kp1 >= 3.0) and np.all(kp1 <= IMAGE_SIZE - 3.0)
            diff = kp1[:, None, :] - kp1[None, :, :]
            dist = np.linalg.norm(diff, axis=2)
            np.fill_diagonal(dist, np.inf)
            assert dist.min() >= 5.0

    def test_warped_keypoints_stay_in_image(self):
        spec = DataConfig()
        for seed in range(20):
            kp2 = generate_pair(spec, class_id=0, seed=seed, latent_dim=8).keypoints2
            assert np.all(kp2 >= 0.0) and np.all(kp2 <= IMAGE_SIZE)

    def test_latents_drawn_from_class_bank(self):
        spec = DataConfig(m_min=5, m_max=8)
        pair = generate_pair(spec, class_id=4, seed=9, latent_dim=16)
        bank = class_latent_bank(4, latent_dim=16, slots=8)
        for latent in pair.latents:
            assert any(np.array_equal(latent, row) for row in bank)

    def test_latents2_reorders_by_truth(self):
        pair = generate_pair(DataConfig(), class_id=2, seed=5, latent_dim=8)
        lat2 = pair.latents2()
        assert np.array_equal(lat2[pair.truth], pair.latents)

    def test_backbone_outputs_deterministic_and_distinct(self):
        pair = generate_pair(DataConfig(noise_level=0.1), class_id=1, seed=6,
                             latent_dim=8)
        b1a, b2a = pair.backbone_outputs()
        b1b, b2b = pair.backbone_outputs()
        assert np.array_equal(b1a.last.grid, b1b.last.grid)
        assert np.array_equal(b2a.last.grid, b2b.last.grid)
        # the two images get independent noise streams
        assert not np.array_equal(b1a.last.grid, b2a.last.grid)


class TestGenerateDataset:
    def test_size_and_round_robin_classes(self):
        spec = DataConfig(num_pairs=7, num_classes=3)
        pairs = generate_dataset(spec, latent_dim=8, seed=0)
        assert len(pairs) == 7
        assert [p.class_id for p in pairs] == [0, 1, 2, 0, 1, 2, 0]

    def test_deterministic(self):
        spec = DataConfig(num_pairs=4, num_classes=2)
        a = generate_dataset(spec, latent_dim=8, seed=5)
        b = generate_dataset(spec, latent_dim=8, seed=5)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.keypoints1, pb.keypoints1)
            assert np.array_equal(pa.truth, pb.truth)

    def test_seeds_do_not_collide_across_dataset_seeds(self):
        spec = DataConfig(num_pairs=3, num_classes=1)
        a = generate_dataset(spec, latent_dim=8, seed=1)
        b = generate_dataset(spec, latent_dim=8, seed=2)
        assert not np.array_equal(a[0].keypoints1, b[0].keypoints1)

    def test_num_pairs_override(self):
        spec = DataConfig(num_pairs=50, num_classes=5)
        pairs = generate_dataset(spec, latent_dim=8, seed=0, num_pairs=6)
        assert len(pairs) == 6


class TestDatasetIO:
    def test_jsonl_round_trip_exact(self, tmp_path):
        spec = DataConfig(num_pairs=5, num_classes=2)
        pairs = generate_dataset(spec, latent_dim=8, seed=3)
        path = tmp_path / "pairs.jsonl"
        write_dataset(path, pairs)
        back = read_dataset(path)
        assert len(back) == len(pairs)
        for orig, got in zip(pairs, back):
            assert got.image1 == orig.image1
            assert got.class_id == orig.class_id
            assert np.array_equal(got.keypoints1, orig.keypoints1)
            assert np.array_equal(got.keypoints2, orig.keypoints2)
            assert np.array_equal(got.truth, orig.truth)
            assert np.array_equal(got.latents, orig.latents)
            assert got.noise_level == orig.noise_level
            assert got.seed == orig.seed

    def test_blank_lines_skipped(self, tmp_path):
        pairs = generate_dataset(DataConfig(num_pairs=2, num_classes=1),
                                 latent_dim=8, seed=0)
        path = tmp_path / "pairs.jsonl"
        text = "\n".join(
            line for pair in pairs
            for line in ("", json.dumps(pair_to_record(pair)))
        )
        path.write_text(text + "\n\n", encoding="utf-8")
        assert len(read_dataset(path)) == 2

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        pair = generate_pair(DataConfig(), class_id=0, seed=0, latent_dim=8)
        good = json.dumps(pair_to_record(pair))
        path.write_text(good + "\n{not json\n", encoding="utf-8")
        with pytest.raises(ValueError, match="line 2"):
            read_dataset(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        pair = generate_pair(DataConfig(), class_id=0, seed=0, latent_dim=8)
        record = pair_to_record(pair)
        del record["truth"]
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match="line 1.*truth"):
            read_dataset(path)

    def test_truth_must_be_permutation(self):
        pair = generate_pair(DataConfig(), class_id=0, seed=0, latent_dim=8)
        record = pair_to_record(pair)
        record["truth"] = [0] * pair.m
        with pytest.raises(ValueError, match="permutation"):
            record_to_pair(record)

    def test_record_requires_latents_or_feature_files(self):
        pair = generate_pair(DataConfig(), class_id=0, seed=0, latent_dim=8)
        record = pair_to_record(pair)
        del record["latents"]
        with pytest.raises(ValueError, match="latents"):
            record_to_pair(record)

    def test_feature_file_records_round_trip(self, tmp_path):
        pair = generate_pair(_identity_spec(), class_id=0, seed=1, latent_dim=8)
        b1, b2 = pair.backbone_outputs()
        f1, f2 = str(tmp_path / "a.nmtf"), str(tmp_path / "b.nmtf")
        write_feature_file(f1, b1)
        write_feature_file(f2, b2)
        pair.feature_files = (f1, f2)
        pair.latents = None

        record = pair_to_record(pair)
        assert "latents" not in record
        got = record_to_pair(record)
        assert got.feature_files == (f1, f2)
        r1, r2 = got.backbone_outputs()
        assert np.array_equal(r1.last.grid, b1.last.grid.astype(np.float32))
        assert np.array_equal(r2.last.grid, b2.last.grid.astype(np.float32))
