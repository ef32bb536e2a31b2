"""Synthetic correspondence pairs and the JSONL dataset format.

Each pair is two views of the same set of class-conditioned latent points:
image 1 samples keypoints in the image with a minimum separation, image 2
applies a similarity warp (rotation, isotropic scale, translation) plus
coordinate jitter, shuffles the keypoint order, and records the shuffle as
the ground-truth permutation. Latents come from a per-class bank so the
matching task is class-conditioned rather than pair-local.

Dataset files are line-delimited JSON. Every record carries image ids,
both coordinate arrays, the truth permutation, the class id, and either the
latent array (image-1 order) or paths to precomputed feature-map files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import DataConfig
from .features import BackboneOutput, read_feature_file, synthetic_backbone

__all__ = [
    "IMAGE_SIZE",
    "PairSample",
    "class_latent_bank",
    "generate_pair",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
    "pair_to_record",
    "record_to_pair",
]

IMAGE_SIZE = 32.0  # square synthetic image, pixels
_MARGIN = 3.0  # keep sampled keypoints away from the border
_MIN_SEP = 5.0  # minimum pairwise keypoint distance, pixels


@dataclass
class PairSample:
    """One correspondence problem: two keypoint sets plus supervision."""

    image1: str
    image2: str
    class_id: int
    keypoints1: np.ndarray  # (m, 2) pixels
    keypoints2: np.ndarray  # (m, 2) pixels, shuffled order
    truth: np.ndarray  # truth[i] = row of keypoints2 matching keypoints1[i]
    latents: np.ndarray | None  # (m, latent_dim), image-1 order
    noise_level: float = 0.0
    seed: int = 0
    feature_files: tuple[str, str] | None = None

    @property
    def m(self) -> int:
        return len(self.keypoints1)

    def latents2(self) -> np.ndarray:
        """Image-2 latents: image-1 latents reordered by the truth permutation."""
        out = np.empty_like(self.latents)
        out[self.truth] = self.latents
        return out

    def backbone_outputs(self) -> tuple[BackboneOutput, BackboneOutput]:
        """Render (or load) the two backbone outputs for this pair."""
        if self.feature_files is not None:
            return (
                read_feature_file(self.feature_files[0]),
                read_feature_file(self.feature_files[1]),
            )
        b1 = synthetic_backbone(
            self.latents, self.keypoints1, self.noise_level, seed=[self.seed, 1]
        )
        b2 = synthetic_backbone(
            self.latents2(), self.keypoints2, self.noise_level, seed=[self.seed, 2]
        )
        return b1, b2


def class_latent_bank(class_id: int, latent_dim: int, slots: int) -> np.ndarray:
    """Deterministic per-class latent bank: unit-norm rows, (slots, latent_dim)."""
    rng = np.random.default_rng([97561, class_id, latent_dim, slots])
    bank = rng.standard_normal((slots, latent_dim))
    return bank / np.linalg.norm(bank, axis=1, keepdims=True)


def _sample_keypoints(rng, m: int) -> np.ndarray:
    lo, hi = _MARGIN, IMAGE_SIZE - _MARGIN
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < m:
        cand = rng.uniform(lo, hi, size=2)
        attempts += 1
        if all(np.linalg.norm(cand - p) >= _MIN_SEP for p in pts):
            pts.append(cand)
        elif attempts > 200 * m:
            pts.append(cand)  # crowded; accept rather than loop forever
    return np.asarray(pts)


def _warp(rng, points: np.ndarray, spec: DataConfig) -> np.ndarray:
    theta = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    scale = rng.uniform(spec.scale_min, spec.scale_max)
    shift = rng.uniform(-spec.translation_max, spec.translation_max, size=2)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    center = np.array([IMAGE_SIZE / 2, IMAGE_SIZE / 2])
    return (points - center) @ (scale * rot).T + center + shift


def generate_pair(spec: DataConfig, class_id: int, seed: int,
                  latent_dim: int, shuffle: bool = True) -> PairSample:
    """One synthetic correspondence pair; fully determined by its arguments."""
    rng = np.random.default_rng([31415, seed])
    m = int(rng.integers(spec.m_min, spec.m_max + 1))
    bank = class_latent_bank(class_id, latent_dim, slots=max(spec.m_max, m))
    slot_ids = rng.choice(len(bank), size=m, replace=False)
    latents = bank[slot_ids]

    # keep resampling until the warp leaves at least 90% of points in bounds
    for _ in range(64):
        kp1 = _sample_keypoints(rng, m)
        kp2_aligned = _warp(rng, kp1, spec)
        if spec.jitter_sigma > 0:
            kp2_aligned = kp2_aligned + rng.normal(0.0, spec.jitter_sigma, kp2_aligned.shape)
        inside = np.all((kp2_aligned >= 0.0) & (kp2_aligned <= IMAGE_SIZE), axis=1)
        if inside.mean() >= 0.9:
            break
    kp2_aligned = np.clip(kp2_aligned, 0.0, IMAGE_SIZE)

    if shuffle:
        truth = rng.permutation(m)
    else:
        truth = np.arange(m)
    kp2 = np.empty_like(kp2_aligned)
    kp2[truth] = kp2_aligned

    return PairSample(
        image1=f"c{class_id}-s{seed}-a",
        image2=f"c{class_id}-s{seed}-b",
        class_id=class_id,
        keypoints1=kp1,
        keypoints2=kp2,
        truth=truth,
        latents=latents,
        noise_level=spec.noise_level,
        seed=seed,
    )


def generate_dataset(spec: DataConfig, latent_dim: int, seed: int,
                     num_pairs: int | None = None) -> list[PairSample]:
    """num_pairs samples with classes cycling round-robin, seeds derived from seed."""
    n = spec.num_pairs if num_pairs is None else num_pairs
    return [
        generate_pair(spec, class_id=i % spec.num_classes,
                      seed=seed * 1_000_003 + i, latent_dim=latent_dim)
        for i in range(n)
    ]


def pair_to_record(pair: PairSample) -> dict:
    record = {
        "image1": pair.image1,
        "image2": pair.image2,
        "class_id": int(pair.class_id),
        "keypoints1": np.asarray(pair.keypoints1).tolist(),
        "keypoints2": np.asarray(pair.keypoints2).tolist(),
        "truth": np.asarray(pair.truth).tolist(),
        "noise_level": float(pair.noise_level),
        "seed": int(pair.seed),
    }
    if pair.feature_files is not None:
        record["features1"], record["features2"] = pair.feature_files
    else:
        record["latents"] = np.asarray(pair.latents).tolist()
    return record


def record_to_pair(record: dict) -> PairSample:
    required = ["image1", "image2", "class_id", "keypoints1", "keypoints2", "truth"]
    for key in required:
        if key not in record:
            raise ValueError(f"pair record missing field {key!r}")
    has_latents = "latents" in record
    has_files = "features1" in record and "features2" in record
    if not has_latents and not has_files:
        raise ValueError("pair record needs either 'latents' or 'features1'/'features2'")
    truth = np.asarray(record["truth"], dtype=np.intp)
    if sorted(truth.tolist()) != list(range(len(truth))):
        raise ValueError("'truth' must be a permutation")
    return PairSample(
        image1=str(record["image1"]),
        image2=str(record["image2"]),
        class_id=int(record["class_id"]),
        keypoints1=np.asarray(record["keypoints1"], dtype=np.float64),
        keypoints2=np.asarray(record["keypoints2"], dtype=np.float64),
        truth=truth,
        latents=np.asarray(record["latents"], dtype=np.float64) if has_latents else None,
        noise_level=float(record.get("noise_level", 0.0)),
        seed=int(record.get("seed", 0)),
        feature_files=(record["features1"], record["features2"]) if has_files else None,
    )


def write_dataset(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair_to_record(pair)) + "\n")


def read_dataset(path) -> list[PairSample]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
            try:
                pairs.append(record_to_pair(record))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return pairs
