"""Backbone feature maps, keypoint sampling, and the global token.

A backbone here is anything producing two tagged spatial feature maps (last
and second-to-last layer). Keypoint features are bilinearly sampled from
both maps and concatenated; the global token is the spatial mean of the
concatenated maps pushed through a learned projection and normalized. The
bundled synthetic backbone renders per-keypoint latent vectors into the maps
as Gaussian splats, which keeps the whole pipeline image-free while
preserving the sampling geometry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .ops import normalize_rows, normalize_rows_backward

__all__ = [
    "FeatureMap",
    "BackboneOutput",
    "bilinear_sample",
    "extract_keypoint_features",
    "global_token",
    "global_token_backward",
    "synthetic_backbone",
    "write_feature_file",
    "read_feature_file",
]

FEATURE_MAGIC = b"NMTF"
FEATURE_VERSION = 1


@dataclass
class FeatureMap:
    """H x W x c grid of features; stride = image pixels per grid cell."""

    grid: np.ndarray
    stride: float
    layer_tag: str  # "last" or "second_last"
    oob_count: int = field(default=0, compare=False)


@dataclass
class BackboneOutput:
    last: FeatureMap
    second_last: FeatureMap

    @property
    def concat_width(self) -> int:
        return self.last.grid.shape[2] + self.second_last.grid.shape[2]


def bilinear_sample(fmap: FeatureMap, point) -> np.ndarray:
    """Sample one feature vector at an image-pixel location.

    Cell-center convention: grid coordinate = point / stride - 0.5, then a
    standard 4-neighbor blend. Out-of-bounds points are clamped to the grid
    and counted in the map's diagnostics counter.
    """
    grid = fmap.grid
    h, w, _ = grid.shape
    gx = point[0] / fmap.stride - 0.5
    gy = point[1] / fmap.stride - 0.5
    cx = min(max(gx, 0.0), w - 1.0)
    cy = min(max(gy, 0.0), h - 1.0)
    if cx != gx or cy != gy:
        fmap.oob_count += 1
    x0 = int(np.floor(cx))
    y0 = int(np.floor(cy))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    return (
        grid[y0, x0] * (1 - fx) * (1 - fy)
        + grid[y0, x1] * fx * (1 - fy)
        + grid[y1, x0] * (1 - fx) * fy
        + grid[y1, x1] * fx * fy
    )


def extract_keypoint_features(backbone_out: BackboneOutput, keypoints) -> np.ndarray:
    """Per-keypoint concatenation of samples from both maps (last first)."""
    keypoints = np.asarray(keypoints, dtype=np.float64)
    rows = [
        np.concatenate(
            [
                bilinear_sample(backbone_out.last, kp),
                bilinear_sample(backbone_out.second_last, kp),
            ]
        )
        for kp in keypoints
    ]
    return np.asarray(rows)


def _pooled(backbone_out: BackboneOutput) -> np.ndarray:
    mu_last = backbone_out.last.grid.mean(axis=(0, 1))
    mu_second = backbone_out.second_last.grid.mean(axis=(0, 1))
    return np.concatenate([mu_last, mu_second])


def global_token(backbone_out: BackboneOutput, store, name: str = "backbone.global_proj"):
    """Mean of all spatial features, projected to d_model and normalized."""
    pooled = _pooled(backbone_out)
    proj = store.value(name)
    if pooled.shape[0] != proj.shape[0]:
        raise ValueError(
            f"pooled width {pooled.shape[0]} does not match projection input {proj.shape[0]}"
        )
    raw = pooled @ proj
    out, nc = normalize_rows(raw[None, :])
    return out[0], (pooled, nc, name)


def global_token_backward(cache, g_token, store):
    pooled, nc, name = cache
    g_raw = normalize_rows_backward(nc, g_token[None, :])[0]
    store.add_grad(name, np.outer(pooled, g_raw))


def synthetic_backbone(latents, keypoints, noise_level: float, seed,
                       grid_shape=(16, 16), stride: float = 2.0,
                       sigma: float = 2.0) -> BackboneOutput:
    """Render per-keypoint latents into two feature maps as Gaussian splats.

    The latent width splits equally between the maps (last half first), so
    sampling the concatenated maps at a well-separated keypoint recovers a
    vector nearly proportional to its latent. Seeded Gaussian noise scaled
    by noise_level is added to every grid cell.
    """
    latents = np.asarray(latents, dtype=np.float64)
    keypoints = np.asarray(keypoints, dtype=np.float64)
    if len(latents) != len(keypoints):
        raise ValueError("one latent per keypoint required")
    if latents.shape[1] % 2:
        raise ValueError("latent width must be even (equal split across maps)")
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    h, w = grid_shape
    half = latents.shape[1] // 2
    ys = (np.arange(h) + 0.5) * stride
    xs = (np.arange(w) + 0.5) * stride
    dy = ys[:, None] - keypoints[:, 1][None, :]
    dx = xs[:, None] - keypoints[:, 0][None, :]
    # (h, w, m) splat weights from squared distances to cell centers
    d2 = dy[:, None, :] ** 2 + dx[None, :, :] ** 2
    weights = np.exp(-d2 / (2.0 * sigma * sigma))

    rng = np.random.default_rng(seed)
    maps = []
    for tag, part in (("last", latents[:, :half]), ("second_last", latents[:, half:])):
        grid = np.tensordot(weights, part, axes=([2], [0]))
        if noise_level > 0:
            grid = grid + noise_level * rng.standard_normal(grid.shape)
        else:
            rng.standard_normal(grid.shape)  # keep the stream position fixed
        maps.append(FeatureMap(grid=grid, stride=stride, layer_tag=tag))
    return BackboneOutput(last=maps[0], second_last=maps[1])


def write_feature_file(path, backbone_out: BackboneOutput) -> None:
    """Serialize both maps: header then row-major f32 grids, last layer first."""
    last, second = backbone_out.last, backbone_out.second_last
    if last.grid.shape[:2] != second.grid.shape[:2] or last.stride != second.stride:
        raise ValueError("both maps must share grid shape and stride")
    h, w, c_last = last.grid.shape
    c_second = second.grid.shape[2]
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIIII", FEATURE_VERSION, h, w, c_last, c_second))
        fh.write(struct.pack("<f", float(last.stride)))
        fh.write(np.ascontiguousarray(last.grid, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(second.grid, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise ValueError("truncated feature-map file")
    return raw


def read_feature_file(path) -> BackboneOutput:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"not a feature-map file (magic {magic!r})")
        version, h, w, c_last, c_second = struct.unpack("<IIIII", _read_exact(fh, 20))
        if version != FEATURE_VERSION:
            raise ValueError(f"unsupported feature-map version {version}")
        (stride,) = struct.unpack("<f", _read_exact(fh, 4))
        grids = []
        for c in (c_last, c_second):
            raw = _read_exact(fh, 4 * h * w * c)
            grids.append(
                np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float64)
            )
    return BackboneOutput(
        last=FeatureMap(grid=grids[0], stride=stride, layer_tag="last"),
        second_last=FeatureMap(grid=grids[1], stride=stride, layer_tag="second_last"),
    )
