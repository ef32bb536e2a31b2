"""Generate one synthetic correspondence problem and look inside it.

Each sample is a pair of 32x32 "images" rendered from the same class
latents: image 2 warps the keypoints (rotation/scale/translation plus
jitter), shuffles their order, and re-renders with fresh descriptor
noise. truth[i] tells which row of keypoints2 matches keypoints1[i].
"""

import numpy as np

from normmatch.config import DataConfig
from normmatch.data import generate_pair
from normmatch.features import extract_keypoint_features

spec = DataConfig(m_min=5, m_max=8, jitter_sigma=0.3, noise_level=0.1)
pair = generate_pair(spec, class_id=2, seed=7, latent_dim=8)

print(f"class {pair.class_id}, m = {pair.m} keypoints")
print("keypoints1 (px):")
print(np.round(pair.keypoints1, 2))
print("keypoints2 (px, shuffled + warped):")
print(np.round(pair.keypoints2, 2))
print("truth permutation:", pair.truth)

# descriptors sampled off the rendered maps; rows follow keypoint order
b1, b2 = pair.backbone_outputs()
d1 = extract_keypoint_features(b1, pair.keypoints1)
d2 = extract_keypoint_features(b2, pair.keypoints2)
print(f"\ndescriptor width = {d1.shape[1]} "
      f"({b1.last.grid.shape[2]} from the last map + "
      f"{b1.second_last.grid.shape[2]} from the second-to-last)")

# cosine similarity between true partners vs the best impostor
n1 = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
n2 = d2 / np.linalg.norm(d2, axis=1, keepdims=True)
cos = n1 @ n2.T
print("\n i  cos(true partner)  best impostor")
for i in range(pair.m):
    true_cos = cos[i, pair.truth[i]]
    impostor = np.max(np.delete(cos[i], pair.truth[i]))
    marker = "" if true_cos > impostor else "   <- ambiguous"
    print(f"{i:2d}  {true_cos:17.4f}  {impostor:13.4f}{marker}")

print("\nAt noise 0.1 the true partner usually wins on raw descriptors;")
print("raise noise_level and the geometry has to carry the matching.")
