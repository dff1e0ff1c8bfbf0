"""Shared test fixtures and independent oracle implementations.

The oracles deliberately avoid the library's fast paths: probabilities are
exact rationals, leaf indices come from per-bit evaluation with string
packing, and window means come from nested loops.
"""

from fractions import Fraction

import numpy as np

from fernkit import ClassSet, GrayImage, Keypoint, box_smooth


def make_texture(width: int, height: int, seed: int, block: int = 8) -> GrayImage:
    """Deterministic test texture: coarse blocks mixed with fine noise."""
    rng = np.random.default_rng(seed)
    coarse = rng.integers(0, 256, (height // block + 2, width // block + 2))
    up = np.kron(coarse, np.ones((block, block), dtype=np.int64))
    up = up[:height, :width]
    fine = rng.integers(0, 256, (height, width))
    mix = np.clip(np.rint(0.6 * up + 0.4 * fine), 0, 255).astype(np.int64)
    return box_smooth(GrayImage.from_array(mix), 1)


def random_patches(rng, count: int, size: int, low: int = 0, high: int = 256):
    """(count, size, size) uint8 batch of uniform noise patches."""
    return rng.integers(low, high, (count, size, size)).astype(np.uint8)


def grid_classes(h: int, patch_size: int) -> ClassSet:
    """H synthetic keypoints on a spaced grid; positions are irrelevant to
    table arithmetic but must satisfy the separation invariant."""
    step = patch_size
    cols = int(np.ceil(np.sqrt(h)))
    kps = [
        Keypoint(float(patch_size + step * (i % cols)),
                 float(patch_size + step * (i // cols)))
        for i in range(h)
    ]
    return ClassSet(tuple(kps), patch_size)


def leaf_index_oracle(patch: np.ndarray, fern) -> int:
    """Per-bit evaluation packed through a binary string, MSB first."""
    cy, cx = patch.shape[0] // 2, patch.shape[1] // 2
    bits = ""
    for t in fern.tests:
        a = int(patch[cy + t.dy1, cx + t.dx1])
        b = int(patch[cy + t.dy2, cx + t.dx2])
        bits += "1" if a < b else "0"
    return int(bits, 2)


def posterior_oracle(model, patch: np.ndarray) -> list[Fraction]:
    """Exact-rational posterior: prior times the product of per-fern leaf
    probabilities, normalized."""
    h = model.num_classes
    m = model.fern_size
    weights = []
    for c in range(h):
        p = Fraction(1, h)
        for s, fern in enumerate(model.ferns):
            leaf = leaf_index_oracle(patch, fern)
            n_c = int(model.counts[s, :, c].sum())
            p *= Fraction(int(model.counts[s, leaf, c]) + 1, n_c + 2**m)
        weights.append(p)
    total = sum(weights)
    return [w / total for w in weights]


def tree_leaf_oracle(patch: np.ndarray, tree) -> int:
    """Explicit root-to-leaf path simulation."""
    cy, cx = patch.shape[0] // 2, patch.shape[1] // 2
    node = 0
    for _ in range(tree.depth):
        t = tree.node_tests[node]
        a = int(patch[cy + t.dy1, cx + t.dx1])
        b = int(patch[cy + t.dy2, cx + t.dx2])
        node = 2 * node + 1 + (1 if a < b else 0)
    return node - (tree.num_leaves - 1)


def rate_oracle(true_labels, predicted_labels) -> float:
    """Recognition rate recomputed through an explicit confusion matrix."""
    confusion: dict[tuple[int, int], int] = {}
    for t, p in zip(true_labels, predicted_labels, strict=True):
        key = (int(t), int(p))
        confusion[key] = confusion.get(key, 0) + 1
    correct = sum(n for (t, p), n in confusion.items() if t == p)
    total = sum(confusion.values())
    return correct / total


def box_mean_oracle(values: np.ndarray, radius: int) -> np.ndarray:
    """Nested-loop window mean with border clipping."""
    h, w = values.shape
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            y1, y2 = max(0, y - radius), min(h, y + radius + 1)
            x1, x2 = max(0, x - radius), min(w, x + radius + 1)
            window = values[y1:y2, x1:x2].astype(np.float64)
            out[y, x] = window.mean()
    return out
