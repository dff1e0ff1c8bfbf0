"""Interest-point detection and selection of stable class keypoints.

The detector scores each pixel by its contrast against the surrounding
8-neighbor ring, smooths the response map to break single-pixel plateaus,
and keeps local maxima. Class selection re-detects under random warps and
votes detections back into the reference frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientKeypoints, InvalidArgument
from .image import (
    AffineDeform,
    GrayImage,
    box_mean,
    sample_deformation,
    unwarp_points,
    warp_image,
)

DEFAULT_PATCH_SIZE = 31


@dataclass(frozen=True)
class Keypoint:
    """A detected interest point in reference-image coordinates."""

    x: float
    y: float
    response: float = 0.0

    def __post_init__(self):
        if self.response < 0:
            raise InvalidArgument("response must be >= 0")


@dataclass(frozen=True)
class ClassSet:
    """The ordered keypoints that define the classifier's classes.

    The list index is the class label; ordering is stable across runs
    with the same seed.
    """

    keypoints: tuple[Keypoint, ...]
    patch_size: int

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise InvalidArgument("patch_size must be odd and >= 3")
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if not self.keypoints:
            raise InvalidArgument("a ClassSet needs at least one keypoint")
        min_sep = self.min_separation
        coords = self.coords
        for i in range(len(coords)):
            d2 = np.sum((coords[i + 1 :] - coords[i]) ** 2, axis=1)
            if d2.size and d2.min() < min_sep**2 - 1e-9:
                raise InvalidArgument(
                    f"keypoints closer than min separation {min_sep}"
                )

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def coords(self) -> np.ndarray:
        """(H, 2) array of (x, y) positions."""
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=np.float64)

    @property
    def min_separation(self) -> float:
        return self.patch_size / 2.0

    @property
    def margin(self) -> int:
        return self.patch_size // 2


def _response_map(img: GrayImage) -> np.ndarray:
    """Ring-contrast response, box-smoothed so isolated peaks stay unimodal."""
    px = img.pixels.astype(np.float64)
    window = box_mean(img.pixels, 1) * 9.0
    ring_mean = (window - px) / 8.0
    raw = np.abs(px - ring_mean)
    # Border pixels lack a full ring; they are outside any patch margin anyway.
    raw[0, :] = raw[-1, :] = 0.0
    raw[:, 0] = raw[:, -1] = 0.0
    return box_mean(raw, 1)


def _local_maxima(resp: np.ndarray) -> np.ndarray:
    """Mask of pixels equal to the max of their 3x3 neighborhood."""
    padded = np.full(
        (resp.shape[0] + 2, resp.shape[1] + 2), -np.inf, dtype=np.float64
    )
    padded[1:-1, 1:-1] = resp
    best = resp.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = padded[1 + dy : 1 + dy + resp.shape[0], 1 + dx : 1 + dx + resp.shape[1]]
            np.maximum(best, shifted, out=best)
    return resp >= best


def detect_keypoints(
    img: GrayImage, max_count: int, patch_size: int = DEFAULT_PATCH_SIZE
) -> list[Keypoint]:
    """Detect up to ``max_count`` ring-contrast maxima away from the border.

    Returned sorted by response descending, ties in scanline (y, x) order.
    Images smaller than the patch yield an empty list.
    """
    if max_count < 1:
        return []
    margin = patch_size // 2
    if img.width < patch_size or img.height < patch_size:
        return []
    resp = _response_map(img)
    keep = _local_maxima(resp) & (resp > 0.0)
    keep[:margin, :] = False
    keep[img.height - margin :, :] = False
    keep[:, :margin] = False
    keep[:, img.width - margin :] = False
    ys, xs = np.nonzero(keep)
    if ys.size == 0:
        return []
    order = np.lexsort((xs, ys, -resp[ys, xs]))[:max_count]
    return [
        Keypoint(float(xs[i]), float(ys[i]), float(resp[ys[i], xs[i]]))
        for i in order
    ]


def select_stable_classes(
    img: GrayImage,
    h: int,
    num_views: int,
    rng: np.random.Generator,
    patch_size: int = DEFAULT_PATCH_SIZE,
    deforms: Sequence[AffineDeform] | None = None,
) -> ClassSet:
    """Pick the ``h`` keypoints most consistently re-detected under warping.

    Detects in ``num_views`` randomly deformed copies, maps each detection
    back to the reference frame, and votes into 1-pixel bins. The highest
    voted bins win, subject to a minimum separation of half the patch size.
    ``deforms`` overrides the random views (used for degenerate protocols).
    """
    if h < 1:
        raise InvalidArgument("h must be >= 1")
    if num_views < 1 and deforms is None:
        raise InvalidArgument("num_views must be >= 1")
    cx, cy = img.center
    if deforms is None:
        deforms = [
            replace(sample_deformation(rng), tx=cx, ty=cy) for _ in range(num_views)
        ]
    margin = patch_size // 2
    votes = np.zeros((img.height, img.width), dtype=np.int64)
    strength = np.zeros((img.height, img.width), dtype=np.float64)
    for d in deforms:
        view = warp_image(img, d, img.width, img.height)
        found = detect_keypoints(view, max_count=4 * h, patch_size=patch_size)
        if not found:
            continue
        pts = unwarp_points(d, img.width, img.height, [(k.x, k.y) for k in found])
        bins = np.rint(pts).astype(np.int64)
        ok = (
            (bins[:, 0] >= margin)
            & (bins[:, 0] <= img.width - 1 - margin)
            & (bins[:, 1] >= margin)
            & (bins[:, 1] <= img.height - 1 - margin)
        )
        np.add.at(votes, (bins[ok, 1], bins[ok, 0]), 1)
        np.add.at(
            strength,
            (bins[ok, 1], bins[ok, 0]),
            [found[i].response for i in np.nonzero(ok)[0]],
        )

    ys, xs = np.nonzero(votes)
    # Equal-vote bins rank by accumulated detector response, then scanline;
    # a single identity view then reproduces detect_keypoints' own ordering.
    order = np.lexsort((xs, ys, -strength[ys, xs], -votes[ys, xs]))
    min_sep2 = (patch_size / 2.0) ** 2
    chosen: list[Keypoint] = []
    for i in order:
        x, y = float(xs[i]), float(ys[i])
        if any((x - k.x) ** 2 + (y - k.y) ** 2 < min_sep2 for k in chosen):
            continue
        chosen.append(Keypoint(x, y, float(votes[ys[i], xs[i]])))
        if len(chosen) == h:
            break
    if len(chosen) < h:
        raise InsufficientKeypoints(found=len(chosen), requested=h)
    return ClassSet(tuple(chosen), patch_size)
