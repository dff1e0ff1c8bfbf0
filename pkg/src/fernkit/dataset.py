"""Synthesis of training and test patch sets from one reference image.

Training views cover every rotation bucket with a fixed number of random
deformations each; test views draw all parameters from the full ranges and
get additive noise. Per-view RNGs are derived from (seed, stream, view_id)
so parallel and serial generation emit identical streams, and training and
test streams stay disjoint under equal seeds.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgument
from .image import (
    AffineDeform,
    GrayImage,
    TWO_PI,
    add_noise,
    sample_deformation,
    warp_image,
    warp_points,
    unwarp_points,
)
from .keypoints import ClassSet

STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_MODEL = 2
STREAM_CLASSES = 3

MANIFEST_HEADER = [
    "view_id",
    "theta",
    "phi",
    "lambda1",
    "lambda2",
    "tx",
    "ty",
    "noise_sigma",
]


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, stream label, view id, ...)."""
    return np.random.default_rng([int(seed), *map(int, key)])


@dataclass(frozen=True)
class DatasetSpec:
    """Protocol constants for view synthesis."""

    views_per_degree: int
    rotation_degrees: int = 360
    test_views: int = 1000
    noise_sigma: float = 10.0

    def __post_init__(self):
        if min(self.views_per_degree, self.rotation_degrees, self.test_views) < 0:
            raise InvalidArgument("all counts must be >= 0")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")

    @property
    def training_views(self) -> int:
        return self.views_per_degree * self.rotation_degrees


@dataclass(frozen=True)
class PatchSample:
    """One labeled training or test patch with its generating deformation."""

    patch: GrayImage
    label: int
    deform: AffineDeform
    view_id: int


@dataclass(frozen=True)
class View:
    view_id: int
    deform: AffineDeform
    image: GrayImage


@dataclass
class GenStats:
    """Bookkeeping filled in while a generator runs."""

    views: int = 0
    samples: int = 0
    skips: Counter = None

    def __post_init__(self):
        if self.skips is None:
            self.skips = Counter()


def _training_deform(img: GrayImage, spec: DatasetSpec, seed: int, view_id: int) -> AffineDeform:
    """Rotation bucket fixed by the view id; jitter and the rest are random."""
    rng = derive_rng(seed, STREAM_TRAIN, view_id)
    bucket = view_id // spec.views_per_degree
    bucket_width = TWO_PI / spec.rotation_degrees
    theta = (bucket + rng.uniform()) * bucket_width
    phi = rng.uniform(0.0, TWO_PI)
    lambda1 = rng.uniform(0.6, 1.5)
    lambda2 = rng.uniform(0.6, 1.5)
    cx, cy = img.center
    return AffineDeform(theta, phi, lambda1, lambda2, tx=cx, ty=cy)


def _render(img: GrayImage, view_id: int, deform: AffineDeform,
            sigma: float, rng: np.random.Generator | None) -> View:
    rendered = warp_image(img, deform, img.width, img.height)
    if sigma > 0 and rng is not None:
        rendered = add_noise(rendered, sigma, rng)
    return View(view_id, deform, rendered)


def _iter_views(img, params, threads: int) -> Iterator[View]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(lambda p: _render(img, *p), params)
    else:
        for p in params:
            yield _render(img, *p)


def training_views(
    img: GrayImage,
    spec: DatasetSpec,
    seed: int,
    threads: int = 1,
    deforms: Sequence[AffineDeform] | None = None,
) -> Iterator[View]:
    """Render the training protocol's views_per_degree x degrees warped views."""
    if deforms is not None:
        params = [(i, d, 0.0, None) for i, d in enumerate(deforms)]
    else:
        params = [
            (i, _training_deform(img, spec, seed, i), 0.0, None)
            for i in range(spec.training_views)
        ]
    return _iter_views(img, params, threads)


def test_views(
    img: GrayImage,
    spec: DatasetSpec,
    seed: int,
    threads: int = 1,
    deforms: Sequence[AffineDeform] | None = None,
) -> Iterator[View]:
    """Render test views: full-range deforms plus additive noise."""
    cx, cy = img.center
    params = []
    for i in range(spec.test_views if deforms is None else len(deforms)):
        rng = derive_rng(seed, STREAM_TEST, i)
        if deforms is None:
            d = replace(sample_deformation(rng), tx=cx, ty=cy)
        else:
            d = deforms[i]
        params.append((i, d, spec.noise_sigma, rng))
    return _iter_views(img, params, threads)


def extract_patches(
    view: View, classes: ClassSet, src_size: tuple[int, int]
) -> tuple[list[tuple[int, GrayImage]], list[int]]:
    """Crop one patch per class from a rendered view.

    A class is skipped when its patch would cross the view border or cover
    pixels the warped source never painted (background fill).
    """
    w, h = view.image.width, view.image.height
    m = classes.margin
    centers = warp_points(view.deform, w, h, classes.coords)
    centers = np.rint(centers).astype(np.int64)
    out: list[tuple[int, GrayImage]] = []
    skipped: list[int] = []
    src_w, src_h = src_size
    for label, (px, py) in enumerate(centers):
        if not (m <= px <= w - 1 - m and m <= py <= h - 1 - m):
            skipped.append(label)
            continue
        corners = [
            (px - m, py - m),
            (px + m, py - m),
            (px - m, py + m),
            (px + m, py + m),
        ]
        back = unwarp_points(view.deform, w, h, corners)
        if (
            back[:, 0].min() < 0
            or back[:, 0].max() > src_w - 1
            or back[:, 1].min() < 0
            or back[:, 1].max() > src_h - 1
        ):
            skipped.append(label)
            continue
        crop = view.image.pixels[py - m : py + m + 1, px - m : px + m + 1]
        out.append((label, GrayImage(crop.copy())))
    return out, skipped


def _patch_stream(
    img: GrayImage,
    classes: ClassSet,
    views: Iterator[View],
    stats: GenStats | None,
) -> Iterator[PatchSample]:
    for view in views:
        crops, skipped = extract_patches(view, classes, (img.width, img.height))
        if stats is not None:
            stats.views += 1
            for label in skipped:
                stats.skips[label] += 1
            stats.samples += len(crops)
        for label, patch in crops:
            yield PatchSample(patch, label, view.deform, view.view_id)


def generate_training_set(
    img: GrayImage,
    classes: ClassSet,
    spec: DatasetSpec,
    seed: int,
    stats: GenStats | None = None,
    threads: int = 1,
    deforms: Sequence[AffineDeform] | None = None,
) -> Iterator[PatchSample]:
    """Labeled patches from the rotation-bucketed training protocol."""
    return _patch_stream(
        img, classes, training_views(img, spec, seed, threads, deforms), stats
    )


def generate_test_set(
    img: GrayImage,
    classes: ClassSet,
    spec: DatasetSpec,
    seed: int,
    stats: GenStats | None = None,
    threads: int = 1,
    deforms: Sequence[AffineDeform] | None = None,
) -> Iterator[PatchSample]:
    """Labeled noisy patches from independent full-range deformations."""
    return _patch_stream(
        img, classes, test_views(img, spec, seed, threads, deforms), stats
    )


def stream_digest(samples: Iterable[PatchSample]) -> str:
    """SHA-256 over (view_id, label, pixels) of every sample, in order."""
    digest = hashlib.sha256()
    for s in samples:
        digest.update(struct.pack("<iq", s.label, s.view_id))
        digest.update(s.patch.pixels.tobytes())
    return digest.hexdigest()


def dump_views(views: Iterable[View], directory, noise_sigma: float) -> int:
    """Write one PGM per view plus a manifest CSV; returns the view count."""
    from pathlib import Path

    from .image import write_pgm

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for view in views:
        with open(directory / f"view_{view.view_id:05d}.pgm", "wb") as f:
            f.write(write_pgm(view.image))
        rows.append(manifest_row(view, noise_sigma))
    with open(directory / "manifest.csv", "w") as f:
        write_manifest(rows, f)
    return len(rows)


def manifest_row(view: View, noise_sigma: float) -> dict:
    d = view.deform
    return {
        "view_id": view.view_id,
        "theta": repr(d.theta),
        "phi": repr(d.phi),
        "lambda1": repr(d.lambda1),
        "lambda2": repr(d.lambda2),
        "tx": repr(d.tx),
        "ty": repr(d.ty),
        "noise_sigma": repr(float(noise_sigma)),
    }


def write_manifest(rows: Iterable[dict], fileobj) -> None:
    writer = csv.DictWriter(fileobj, fieldnames=MANIFEST_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def read_manifest(fileobj) -> list[dict]:
    reader = csv.DictReader(fileobj)
    if reader.fieldnames != MANIFEST_HEADER:
        raise InvalidArgument(f"unexpected manifest header {reader.fieldnames}")
    return [
        {
            "view_id": int(r["view_id"]),
            "deform": AffineDeform(
                float(r["theta"]),
                float(r["phi"]),
                float(r["lambda1"]),
                float(r["lambda2"]),
                float(r["tx"]),
                float(r["ty"]),
            ),
            "noise_sigma": float(r["noise_sigma"]),
        }
        for r in reader
    ]
