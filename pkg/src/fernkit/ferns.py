"""Semi-naive Bayesian fern classifier.

A fern is an ordered group of M binary pixel-pair comparisons; its M bits
form a leaf index into a per-class probability table. Ferns are combined
multiplicatively in log space (Naive-Bayes); an averaging combination is
kept alongside for the structure-versus-combination comparison.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptModel,
    FernkitError,
    FormatError,
    InvalidArgument,
    InvalidLabel,
    InvalidPatch,
    OutOfBounds,
)
from .image import GrayImage
from .keypoints import ClassSet, Keypoint

MODEL_MAGIC = b"FERNMDL1"
MODEL_VERSION = 1

DEFAULT_FERN_COUNT = 30
DEFAULT_FERN_SIZE = 10  # 30 x 10 = 300 binary features


class Combination(enum.Enum):
    """How per-unit class probabilities are fused into one decision."""

    AVERAGE = 0
    NAIVE_BAYES = 1


@dataclass(frozen=True)
class FeatureTest:
    """One binary comparison between two pixel offsets from the patch center."""

    dx1: int
    dy1: int
    dx2: int
    dy2: int

    def __post_init__(self):
        if (self.dx1, self.dy1) == (self.dx2, self.dy2):
            raise InvalidArgument("feature offsets must differ")


@dataclass(frozen=True)
class Fern:
    """An ordered group of M feature tests; test 0 is the leaf's MSB."""

    tests: tuple[FeatureTest, ...]

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        if not self.tests:
            raise InvalidArgument("a fern needs at least one test")

    @property
    def size(self) -> int:
        return len(self.tests)


def random_tests(
    count: int, patch_size: int, rng: np.random.Generator
) -> list[FeatureTest]:
    """Draw ``count`` tests with offsets uniform over the patch square.

    Coincident offset pairs are redrawn. Draws are sequential, so the first
    k tests of a longer draw equal a fresh draw of k tests under one seed.
    """
    if patch_size < 3 or patch_size % 2 == 0:
        raise InvalidArgument("patch_size must be odd and >= 3")
    reach = patch_size // 2
    tests = []
    for _ in range(count):
        while True:
            dx1, dy1, dx2, dy2 = (int(v) for v in rng.integers(-reach, reach + 1, 4))
            if (dx1, dy1) != (dx2, dy2):
                break
        tests.append(FeatureTest(dx1, dy1, dx2, dy2))
    return tests


def make_random_ferns(
    s: int, m: int, patch_size: int, rng: np.random.Generator
) -> list[Fern]:
    """Build S ferns of M random tests each, deterministic under the seed."""
    if s < 1 or m < 1:
        raise InvalidArgument("need at least one fern with one test")
    return [Fern(tuple(random_tests(m, patch_size, rng))) for _ in range(s)]


def eval_feature(img: GrayImage, center: Keypoint, test: FeatureTest) -> int:
    """1 iff the intensity at center+d1 is strictly below the one at center+d2."""
    cx, cy = int(round(center.x)), int(round(center.y))
    x1, y1 = cx + test.dx1, cy + test.dy1
    x2, y2 = cx + test.dx2, cy + test.dy2
    for x, y in ((x1, y1), (x2, y2)):
        if not (0 <= x < img.width and 0 <= y < img.height):
            raise OutOfBounds(f"feature offset lands at ({x}, {y})")
    return 1 if img.pixels[y1, x1] < img.pixels[y2, x2] else 0


def eval_fern(img: GrayImage, center: Keypoint, fern: Fern) -> int:
    """Concatenate the fern's bits into a leaf index, test 0 most significant."""
    leaf = 0
    for test in fern.tests:
        leaf = (leaf << 1) | eval_feature(img, center, test)
    return leaf


def _tests_to_offsets(units: Sequence[Sequence[FeatureTest]]):
    """Stack per-unit tests into (U, M) offset arrays for vectorized gathers."""
    d1x = np.array([[t.dx1 for t in ts] for ts in units], dtype=np.intp)
    d1y = np.array([[t.dy1 for t in ts] for ts in units], dtype=np.intp)
    d2x = np.array([[t.dx2 for t in ts] for ts in units], dtype=np.intp)
    d2y = np.array([[t.dy2 for t in ts] for ts in units], dtype=np.intp)
    return d1x, d1y, d2x, d2y


def _check_patch_batch(patches: np.ndarray, patch_size: int) -> np.ndarray:
    arr = np.asarray(patches)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.dtype != np.uint8:
        raise InvalidArgument("patches must be a (N, h, w) uint8 array")
    if arr.shape[1] < patch_size or arr.shape[2] < patch_size:
        raise InvalidPatch(
            f"patch {arr.shape[2]}x{arr.shape[1]} smaller than {patch_size}"
        )
    return arr


class FernModel:
    """S ferns x 2^M leaves x H classes of log-probabilities plus counts.

    Counts are kept so training is resumable, order-independent, and
    mergeable across shards; tables are rebuilt from counts with Laplace
    regularization after every training call.
    """

    def __init__(self, classes: ClassSet, ferns: Sequence[Fern]):
        ferns = tuple(ferns)
        if not ferns:
            raise InvalidArgument("need at least one fern")
        m = ferns[0].size
        if any(f.size != m for f in ferns):
            raise InvalidArgument("all ferns must share one size")
        reach = classes.patch_size // 2
        for f in ferns:
            for t in f.tests:
                if max(abs(t.dx1), abs(t.dy1), abs(t.dx2), abs(t.dy2)) > reach:
                    raise InvalidArgument("test offset outside the patch square")
        self.classes = classes
        self.ferns = ferns
        self.patch_size = classes.patch_size
        self.num_ferns = len(ferns)
        self.fern_size = m
        self.num_classes = len(classes)
        self.num_leaves = 1 << m
        self.counts = np.zeros(
            (self.num_ferns, self.num_leaves, self.num_classes), dtype=np.uint64
        )
        self.log_prior = np.full(self.num_classes, -np.log(self.num_classes))
        self.log_table = np.empty_like(self.counts, dtype=np.float64)
        self._rebuild_tables()
        self._d1x, self._d1y, self._d2x, self._d2y = _tests_to_offsets(
            [f.tests for f in ferns]
        )
        self._weights = (1 << np.arange(m - 1, -1, -1)).astype(np.int64)
        self.pixel_comparisons = 0
        self.table_lookups = 0

    @classmethod
    def random(
        cls,
        classes: ClassSet,
        s: int = DEFAULT_FERN_COUNT,
        m: int = DEFAULT_FERN_SIZE,
        rng: np.random.Generator | None = None,
    ) -> "FernModel":
        if rng is None:
            raise InvalidArgument("an explicit rng is required")
        return cls(classes, make_random_ferns(s, m, classes.patch_size, rng))

    # -- training ---------------------------------------------------------

    def train(self, samples: Iterable, chunk_size: int = 1024) -> "FernModel":
        """Accumulate leaf counts from (patch, label) pairs and rebuild tables.

        Accepts an iterable of (GrayImage, label) tuples or of objects with
        ``patch`` and ``label`` attributes (dataset PatchSamples).
        """
        for patches, labels in _batched(samples, self.patch_size, self.num_classes, chunk_size):
            self._accumulate(patches, labels)
        self._rebuild_tables()
        # training streams are balanced by construction, so the prior is
        # exactly uniform (and stays finite for classes never seen)
        self.log_prior = np.full(self.num_classes, -np.log(self.num_classes))
        return self

    def _accumulate(self, patches: np.ndarray, labels: np.ndarray) -> None:
        leaves = self.leaf_indices(patches)
        for s in range(self.num_ferns):
            np.add.at(self.counts[s], (leaves[:, s], labels), 1)

    def _rebuild_tables(self) -> None:
        totals = self.counts.sum(axis=1, dtype=np.float64)  # (S, H)
        probs = (self.counts.astype(np.float64) + 1.0) / (
            totals[:, None, :] + float(self.num_leaves)
        )
        self.log_table = np.log(probs)

    def merged(self, other: "FernModel") -> "FernModel":
        """Combine two shards trained on disjoint streams (count addition)."""
        if other.ferns != self.ferns or other.classes != self.classes:
            raise InvalidArgument("shards must share ferns and classes")
        out = FernModel(self.classes, self.ferns)
        out.counts = self.counts + other.counts
        out._rebuild_tables()
        return out

    # -- evaluation -------------------------------------------------------

    def leaf_indices(self, patches: np.ndarray) -> np.ndarray:
        """(N, S) leaf indices for a batch of patches centered on themselves."""
        arr = _check_patch_batch(patches, self.patch_size)
        cy, cx = arr.shape[1] // 2, arr.shape[2] // 2
        a = arr[:, cy + self._d1y, cx + self._d1x]
        b = arr[:, cy + self._d2y, cx + self._d2x]
        bits = (a < b).astype(np.int64)  # (N, S, M)
        self.pixel_comparisons += bits.size
        return bits @ self._weights

    def _leaves_at(self, img: GrayImage, center: Keypoint) -> np.ndarray:
        cx, cy = int(round(center.x)), int(round(center.y))
        reach = self.patch_size // 2
        if not (
            reach <= cx <= img.width - 1 - reach
            and reach <= cy <= img.height - 1 - reach
        ):
            raise OutOfBounds(f"patch around ({cx}, {cy}) leaves the image")
        a = img.pixels[cy + self._d1y, cx + self._d1x]
        b = img.pixels[cy + self._d2y, cx + self._d2x]
        bits = (a < b).astype(np.int64)
        self.pixel_comparisons += bits.size
        return bits @ self._weights  # (S,)

    def class_scores(self, img: GrayImage, center: Keypoint) -> np.ndarray:
        """Unnormalized log posterior per class at one location."""
        leaves = self._leaves_at(img, center)
        self.table_lookups += self.num_ferns
        scores = self.log_prior.copy()
        for s in range(self.num_ferns):
            scores += self.log_table[s, leaves[s], :]
        return scores

    def classify(self, img: GrayImage, center: Keypoint) -> tuple[int, float]:
        """Most probable class and its unnormalized log score; ties go low."""
        scores = self.class_scores(img, center)
        label = int(np.argmax(scores))
        return label, float(scores[label])

    def posterior(self, img: GrayImage, center: Keypoint) -> np.ndarray:
        """Normalized class posterior; sums to 1, argmax agrees with classify."""
        return _softmax(self.class_scores(img, center))

    def classify_patches(
        self,
        patches: np.ndarray,
        combination: Combination = Combination.NAIVE_BAYES,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Labels and scores for a patch batch.

        Naive-Bayes scores are unnormalized log posteriors; averaging scores
        are the winning class's mean per-fern posterior.
        """
        leaves = self.leaf_indices(patches)
        n = leaves.shape[0]
        self.table_lookups += n * self.num_ferns
        if combination is Combination.NAIVE_BAYES:
            scores = np.tile(self.log_prior, (n, 1))
            for s in range(self.num_ferns):
                scores += self.log_table[s, leaves[:, s], :]
        else:
            scores = np.zeros((n, self.num_classes))
            for s in range(self.num_ferns):
                scores += _softmax_rows(self.log_table[s, leaves[:, s], :] + self.log_prior)
            scores /= self.num_ferns
        labels = np.argmax(scores, axis=1)
        return labels, scores[np.arange(n), labels]

    def truncated(self, k: int) -> "FernModel":
        """A model over the first k ferns, sharing this model's counts."""
        if not 1 <= k <= self.num_ferns:
            raise InvalidArgument(f"k must be in [1, {self.num_ferns}]")
        out = FernModel(self.classes, self.ferns[:k])
        out.counts = self.counts[:k].copy()
        out._rebuild_tables()
        return out

    # -- serialization ----------------------------------------------------

    def save(self) -> bytes:
        """Little-endian model file; load() restores behavior bit-exactly."""
        head = MODEL_MAGIC + struct.pack(
            "<5I",
            MODEL_VERSION,
            self.num_classes,
            self.num_ferns,
            self.fern_size,
            self.patch_size,
        )
        kp = np.array(
            [[k.x, k.y] for k in self.classes.keypoints], dtype="<f4"
        ).tobytes()
        prior = self.log_prior.astype("<f8").tobytes()
        tests = np.array(
            [
                [[t.dx1, t.dy1, t.dx2, t.dy2] for t in f.tests]
                for f in self.ferns
            ],
            dtype="<i2",
        ).tobytes()
        counts = self.counts.astype("<u8").tobytes()
        table = self.log_table.astype("<f8").tobytes()
        return head + kp + prior + tests + counts + table

    @classmethod
    def load(cls, data: bytes) -> "FernModel":
        h, s, m, patch_size, pos = _read_header(data, MODEL_MAGIC, 4)
        num_leaves = 1 << m
        kp, pos = _take(data, pos, "<f4", (h, 2))
        prior, pos = _take(data, pos, "<f8", (h,))
        tests, pos = _take(data, pos, "<i2", (s, m, 4))
        counts, pos = _take(data, pos, "<u8", (s, num_leaves, h))
        table, pos = _take(data, pos, "<f8", (s, num_leaves, h))
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} trailing bytes")
        try:
            classes = ClassSet(
                tuple(Keypoint(float(x), float(y)) for x, y in kp), patch_size
            )
            ferns = [
                Fern(tuple(FeatureTest(*(int(v) for v in row)) for row in fern_tests))
                for fern_tests in tests
            ]
            model = cls(classes, ferns)
        except FernkitError as exc:
            raise CorruptModel(str(exc)) from exc
        model.counts = counts.astype(np.uint64)
        model.log_prior = prior.astype(np.float64)
        model.log_table = table.astype(np.float64)
        _validate_tables(
            model.counts, model.log_table, model.log_prior, kind="fern"
        )
        return model


def _softmax(scores: np.ndarray) -> np.ndarray:
    p = np.exp(scores - scores.max())
    return p / p.sum()


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    p = np.exp(scores - scores.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def _batched(samples: Iterable, patch_size: int, num_classes: int, chunk_size: int):
    """Yield (patches, labels) arrays from a stream of samples or pairs."""
    buf_patches: list[np.ndarray] = []
    buf_labels: list[int] = []
    for item in samples:
        if hasattr(item, "patch"):
            patch, label = item.patch, item.label
        else:
            patch, label = item
        pixels = patch.pixels if isinstance(patch, GrayImage) else np.asarray(patch)
        if pixels.shape[0] < patch_size or pixels.shape[1] < patch_size:
            raise InvalidPatch(
                f"patch {pixels.shape[1]}x{pixels.shape[0]} smaller than {patch_size}"
            )
        label = int(label)
        if not 0 <= label < num_classes:
            raise InvalidLabel(f"label {label} not in [0, {num_classes})")
        buf_patches.append(pixels)
        buf_labels.append(label)
        if len(buf_labels) >= chunk_size:
            yield np.stack(buf_patches), np.array(buf_labels)
            buf_patches.clear()
            buf_labels.clear()
    if buf_labels:
        yield np.stack(buf_patches), np.array(buf_labels)


def _read_header(data: bytes, magic: bytes, extra_fields: int):
    """Parse magic, version, and the u32 dimension fields; returns (*dims, pos)."""
    fixed = len(magic) + 4 * (1 + extra_fields)
    if len(data) < fixed:
        raise FormatError("file shorter than its header")
    if data[: len(magic)] != magic:
        raise FormatError(f"bad magic {data[:len(magic)]!r}")
    values = struct.unpack_from(f"<{1 + extra_fields}I", data, len(magic))
    if values[0] != MODEL_VERSION:
        raise FormatError(f"unsupported version {values[0]}")
    return (*values[1:], fixed)


def _take(data: bytes, pos: int, dtype: str, shape: tuple):
    count = int(np.prod(shape))
    nbytes = count * np.dtype(dtype).itemsize
    if pos + nbytes > len(data):
        raise FormatError("truncated model file")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
    return arr, pos + nbytes


def _validate_tables(
    counts: np.ndarray, log_table: np.ndarray, log_prior: np.ndarray, kind: str
) -> None:
    """Check the invariants a well-formed model file must satisfy."""
    if np.any(log_table > 1e-12):
        raise CorruptModel(f"{kind} log-probabilities must be <= 0")
    sums = np.exp(log_table).sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise CorruptModel(f"{kind} leaf distributions do not sum to 1")
    totals = counts.sum(axis=1)
    if np.any(totals != totals[0]):
        raise CorruptModel("per-class sample totals disagree across units")
    if abs(np.exp(log_prior).sum() - 1.0) > 1e-12:
        raise CorruptModel("class prior does not sum to 1")
