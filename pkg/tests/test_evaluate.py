import csv
import io

import numpy as np
import pytest

from fernkit import (
    DatasetSpec,
    EmptyTestSet,
    EvalRecord,
    FernModel,
    InvalidArgument,
    Method,
    bench_classify,
    compare_methods,
    recognition_rate,
    sweep_units,
)
from fernkit.dataset import STREAM_MODEL, derive_rng, generate_test_set
from fernkit.evaluate import CSV_HEADER, materialize, write_records_csv

from support import random_patches, rate_oracle


class StubModel:
    """Duck-typed classifier with a fixed answer per patch checksum."""

    def __init__(self, answers):
        self.answers = answers

    def classify_patches(self, patches, combination=None):
        labels = np.array([self.answers(p) for p in patches])
        return labels, np.zeros(len(labels))


class FakeSample:
    def __init__(self, patch, label):
        from fernkit import GrayImage

        self.patch = GrayImage(patch)
        self.label = label


def labeled_stream(n, h, size=9, seed=0):
    rng = np.random.default_rng(seed)
    patches = random_patches(rng, n, size)
    labels = rng.integers(0, h, n)
    return [FakeSample(p, int(l)) for p, l in zip(patches, labels)], patches, labels


class TestRecognitionRate:
    def test_oracle_model_scores_one(self):
        samples, patches, labels = labeled_stream(30, 4)
        lookup = {p.tobytes(): int(l) for p, l in zip(patches, labels)}
        model = StubModel(lambda p: lookup[p.tobytes()])
        assert recognition_rate(model, iter(samples)) == 1.0

    def test_constant_model_on_balanced_two_classes(self):
        samples, _, _ = labeled_stream(40, 2)
        for s, label in zip(samples, [0, 1] * 20):
            s.label = label
        model = StubModel(lambda p: 0)
        assert recognition_rate(model, iter(samples)) == 0.5

    def test_matches_confusion_matrix_oracle(self, small_model, texture_small, small_classes):
        spec = DatasetSpec(1, 1, test_views=30)
        samples = list(
            generate_test_set(texture_small, small_classes, spec, seed=2)
        )
        rate = recognition_rate(small_model, iter(samples))
        patches, labels = materialize(iter(samples))
        predicted, _ = small_model.classify_patches(patches)
        assert rate == pytest.approx(rate_oracle(labels, predicted), abs=1e-12)

    def test_empty_stream(self, small_model):
        with pytest.raises(EmptyTestSet):
            recognition_rate(small_model, iter([]))


class TestEvalRecord:
    def test_rate_bounds_enforced(self):
        with pytest.raises(InvalidArgument):
            EvalRecord("FernNB", 1, 1.5, 10, 1.0, 0)

    def test_patch_count_enforced(self):
        with pytest.raises(InvalidArgument):
            EvalRecord("FernNB", 1, 0.5, 0, 1.0, 0)


class TestSweep:
    def test_record_per_unit_count_and_prefix_property(
        self, texture_small, small_classes
    ):
        spec = DatasetSpec(1, 30, test_views=25)
        counts = [1, 3, 6]
        records = sweep_units(
            texture_small, small_classes, spec, Method.FERN_NB, counts, seed=13,
            fern_size=5,
        )
        assert [r.units for r in records] == counts
        assert all(r.method == "FernNB" for r in records)
        assert all(r.seed == 13 for r in records)

        # prefix oracle: a freshly built and trained 3-fern model from the
        # same seed reproduces the k=3 sweep point exactly
        from fernkit.dataset import generate_training_set

        fresh = FernModel.random(
            small_classes, 3, 5, derive_rng(13, STREAM_MODEL)
        )
        fresh.train(
            generate_training_set(texture_small, small_classes, spec, 13)
        )
        fresh_rate = recognition_rate(
            fresh, generate_test_set(texture_small, small_classes, spec, 13)
        )
        assert fresh_rate == pytest.approx(records[1].recognition_rate, abs=1e-12)

    def test_tree_sweep_runs(self, texture_small, small_classes):
        spec = DatasetSpec(1, 20, test_views=15)
        records = sweep_units(
            texture_small, small_classes, spec, Method.TREE_NB, [1, 2], seed=3,
            fern_size=4,
        )
        assert [r.units for r in records] == [1, 2]
        assert all(r.method == "TreeNB" for r in records)

    def test_empty_unit_counts_rejected(self, texture_small, small_classes):
        with pytest.raises(InvalidArgument):
            sweep_units(
                texture_small, small_classes, DatasetSpec(1, 1), Method.FERN_NB,
                [], seed=1,
            )


class TestCompareMethods:
    def test_emits_four_records_sharing_everything(
        self, texture_small, small_classes
    ):
        spec = DatasetSpec(1, 30, test_views=25)
        records = compare_methods(
            texture_small, small_classes, spec, units=4, seed=21, fern_size=5
        )
        assert [r.method for r in records] == [
            "FernNB",
            "FernAvg",
            "TreeNB",
            "TreeAvg",
        ]
        assert len({r.patches_evaluated for r in records}) == 1
        assert all(r.units == 4 for r in records)

    def test_rerun_identical(self, texture_small, small_classes):
        spec = DatasetSpec(1, 20, test_views=15)
        a = compare_methods(texture_small, small_classes, spec, 3, 8, fern_size=4)
        b = compare_methods(texture_small, small_classes, spec, 3, 8, fern_size=4)
        assert [r.recognition_rate for r in a] == [r.recognition_rate for r in b]


class TestBench:
    def test_comparison_count_is_s_times_m(self, small_model):
        probe = random_patches(np.random.default_rng(1), 64, small_model.patch_size)
        result = bench_classify(small_model, probe, repetitions=3)
        assert result.comparisons_per_patch == (
            small_model.num_ferns * small_model.fern_size
        )
        assert result.ns_per_patch > 0

    def test_single_repetition(self, small_model):
        probe = random_patches(np.random.default_rng(2), 16, small_model.patch_size)
        result = bench_classify(small_model, probe, repetitions=1)
        assert result.ns_per_patch > 0

    def test_bad_args(self, small_model):
        probe = random_patches(np.random.default_rng(3), 4, small_model.patch_size)
        with pytest.raises(InvalidArgument):
            bench_classify(small_model, probe, repetitions=0)
        with pytest.raises(InvalidArgument):
            bench_classify(small_model, probe[:0], repetitions=1)

    def test_scaling_with_fern_count(self, small_classes):
        # doubling S should roughly double the per-patch cost; the band is
        # wide because wall-clock scaling is machine dependent
        rng = np.random.default_rng(4)
        small = FernModel.random(small_classes, 8, 6, derive_rng(5, STREAM_MODEL))
        big = FernModel.random(small_classes, 16, 6, derive_rng(5, STREAM_MODEL))
        probe = random_patches(rng, 3000, small_classes.patch_size)
        bench_classify(small, probe, 1)  # warm both paths
        bench_classify(big, probe, 1)
        t_small = bench_classify(small, probe, 5).ns_per_patch
        t_big = bench_classify(big, probe, 5).ns_per_patch
        assert t_big / t_small < 2.0 * 2.5
        assert t_big > t_small * 0.8


class TestCsv:
    def test_header_and_parse(self):
        records = [
            EvalRecord("FernNB", 5, 0.75, 100, 1234.5, 42),
            EvalRecord("TreeAvg", 5, 0.5, 100, 999.0, 42),
        ]
        buf = io.StringIO()
        write_records_csv(records, buf)
        buf.seek(0)
        reader = csv.DictReader(buf)
        assert reader.fieldnames == CSV_HEADER
        rows = list(reader)
        assert rows[0]["method"] == "FernNB"
        assert float(rows[0]["recognition_rate"]) == 0.75
        assert int(rows[1]["seed"]) == 42
        assert CSV_HEADER == [
            "method",
            "units",
            "recognition_rate",
            "patches",
            "ns_per_patch",
            "seed",
        ]
