import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgedet.boxes import AnnotatedBox
from kgedet.evaluation import (
    ConfusionMatrix,
    average_precision,
    category_confusion,
    confusion_from_labels,
    confusion_matrix,
    error_distribution_comparison,
    js_distance,
)
from kgedet.knowledge_graph import CategoryMap
from oracles import envelope_average_precision


def det(image, box, label, score):
    return AnnotatedBox(image_id=image, box=box, label=label, score=score)


def gt(image, box, label):
    return AnnotatedBox(image_id=image, box=box, label=label)


BOX_A = (0.0, 0.0, 10.0, 10.0)
BOX_B = (20.0, 20.0, 30.0, 30.0)
FAR = (50.0, 50.0, 60.0, 60.0)


class TestAveragePrecision:
    def test_perfect_detections(self):
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "dog"), gt("i2", BOX_A, "cat")]
        dets = [det(g.image_id, g.box, g.label, 1.0) for g in gts]
        report = average_precision(dets, gts)
        assert report.ap == 1.0
        assert report.ap50 == 1.0 and report.ap75 == 1.0
        assert report.ap_weighted == 1.0
        assert report.per_class == {"cat": 1.0, "dog": 1.0}

    def test_no_detections(self):
        report = average_precision([], [gt("i1", BOX_A, "cat")])
        assert report.ap == 0.0

    def test_three_detection_fixture_matches_envelope_oracle(self):
        # 2 groundtruth; detections ranked TP, FP, TP
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "cat")]
        dets = [
            det("i1", BOX_A, "cat", 0.9),
            det("i1", FAR, "cat", 0.8),
            det("i1", BOX_B, "cat", 0.7),
        ]
        report = average_precision(dets, gts)
        # envelope: precision 1 for recall <= 0.5, then 2/3
        # -> (51 * 1 + 50 * 2/3) / 101 = 253/303
        assert report.ap == pytest.approx(253.0 / 303.0, abs=1e-12)
        assert report.ap == pytest.approx(envelope_average_precision([1, 0, 1], 2), abs=1e-12)

    def test_score_rank_invariance(self):
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "cat")]
        dets = [
            det("i1", BOX_A, "cat", 0.9),
            det("i1", FAR, "cat", 0.5),
            det("i1", BOX_B, "cat", 0.2),
        ]
        rescaled = [
            AnnotatedBox(d.image_id, d.box, d.label, d.score**3) for d in dets
        ]
        a = average_precision(dets, gts)
        b = average_precision(rescaled, gts)
        assert a.to_json() == b.to_json()

    def test_class_without_groundtruth_excluded_and_reported(self):
        gts = [gt("i1", BOX_A, "cat")]
        dets = [det("i1", BOX_A, "cat", 1.0), det("i1", BOX_B, "ghost", 0.9)]
        report = average_precision(dets, gts)
        assert report.excluded_classes == ["ghost"]
        assert report.ap == 1.0

    def test_weighted_mean_uses_instance_counts(self):
        # cat: 2 instances, both found -> AP 1; dog: 1 instance, missed -> AP 0
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "cat"), gt("i2", BOX_A, "dog")]
        dets = [det("i1", BOX_A, "cat", 0.9), det("i1", BOX_B, "cat", 0.8)]
        report = average_precision(dets, gts)
        assert report.ap == pytest.approx(0.5)
        assert report.ap_weighted == pytest.approx(2.0 / 3.0)

    def test_category_report_forgives_within_category_mistakes(self):
        categories = CategoryMap.from_json({"cat": "pets", "dog": "pets", "car": "vehicles"})
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "car")]
        dets = [det("i1", BOX_A, "dog", 0.9), det("i1", BOX_B, "car", 0.9)]
        report = average_precision(dets, gts, categories=categories)
        assert report.ap == pytest.approx(0.5)  # cat missed at class level
        assert report.ap_category == 1.0
        assert report.ap_category_weighted == 1.0
        assert set(report.per_category) == {"pets", "vehicles"}

    def test_detection_without_score_rejected(self):
        with pytest.raises(ValueError, match="scores"):
            average_precision([gt("i1", BOX_A, "cat")], [gt("i1", BOX_A, "cat")])

    def test_empty_groundtruth_rejected(self):
        with pytest.raises(ValueError, match="groundtruth"):
            average_precision([], [])

    def test_double_detection_counts_one_tp(self):
        gts = [gt("i1", BOX_A, "cat")]
        dets = [det("i1", BOX_A, "cat", 0.9), det("i1", BOX_A, "cat", 0.8)]
        report = average_precision(dets, gts)
        # second detection is an unmatched duplicate -> FP at rank 2
        assert report.ap == pytest.approx(envelope_average_precision([1, 0], 1))


class TestConfusionMatrix:
    CLASSES = ["cat", "dog", "car"]

    def test_all_correct_is_diagonal(self):
        gts = [gt("i1", BOX_A, "cat"), gt("i1", BOX_B, "dog")]
        dets = [det("i1", BOX_A, "cat", 0.9), det("i1", BOX_B, "dog", 0.8)]
        m = confusion_matrix(dets, gts, self.CLASSES)
        expected = np.zeros((3, 4), dtype=np.int64)
        expected[0, 0] = expected[1, 1] = 1
        np.testing.assert_array_equal(m.counts, expected)

    def test_highest_score_wins(self):
        gts = [gt("i1", BOX_A, "cat")]
        dets = [det("i1", BOX_A, "cat", 0.9), det("i1", BOX_A, "dog", 0.95)]
        m = confusion_matrix(dets, gts, self.CLASSES)
        assert m.counts[0, 1] == 1 and m.counts[0, 0] == 0

    def test_iou_below_floor_is_missed(self):
        gts = [gt("i1", (0, 0, 10, 10), "cat")]
        # IoU = 7.9/ (10 + 7.9·... ) construct: shifted box with IoU < 0.8
        dets = [det("i1", (2.5, 0, 12.5, 10), "cat", 1.0)]  # IoU = 0.6
        m = confusion_matrix(dets, gts, self.CLASSES)
        assert m.counts[0, 3] == 1

    def test_row_sums_equal_groundtruth_counts(self, rng):
        gts, dets = [], []
        for i in range(40):
            image = f"im{i % 5}"
            x, y = rng.uniform(0, 50, size=2)
            box = (x, y, x + 10, y + 10)
            label = str(rng.choice(self.CLASSES))
            gts.append(gt(image, box, label))
            if rng.random() < 0.7:
                jitter = rng.uniform(-1, 1, size=2)
                dbox = (x + jitter[0], y + jitter[1], x + 10 + jitter[0], y + 10 + jitter[1])
                dets.append(det(image, dbox, str(rng.choice(self.CLASSES)), float(rng.random())))
        m = confusion_matrix(dets, gts, self.CLASSES)
        gt_counts = {c: sum(1 for g in gts if g.label == c) for c in self.CLASSES}
        for i, c in enumerate(self.CLASSES):
            assert m.counts[i].sum() == gt_counts[c]

    def test_csv_round_trip(self):
        m = ConfusionMatrix(classes=["a", "b"], counts=np.array([[1, 2, 3], [0, 4, 1]]))
        again = ConfusionMatrix.from_csv(m.to_csv())
        assert again.classes == m.classes
        np.testing.assert_array_equal(again.counts, m.counts)

    def test_from_labels(self):
        m = confusion_from_labels([1, 1, 2, 2, 1], [1, 2, 2, 0, 1], ["a", "b"])
        np.testing.assert_array_equal(m.counts, [[2, 1, 0], [0, 1, 1]])

    def test_unknown_groundtruth_label(self):
        with pytest.raises(ValueError, match="not in class list"):
            confusion_matrix([], [gt("i", BOX_A, "zebra")], self.CLASSES)


class TestJsDistance:
    def test_identical_rows(self):
        assert js_distance([1, 2, 3], [2, 4, 6]) == 0.0

    def test_disjoint_support_is_one(self):
        assert js_distance([1, 0, 2, 0], [0, 3, 0, 1]) == pytest.approx(1.0, abs=1e-12)

    def test_all_zero_row_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            js_distance([0, 0], [1, 0])

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            js_distance([-1, 2], [1, 0])

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 100_000))
    def test_symmetry_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.uniform(0, 5, size=(2, 6)) + 1e-12
        d = js_distance(p, q)
        assert d == pytest.approx(js_distance(q, p), abs=1e-12)
        assert 0.0 <= d <= 1.0 + 1e-12

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 100_000))
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        p, q, r = rng.uniform(0, 5, size=(3, 5)) + 1e-12
        assert js_distance(p, r) <= js_distance(p, q) + js_distance(q, r) + 1e-12


def matrix(classes, rows):
    return ConfusionMatrix(classes=classes, counts=np.array(rows, dtype=np.int64))


class TestErrorDistributionComparison:
    CLASSES = ["a", "b", "c"]

    def fixture_pair(self):
        e_a = matrix(self.CLASSES, [[5, 2, 1, 0], [1, 6, 3, 1], [2, 2, 7, 0]])
        e_b = matrix(self.CLASSES, [[5, 1, 2, 0], [2, 6, 2, 1], [2, 2, 7, 0]])
        return e_a, e_b

    def test_identical_matrices_all_zero(self):
        e_a, _ = self.fixture_pair()
        cmp = error_distribution_comparison(e_a, e_a, {"a": 8, "b": 11, "c": 11})
        assert all(v == 0.0 for v in cmp.per_class.values())
        assert cmp.weighted_mean == 0.0

    def test_single_differing_row(self):
        e_a = matrix(self.CLASSES, [[0, 2, 1, 0], [1, 0, 3, 0], [2, 2, 0, 0]])
        rows_b = [[0, 2, 1, 0], [3, 0, 1, 0], [2, 2, 0, 0]]
        e_b = matrix(self.CLASSES, rows_b)
        cmp = error_distribution_comparison(e_a, e_b, {"a": 1, "b": 1, "c": 1})
        nonzero = [k for k, v in cmp.per_class.items() if v and v > 0]
        assert nonzero == ["b"]

    def test_matches_direct_scalar_recomputation(self):
        e_a, e_b = self.fixture_pair()
        weights = {"a": 8.0, "b": 11.0, "c": 11.0}
        cmp = error_distribution_comparison(e_a, e_b, weights)
        import math

        def row_js(pa, pb):
            pa = np.asarray(pa, float) / np.sum(pa)
            pb = np.asarray(pb, float) / np.sum(pb)
            m = (pa + pb) / 2
            kl_a = sum(x * math.log2(x / y) for x, y in zip(pa, m) if x > 0)
            kl_b = sum(x * math.log2(x / y) for x, y in zip(pb, m) if x > 0)
            return math.sqrt((kl_a + kl_b) / 2)

        expected = {
            "a": row_js([2, 1], [1, 2]),
            "b": row_js([1, 3], [2, 2]),
            "c": row_js([2, 2], [2, 2]),
        }
        for name in self.CLASSES:
            assert cmp.per_class[name] == pytest.approx(expected[name], abs=1e-12)
        total = sum(weights.values())
        mean = sum(expected[n] * weights[n] for n in self.CLASSES) / total
        assert cmp.weighted_mean == pytest.approx(mean, abs=1e-12)

    def test_zero_error_rows_skipped(self):
        e_a = matrix(self.CLASSES, [[5, 0, 0, 0], [1, 6, 3, 0], [2, 2, 7, 0]])
        e_b = matrix(self.CLASSES, [[5, 1, 2, 0], [2, 6, 2, 0], [2, 2, 7, 0]])
        cmp = error_distribution_comparison(e_a, e_b, {"a": 1, "b": 1, "c": 1})
        assert cmp.skipped == ["a"]
        assert cmp.per_class["a"] is None

    def test_mismatched_classes_rejected(self):
        e_a, _ = self.fixture_pair()
        other = matrix(["x", "y", "z"], [[0, 0, 0, 0]] * 3)
        with pytest.raises(ValueError, match="class order"):
            error_distribution_comparison(e_a, other, {})

    def test_csv_contains_weighted_mean(self):
        e_a, e_b = self.fixture_pair()
        cmp = error_distribution_comparison(e_a, e_b, {"a": 1, "b": 1, "c": 1})
        assert "__weighted_mean__" in cmp.to_csv()


class TestCategoryConfusion:
    CATEGORIES = CategoryMap.from_json(
        {"cat": "pets", "dog": "pets", "car": "vehicles", "bus": "vehicles"}
    )
    CLASSES = ["cat", "dog", "car", "bus"]

    def test_diagonal_matrix_degenerate(self):
        counts = np.zeros((4, 5), dtype=np.int64)
        np.fill_diagonal(counts[:, :4], 3)
        split = category_confusion(ConfusionMatrix(self.CLASSES, counts), self.CATEGORIES)
        assert (split.intra, split.inter, split.fraction_intra) == (0, 0, 0.0)
        assert split.degenerate

    def test_all_confusions_within_one_category(self):
        counts = np.zeros((4, 5), dtype=np.int64)
        counts[0, 1] = 4  # cat -> dog
        split = category_confusion(ConfusionMatrix(self.CLASSES, counts), self.CATEGORIES)
        assert split.fraction_intra == 1.0 and not split.degenerate

    def test_mixed_fixture_hand_count(self):
        counts = np.zeros((4, 5), dtype=np.int64)
        counts[0, 1] = 2  # cat->dog   intra
        counts[1, 0] = 1  # dog->cat   intra
        counts[0, 2] = 3  # cat->car   inter
        counts[3, 2] = 1  # bus->car   intra
        counts[2, 1] = 2  # car->dog   inter
        counts[1, 4] = 5  # dog missed -> not a confusion
        split = category_confusion(ConfusionMatrix(self.CLASSES, counts), self.CATEGORIES)
        assert split.intra == 4
        assert split.inter == 5
        assert split.fraction_intra == pytest.approx(4 / 9)
        assert split.misses == 5

    def test_intra_plus_inter_equals_offdiagonal(self, rng):
        counts = rng.integers(0, 6, size=(4, 5))
        m = ConfusionMatrix(self.CLASSES, counts)
        split = category_confusion(m, self.CATEGORIES)
        off_diag = m.foreground().sum() - np.trace(m.foreground())
        assert split.intra + split.inter == off_diag

    def test_unmapped_class_rejected(self):
        cm = CategoryMap.from_json({"cat": "pets"})
        m = ConfusionMatrix(["cat", "dog"], np.zeros((2, 3), dtype=np.int64))
        with pytest.raises(ValueError, match="missing"):
            category_confusion(m, cm)
