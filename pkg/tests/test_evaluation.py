# -*- coding: utf-8 -*-
"""
Test hit matching, FROC and the classification and patient metrics.
"""

import numpy as np
import pytest

from lung_dpn.data.annotations import AnnotationRecord
from lung_dpn.detection.boxes import Box3
from lung_dpn.detection.postprocess import Detection
from lung_dpn.errors import DataError, DimensionError
from lung_dpn.evaluation.froc import FROC_RATES, froc
from lung_dpn.evaluation.matching import ABSORBED, FP, TP, match_detections
from lung_dpn.evaluation.metrics import (
    CANCER,
    NON_CANCER,
    accuracy,
    borderline_stats,
    cohen_kappa,
    mean_log_likelihood,
    patient_diagnosis,
    rater_agreement,
    tp_fp_split_eval,
)


def det(x, y, z, p, d=4.0):
    return Detection(Box3(x, y, z, d), p, float(np.log(p / (1 - p))))


def random_instance(rng, n_volumes):
    volumes = []
    for _ in range(n_volumes):
        gts = [Box3(*rng.uniform(10, 90, 3), rng.uniform(4, 20)) for _ in range(rng.integers(0, 4))]
        dets = []
        for _ in range(rng.integers(0, 11)):
            if gts and rng.random() < 0.5:
                g = gts[rng.integers(len(gts))]
                center = g.center + rng.uniform(-0.4, 0.4, 3) * g.d
            else:
                center = rng.uniform(0, 100, 3)
            dets.append(det(*center, p=float(np.round(rng.uniform(0.01, 0.99), 2))))
        volumes.append((dets, gts))
    return volumes


def brute_force_froc_score(volumes):
    """Re-match every thresholded subset and read off the official rates."""
    n_gt = sum(len(g) for _, g in volumes)
    thresholds = sorted({d.probability for dets, _ in volumes for d in dets} | {np.inf})
    points = []
    for t in thresholds:
        tp = fp = 0
        for dets, gts in volumes:
            result = match_detections([d for d in dets if d.probability >= t], gts)
            tp += int(np.sum(result.is_tp))
            fp += result.n_fp
        points.append((fp / len(volumes), tp / n_gt))
    sens = [max([s for f, s in points if f <= rate] + [0.0]) for rate in FROC_RATES]
    return float(np.mean(sens))


@pytest.mark.unit
class TestMatching:
    """Test centre-in-nodule matching."""

    def test_centre_hit(self):
        """Test that a detection at the gt centre is a true positive."""
        result = match_detections([det(10, 10, 10, 0.9)], [Box3(10, 10, 10, 6)])
        assert result.status.tolist() == [TP]
        assert result.gt_hit.tolist() == [True]

    def test_boundary_miss(self):
        """Test that a centre just past d/2 is a false positive."""
        result = match_detections([det(13.0 + 1e-9, 10, 10, 0.9)], [Box3(10, 10, 10, 6)])
        assert result.status.tolist() == [FP]
        assert result.n_fp == 1

    def test_duplicates_are_absorbed(self):
        """Test that a second detection inside a hit gt is neither TP nor FP."""
        result = match_detections(
            [det(10, 10, 11, 0.6), det(10, 10, 10, 0.9)], [Box3(10, 10, 10, 6)]
        )
        assert result.status.tolist() == [ABSORBED, TP]
        assert result.n_fp == 0 and result.gt_index.tolist() == [0, 0]

    def test_nearest_unhit_gt(self):
        """Test that a detection inside two gts hits the nearer unhit one."""
        gts = [Box3(0, 0, 0, 10), Box3(3, 0, 0, 10)]
        result = match_detections([det(2, 0, 0, 0.9), det(1, 0, 0, 0.8)], gts)
        assert result.gt_index.tolist() == [1, 0]
        assert result.status.tolist() == [TP, TP]

    def test_permutation_invariance(self, rng):
        """Test that shuffling the detections only permutes the per-detection output."""
        for dets, gts in random_instance(rng, 10):
            order = rng.permutation(len(dets))
            a = match_detections(dets, gts)
            b = match_detections([dets[i] for i in order], gts)
            assert np.array_equal(a.gt_hit, b.gt_hit)
            assert np.array_equal(a.status[order], b.status)


@pytest.mark.unit
class TestFroc:
    """Test the FROC sweep."""

    def test_official_rates(self):
        """Test the seven FP-per-scan operating points."""
        assert FROC_RATES == (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

    def test_perfect_detector(self):
        """Test that hitting every gt at p = 1 with no FP scores 1."""
        gts = [Box3(10, 10, 10, 6), Box3(40, 40, 40, 6)]
        result = match_detections([det(10, 10, 10, 0.999), det(40, 40, 40, 0.999)], gts)
        assert froc([result]).score == pytest.approx(1.0)

    def test_no_detections(self):
        """Test that an empty detection list scores 0."""
        assert froc([match_detections([], [Box3(1, 1, 1, 2)])]).score == 0.0

    def test_no_ground_truth_raises(self):
        """Test that sensitivity without gt nodules is an error."""
        with pytest.raises(DataError):
            froc([match_detections([det(1, 1, 1, 0.5)], [])])
        with pytest.raises(DataError):
            froc([])

    def test_step_interpolation(self):
        """Test a hand-counted curve over two scans."""
        gts = [Box3(10, 10, 10, 6), Box3(50, 50, 50, 6)]
        dets = [det(10, 10, 10, 0.9), det(90, 90, 90, 0.8), det(50, 50, 50, 0.3)]
        curve = froc([match_detections(dets, gts), match_detections([], [])])
        # thresholds 0.9 → (0, 0.5); 0.8 → (0.5, 0.5); 0.3 → (0.5, 1.0)
        expected = [0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0]
        assert curve.sensitivities == pytest.approx(expected), f"Got {curve.sensitivities}"
        assert curve.score == pytest.approx(6.0 / 7.0)

    def test_matches_brute_force(self):
        """Test the one-pass sweep against re-matching at every threshold."""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            volumes = random_instance(rng, int(rng.integers(1, 6)))
            if sum(len(g) for _, g in volumes) == 0:
                continue
            curve = froc([match_detections(d, g) for d, g in volumes])
            assert abs(curve.score - brute_force_froc_score(volumes)) <= 1e-12
            sens = [s for _, s in curve.points]
            assert all(a <= b for a, b in zip(sens, sens[1:])), "sensitivity decreases along the curve"


@pytest.mark.unit
class TestClassificationMetrics:
    """Test accuracy, kappa, log likelihood and borderline statistics."""

    def test_accuracy_examples(self):
        """Test the worked accuracy examples."""
        assert accuracy([0.9, 0.1], [1, 0]) == 1.0
        assert accuracy([0.9, 0.9], [1, 0]) == 0.5
        assert accuracy([0.6, 0.4, 0.9], [1, 1, 0]) == pytest.approx(1.0 / 3.0)

    def test_metric_input_errors(self):
        """Test empty and mismatched inputs."""
        with pytest.raises(DataError):
            accuracy([], [])
        with pytest.raises(DimensionError):
            cohen_kappa([1, 0], [1])

    def test_kappa_confusion_example(self):
        """Test that confusion [[45, 5], [10, 40]] gives kappa 0.7."""
        a = [1] * 45 + [1] * 5 + [0] * 10 + [0] * 40
        b = [1] * 45 + [0] * 5 + [1] * 10 + [0] * 40
        assert cohen_kappa(a, b) == pytest.approx(0.7)

    def test_kappa_degenerate_cases(self):
        """Test identical raters, a constant rater and full expected agreement."""
        labels = [1, 0, 1, 0]
        assert cohen_kappa(labels, labels) == pytest.approx(1.0)
        assert cohen_kappa([1, 1, 1, 1], labels) == pytest.approx(0.0)
        assert cohen_kappa([1, 1], [1, 1]) == 1.0
        assert cohen_kappa([1, 1], [0, 0]) == 0.0

    def test_log_likelihood_examples(self):
        """Test the clamped, uniform and worked log-likelihood values."""
        assert mean_log_likelihood([1.0], [1]) == pytest.approx(0.0, abs=1e-5)
        assert mean_log_likelihood([0.5, 0.5], [1, 0]) == pytest.approx(-np.log(2))
        assert mean_log_likelihood([0.9, 0.2], [1, 0]) == pytest.approx(-0.1642, abs=1e-4)
        assert np.isfinite(mean_log_likelihood([0.0], [1]))

    def test_borderline_examples(self):
        """Test the all-confident and uniform-grid cases and monotonicity."""
        assert set(borderline_stats([0.99] * 5).values()) == {100.0}
        grid = np.round(np.arange(1, 20) * 0.05, 2)
        stats = borderline_stats(grid)
        assert stats[0.1] == pytest.approx(100.0 * 2 / 19, abs=0.01)
        values = [stats[t] for t in sorted(stats)]
        assert values == sorted(values), f"Frequencies not nondecreasing: {stats}"

    def test_rater_agreement(self):
        """Test a rater's confident verdicts against consensus."""
        records = [
            AnnotationRecord("a", (0, 0, 0), 5.0, (5, 4, 4)),
            AnnotationRecord("a", (9, 0, 0), 5.0, (1, 2, 4)),
            AnnotationRecord("b", (0, 0, 0), 5.0, (3, 4, 5)),
            AnnotationRecord("b", (9, 0, 0), 5.0, (2, 3, 4)),
        ]
        first = rater_agreement(records, 0)
        assert first.n == 2 and first.accuracy == 1.0
        third = rater_agreement(records, 2)
        assert third.n == 3
        assert third.accuracy == pytest.approx(2.0 / 3.0)


@pytest.mark.unit
class TestPatientLevel:
    """Test patient fusion and the TP/FP split."""

    def test_diagnosis_examples(self):
        """Test the OR rule on the worked examples."""
        assert patient_diagnosis([0.9, 0.1]) == CANCER
        assert patient_diagnosis([]) == NON_CANCER
        assert patient_diagnosis([0.2, 0.5, 0.49]) == NON_CANCER

    def test_diagnosis_is_or_of_nodules(self, rng):
        """Test the OR rule on 1,000 random prediction sets."""
        for _ in range(1000):
            preds = rng.random(int(rng.integers(0, 6))).tolist()
            expected = CANCER if any(p > 0.5 for p in preds) else NON_CANCER
            assert patient_diagnosis(preds) == expected

    def test_worked_split(self):
        """Test four matched and five unmatched detections."""
        gts = [Box3(10 + 30 * i, 10, 10, 6) for i in range(4)]
        labels = [1, 0, 1, 0]
        tps = [det(g.x, g.y, g.z, 0.9) for g in gts]
        fps = [det(200 + 20 * i, 200, 200, 0.5) for i in range(5)]
        preds = [0.9, 0.2, 0.3, 0.7] + [0.1, 0.2, 0.8, 0.4, 0.9]
        split = tp_fp_split_eval(tps + fps, gts, labels, preds)
        assert (split.n_tp, split.n_fp) == (4, 5)
        assert split.tp_accuracy == pytest.approx(0.5)
        assert split.fp_reduction == pytest.approx(0.6)

    def test_split_extremes(self):
        """Test all-negative and constant 0.6 classifiers on FP-only input."""
        fps = [det(200 + 20 * i, 0, 0, 0.5) for i in range(3)]
        assert tp_fp_split_eval(fps, [], [], [0.1] * 3).fp_reduction == 1.0
        split = tp_fp_split_eval(fps, [], [], [0.6] * 3)
        assert split.fp_reduction == 0.0
        assert split.tp_accuracy is None, "Empty TP set should be reported as N/A"

    def test_split_skips_excluded_gts(self):
        """Test that detections on excluded nodules are not scored."""
        split = tp_fp_split_eval([det(10, 10, 10, 0.9)], [Box3(10, 10, 10, 6)], [None], [0.9])
        assert split.n_tp == 0 and split.n_fp == 0

    def test_split_ignores_absorbed_duplicates(self):
        """Test that a duplicate detection on a hit nodule is in neither set."""
        gts = [Box3(10, 10, 10, 6)]
        dets = [det(10, 10, 10, 0.9), det(11, 10, 10, 0.8)]
        split = tp_fp_split_eval(dets, gts, [1], [0.9, 0.1])
        assert (split.n_tp, split.n_fp) == (1, 0)
        assert split.tp_accuracy == 1.0, "absorbed duplicate was scored against the nodule"

    def test_split_length_mismatch(self):
        """Test that one prediction per detection is required."""
        with pytest.raises(DimensionError):
            tp_fp_split_eval([det(1, 1, 1, 0.5)], [], [], [])

