import logging
import math

import numpy as np
import pytest

from dgqnet.errors import ConfigError, ContractError, DataError
from dgqnet.metrics import (BootstrapResult, ConfusionMatrix, METRIC_KEYS,
                            auc_from_roc, bootstrap_ci, compute_metrics,
                            confusion_matrix, metrics_from_confusion,
                            per_domain_report, rank_auc, roc_curve)
from dgqnet.synthgen import Sample
from dgqnet.tensor import Tensor


def vectors_for(tn, fp, fn, tp, lo=0.2, hi=0.8):
    """Labels and scores realizing the given confusion matrix at 0.5."""
    labels = np.array([0] * (tn + fp) + [1] * (fn + tp))
    scores = np.array([lo] * tn + [hi] * fp + [lo] * fn + [hi] * tp)
    return labels, scores


def pairwise_auc(labels, scores):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestGoldenAnchors:
    def test_high_performing_row(self):
        labels, scores = vectors_for(tn=57, fp=3, fn=1, tp=59)
        m = compute_metrics(labels, scores)
        assert round(m.accuracy, 4) == 0.9667
        assert round(m.precision, 4) == 0.9672
        assert round(m.recall, 4) == 0.9667
        assert round(m.f1, 4) == 0.9667
        assert round(m.sensitivity, 4) == 0.9833
        assert round(m.specificity, 4) == 0.9500

    def test_collapsed_baseline_row(self):
        labels, scores = vectors_for(tn=60, fp=0, fn=52, tp=8)
        m = compute_metrics(labels, scores)
        assert round(m.accuracy, 4) == 0.5667
        assert round(m.precision, 4) == 0.7679
        assert round(m.recall, 4) == 0.5667
        assert round(m.f1, 4) == 0.4665
        assert round(m.sensitivity, 4) == 0.1333
        assert round(m.specificity, 4) == 1.0000

    def test_macro_precision_is_class_mean(self):
        # the convention that pins Table 1: (1.0000 + 0.5357) / 2
        labels, scores = vectors_for(tn=60, fp=0, fn=52, tp=8)
        m = compute_metrics(labels, scores)
        assert m.precision == pytest.approx((1.0 + 60 / 112) / 2, abs=1e-12)


class TestConfusion:
    def test_counts(self):
        cm = confusion_matrix([0, 0, 1, 1, 1], [0, 1, 1, 0, 1])
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (1, 1, 1, 2)
        assert cm.total == 5

    def test_rejects_negative(self):
        with pytest.raises(ContractError):
            ConfusionMatrix(tn=-1, fp=0, fn=0, tp=2)

    def test_rejects_empty(self):
        with pytest.raises(ContractError):
            ConfusionMatrix(tn=0, fp=0, fn=0, tp=0)

    def test_zero_denominators_give_zero(self):
        # no positives at all: sensitivity and positive precision undefined
        m = metrics_from_confusion(ConfusionMatrix(tn=4, fp=1, fn=0, tp=0))
        assert m.sensitivity == 0.0
        assert m.precision == pytest.approx(0.5 * (0.0 + 1.0))


class TestRankAuc:
    def test_perfect_separation(self):
        labels = np.array([0, 0, 1, 1])
        assert rank_auc(labels, [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_all_equal_scores(self):
        labels = np.array([0, 1, 0, 1])
        assert rank_auc(labels, [0.5] * 4) == 0.5

    def test_tie_counts_half(self):
        auc = rank_auc(np.array([0, 1, 1]), np.array([0.4, 0.4, 0.9]))
        assert auc == pytest.approx(0.75, abs=1e-15)

    def test_single_class_absent(self):
        assert rank_auc(np.array([1, 1]), np.array([0.2, 0.9])) is None

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(10, 60))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.uniform(size=n), 1)  # force ties
            assert rank_auc(labels, scores) == pytest.approx(
                pairwise_auc(labels, scores), abs=1e-12)

    def test_monotone_transform_invariant(self, rng):
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        scores = rng.uniform(size=40)
        assert rank_auc(labels, scores) == rank_auc(labels, scores ** 3)


class TestComputeMetrics:
    def test_explicit_predictions_override(self):
        labels = np.array([0, 1])
        m = compute_metrics(labels, [0.9, 0.9], predictions=[0, 1])
        assert m.accuracy == 1.0

    def test_threshold_is_half_inclusive(self):
        m = compute_metrics(np.array([1, 0]), [0.5, 0.49])
        assert m.accuracy == 1.0

    def test_single_class_keeps_other_metrics(self):
        m = compute_metrics(np.array([1, 1, 1]), [0.9, 0.8, 0.2])
        assert m.auc is None
        assert m.accuracy == pytest.approx(2 / 3)

    @pytest.mark.parametrize("labels,scores", [
        ([0, 1], [0.5]),
        ([0, 2], [0.5, 0.5]),
        ([0, 1], [0.5, 1.5]),
        ([0, 1], [0.5, np.nan]),
        ([], []),
    ])
    def test_rejects_bad_inputs(self, labels, scores):
        with pytest.raises(DataError):
            compute_metrics(np.array(labels), np.array(scores, dtype=float))


class TestRocCurve:
    def test_perfect_classifier_hits_corner(self):
        labels = np.array([0, 0, 1, 1])
        points = roc_curve(labels, labels.astype(float))
        assert (0.0, 1.0) in {(x, y) for x, y, _ in points}
        assert points[0][:2] == (0.0, 0.0)
        assert points[-1][:2] == (1.0, 1.0)
        assert points[0][2] == math.inf

    def test_all_equal_two_points(self):
        points = roc_curve(np.array([0, 1, 0, 1]), [0.3] * 4)
        assert len(points) == 2
        assert auc_from_roc(points) == pytest.approx(0.5, abs=1e-15)

    def test_monotone_coordinates(self, rng):
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        scores = np.round(rng.uniform(size=50), 1)
        points = roc_curve(labels, scores)
        xs = [x for x, _, _ in points]
        ys = [y for _, y, _ in points]
        assert xs == sorted(xs) and ys == sorted(ys)

    def test_area_equals_rank_auc(self, rng):
        for _ in range(20):
            n = int(rng.integers(12, 80))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.uniform(size=n), 1)
            area = auc_from_roc(roc_curve(labels, scores))
            assert abs(area - rank_auc(labels, scores)) <= 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="both classes"):
            roc_curve(np.array([1, 1]), [0.1, 0.9])


class TestBootstrap:
    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, size=40)
        scores = rng.uniform(size=40)
        a = bootstrap_ci(labels, scores, n_boot=50, seed=7)
        b = bootstrap_ci(labels, scores, n_boot=50, seed=7)
        assert a.lower == b.lower and a.upper == b.upper
        c = bootstrap_ci(labels, scores, n_boot=50, seed=8)
        assert c.lower != a.lower

    def test_perfect_classifier_degenerate_interval(self):
        labels = np.array([0] * 20 + [1] * 20)
        scores = np.array([0.1] * 20 + [0.9] * 20)
        result = bootstrap_ci(labels, scores, n_boot=500, seed=0)
        assert result.lower["accuracy"] == 1.0
        assert result.upper["accuracy"] == 1.0

    def test_point_within_interval_paper_regime(self):
        # 120 balanced samples at ~0.97 accuracy, as in the anchor row
        labels = np.array([0] * 60 + [1] * 60)
        scores = np.array([0.2] * 57 + [0.8] * 3 + [0.2] * 1 + [0.8] * 59)
        for seed in (0, 1, 2):
            r = bootstrap_ci(labels, scores, n_boot=500, seed=seed)
            for key in METRIC_KEYS:
                value = getattr(r.point, key)
                assert r.lower[key] <= value <= r.upper[key], (seed, key)

    def test_bounds_ordered(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=30)
        scores = rng.uniform(size=30)
        r = bootstrap_ci(labels, scores, n_boot=100, seed=1)
        assert all(r.lower[k] <= r.upper[k] for k in r.lower)

    def test_single_resample_of_constant_metric(self):
        labels = np.array([0] * 10 + [1] * 10)
        scores = np.where(labels == 1, 0.9, 0.1)
        r = bootstrap_ci(labels, scores, n_boot=1, seed=4)
        assert r.samples["accuracy"][0] == r.point.accuracy == 1.0

    def test_requires_ten_samples(self):
        with pytest.raises(ConfigError, match="10"):
            bootstrap_ci(np.array([0, 1] * 4), np.full(8, 0.5))


class ThresholdModel:
    """Scores each image by its mean value; prediction is mean >= 0.5."""
    use_quantum = False
    use_adversarial = False

    def encode(self, x, mode="eval", momentum=None):
        return Tensor(x.data.mean(axis=(1, 2, 3))[:, None])

    def enhance(self, h):
        return h

    def classify(self, h):
        t = (h.data[:, 0] - 0.5) * 20.0
        return Tensor(np.stack([np.zeros_like(t), t], axis=1))


def constant_samples(values, labels, domain):
    return [Sample(image=np.full((8, 8), v), label=int(l), domain=domain, id=i)
            for i, (v, l) in enumerate(zip(values, labels))]


class TestPerDomainReport:
    def test_identical_domains_zero_variance(self):
        group = constant_samples([0.8, 0.8, 0.2, 0.2], [1, 1, 0, 0], 0)
        report = per_domain_report(ThresholdModel(), {0: group, 1: group})
        assert report.accuracy_variance == 0.0
        assert set(report.rows) == {0, 1}

    def test_known_accuracy_gap(self):
        # domain 0: 9/10 correct; domain 1: 7/10 correct
        good = constant_samples([0.8] * 5 + [0.2] * 5,
                                [1] * 5 + [0] * 4 + [1], 0)
        poor = constant_samples([0.8] * 5 + [0.2] * 5,
                                [1] * 4 + [0] + [0] * 3 + [1] * 2, 1)
        report = per_domain_report(ThresholdModel(), {0: good, 1: poor})
        assert report.rows[0].accuracy == pytest.approx(0.9)
        assert report.rows[1].accuracy == pytest.approx(0.7)
        assert report.accuracy_variance == pytest.approx(0.01, abs=1e-15)

    def test_empty_group_omitted_with_warning(self, caplog):
        group = constant_samples([0.8, 0.2], [1, 0], 0)
        with caplog.at_level(logging.WARNING, logger="dgqnet.metrics"):
            report = per_domain_report(ThresholdModel(), {0: group, 5: []})
        assert set(report.rows) == {0}
        assert "domain 5" in caplog.text

    def test_all_empty_rejected(self):
        with pytest.raises(DataError):
            per_domain_report(ThresholdModel(), {0: [], 1: []})
