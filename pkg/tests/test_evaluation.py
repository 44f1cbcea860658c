import itertools
import json

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from dissim import euclidean_distances, phi_transform
from errors import ValidationError
from evaluation import (
    EvalReport, adjusted_rand_index, evaluate_partition, holdout_loss, shepard_data,
    shepard_table, stress
)
from evidential import EvidentialPartition
from focalsets import Frame, build_focal_sets
from losses import LossConfig, TrainingData, total_loss
from network import EvclusModel, forward, init_params


def pair_counting_ari(a, b):
    pairs = list(itertools.combinations(range(len(a)), 2))
    both = sum(a[i] == a[j] and b[i] == b[j] for i, j in pairs)
    same_a = sum(a[i] == a[j] for i, j in pairs)
    same_b = sum(b[i] == b[j] for i, j in pairs)
    expected = same_a * same_b / len(pairs)
    return (both - expected) / (0.5 * (same_a + same_b) - expected)


class TestAdjustedRandIndex:
    def test_identical(self):
        assert adjusted_rand_index([1, 1, 2, 2, 3], [1, 1, 2, 2, 3]) == 1.0

    def test_relabelling_is_ignored(self):
        assert adjusted_rand_index([1, 1, 2, 2], ["b", "b", "a", "a"]) == pytest.approx(1.0)

    def test_crossed_halves(self):
        assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)

    def test_matches_pair_counting(self, rng):
        for _ in range(20):
            a = rng.integers(1, 4, size=15)
            b = rng.integers(1, 5, size=15)
            value = adjusted_rand_index(a, b)
            assert value == pytest.approx(pair_counting_ari(a, b), abs=1e-12)
            assert value == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
            assert value == pytest.approx(adjusted_rand_index(b, a), abs=1e-15)

    def test_trivial_partitions(self):
        assert adjusted_rand_index([1, 1, 1], [2, 2, 2]) == 1.0
        assert adjusted_rand_index([1], [1]) == 1.0

    def test_invalid(self):
        with pytest.raises(ValidationError):
            adjusted_rand_index([], [])
        with pytest.raises(ValidationError):
            adjusted_rand_index([1, 2], [1, 2, 3])


@pytest.fixture
def fitted(rng):
    fs = build_focal_sets(Frame(2), "singletons_plus")
    X = np.vstack([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 6.0])
    view = phi_transform(euclidean_distances(X), 0.9)
    params = init_params(2, [4], fs.f, rng)
    model = EvclusModel(fs=fs, params=params, gamma_phi=view.gamma, d0=view.d0)
    return model, X, view


class TestShepard:
    def test_stress_equals_base_loss(self, fitted):
        model, X, view = fitted
        ep = EvidentialPartition(model.fs, forward(model.params, X, model.fs).m_star)
        shepard = shepard_data(ep, view)
        assert shepard.shape == (view.n_pairs, 2)
        expected = total_loss(model.params, TrainingData(X=X, fs=model.fs), view, LossConfig())
        assert stress(shepard) == pytest.approx(expected.base, rel=1e-12)

    def test_table(self, fitted):
        model, X, view = fitted
        ep = EvidentialPartition(model.fs, forward(model.params, X, model.fs).m_star)
        table = shepard_table(ep, view)
        assert list(table.columns) == ["delta_star", "kappa"]
        assert table["kappa"].between(0.0, 1.0).all()

    def test_size_mismatch(self, fitted):
        model, X, view = fitted
        ep = EvidentialPartition(model.fs, forward(model.params, X[:5], model.fs).m_star)
        with pytest.raises(ValidationError):
            shepard_data(ep, view)

    def test_empty_diagram(self):
        assert stress(np.zeros((0, 2))) == 0.0


class TestHoldout:
    def test_uses_model_calibration(self, fitted, rng):
        model, _, _ = fitted
        X_new = rng.normal(size=(6, 2)) * 3.0
        loss = holdout_loss(model, X_new, euclidean_distances(X_new))
        view = phi_transform(euclidean_distances(X_new), calibration=(model.d0, model.gamma_phi))
        ep = EvidentialPartition(model.fs, forward(model.params, X_new, model.fs).m_star)
        assert loss == pytest.approx(stress(shepard_data(ep, view)), rel=1e-12)

    def test_object_count_mismatch(self, fitted, rng):
        model, _, _ = fitted
        X_new = rng.normal(size=(4, 2))
        with pytest.raises(ValidationError):
            holdout_loss(model, X_new, euclidean_distances(X_new[:3]))


class TestEvaluatePartition:
    def test_report(self, fitted, tmp_path):
        model, X, view = fitted
        ep = EvidentialPartition(model.fs, forward(model.params, X, model.fs).m_star)
        truth = np.repeat([1, 2], 10)
        report = evaluate_partition(ep, truth, view)
        assert -1.0 <= report.ari <= 1.0
        assert report.n_objects == 20
        assert report.shepard_pairs == 190
        assert report.final_loss == pytest.approx(stress(shepard_data(ep, view)))

        report.save(tmp_path / "report.json")
        saved = json.loads((tmp_path / "report.json").read_text())
        assert saved["n_objects"] == 20
        assert saved["holdout_loss"] is None

    def test_without_truth_or_view(self):
        fs = build_focal_sets(Frame(2), "singletons_plus")
        masses = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        report = evaluate_partition(EvidentialPartition(fs, masses))
        assert report == EvalReport(ari=None, final_loss=None, outlier_count=1, n_objects=2)
