import logging

import numpy as np
import pytest

from datasets import blobs, draw_constraints
from dissim import DissimilarityView, euclidean_distances, phi_transform
from errors import NumericalError, ValidationError
from evaluation import adjusted_rand_index
from evidential import EvidentialPartition, hard_partition
from focalsets import Frame, build_focal_sets, plausibility_same
from losses import ConstraintSet, LossBreakdown, LossConfig, Objective, TrainingData
from network import forward, init_params
from training import (
    OptimizerConfig, RestartResult, RMSprop, _run_restarts, adaptive_descent,
    rmsprop_descent, train, train_batch, train_minibatch
)


@pytest.fixture
def two_blobs():
    X, truth = blobs(n=40, centers=2, cluster_std=0.5, seed=0)
    fs = build_focal_sets(Frame(2), "singletons_plus")
    view = phi_transform(euclidean_distances(X), 0.9)
    return TrainingData(X=X, fs=fs), view, truth


def labels_of(data, params):
    return hard_partition(EvidentialPartition(data.fs, forward(params, data.X, data.fs).m_star))


class TestOptimizerConfig:
    @pytest.mark.parametrize("kwargs", [
        {"max_epochs": -1}, {"restarts": 0}, {"step_up": 0.9}, {"step_down": 1.0},
        {"backtrack": 0.0}, {"rho": 1.0}, {"validation_fraction": 0.0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            OptimizerConfig(**kwargs)


class TestBatch:
    def test_zero_epochs_returns_initial_weights(self, two_blobs, rng):
        data, view, _ = two_blobs
        objective = Objective(data, view.rows, view.cols, view.delta_star, LossConfig())
        params = init_params(2, [6], data.fs.f, rng)
        fitted, breakdown, history, epochs = adaptive_descent(objective, params, OptimizerConfig(max_epochs=0))
        np.testing.assert_array_equal(fitted.to_vector(), params.to_vector())
        assert epochs == 0
        assert history == [breakdown.total]

    def test_history_never_increases(self, two_blobs, rng):
        data, view, _ = two_blobs
        objective = Objective(data, view.rows, view.cols, view.delta_star, LossConfig())
        params = init_params(2, [6], data.fs.f, rng)
        _, _, history, _ = adaptive_descent(objective, params, OptimizerConfig(max_epochs=150))
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert history[-1] < history[0]

    def test_recovers_well_separated_blobs(self, two_blobs):
        data, view, truth = two_blobs
        result = train_batch(data, view, LossConfig(), OptimizerConfig(max_epochs=300, restarts=3))
        assert adjusted_rand_index(labels_of(data, result.params), truth) == pytest.approx(1.0)
        assert result.breakdown.total == min(r.final_loss for r in result.restarts)

    def test_deterministic_across_threads(self, two_blobs):
        data, view, _ = two_blobs
        opt = OptimizerConfig(max_epochs=20, restarts=3, seed=11)
        a = train_batch(data, view, LossConfig(), opt)
        b = train_batch(data, view, LossConfig(), OptimizerConfig(max_epochs=20, restarts=3, seed=11, threads=3))
        np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
        assert a.best_restart == b.best_restart

    def test_progress_records(self, two_blobs, caplog, monkeypatch):
        data, view, _ = two_blobs
        monkeypatch.setattr(logging.getLogger("training.report"), "propagate", True)
        with caplog.at_level(logging.DEBUG, logger="training.report"):
            train_batch(data, view, LossConfig(), OptimizerConfig(max_epochs=3, restarts=1))
        reports = [r.report for r in caplog.records if hasattr(r, "report")]
        assert [r["epoch"] for r in reports] == [1, 2, 3]
        assert set(reports[0]) == {"restart", "epoch", "loss", "terms", "grad_norm", "wall_time"}

    def test_must_link_joins_identical_objects(self):
        fs = build_focal_sets(Frame(2), "singletons_plus")
        X = np.ones((2, 2))
        data = TrainingData(X=X, fs=fs, constraints=ConstraintSet(must_link=[(0, 1)]))
        # phi_transform rejects all-zero dissimilarities
        view = DissimilarityView(n=2, mode="dense", gamma=1.0, d0=1.0, rows=np.array([0]),
                                 cols=np.array([1]), delta_star=np.zeros(1))
        result = train_batch(data, view, LossConfig(xi=1e3), OptimizerConfig(max_epochs=500, restarts=3))
        m = forward(result.params, X, fs).m_star
        pl_same, _ = plausibility_same(m[0], m[1], fs)
        assert pl_same > 0.99


class TestRestarts:
    @staticmethod
    def finished(restart, loss):
        return RestartResult(restart, params=None, breakdown=LossBreakdown(base=loss, total=loss))

    def test_lowest_loss_then_lowest_index(self):
        losses = [0.3, 0.1, 0.1, 0.2]
        result = _run_restarts(lambda r: self.finished(r, losses[r]), OptimizerConfig(restarts=4))
        assert result.best_restart == 1

    def test_diverged_restarts_are_skipped(self):
        def run_one(r):
            if r == 0:
                return RestartResult(r, None, None, diverged=True, message="overflow")
            return self.finished(r, 0.5)
        assert _run_restarts(run_one, OptimizerConfig(restarts=2)).best_restart == 1

    def test_all_diverged(self):
        run_one = lambda r: RestartResult(r, None, None, diverged=True, message="overflow")
        with pytest.raises(NumericalError):
            _run_restarts(run_one, OptimizerConfig(restarts=3))


class TestMinibatch:
    def test_rmsprop_update(self):
        opt = RMSprop(2, learning_rate=0.1, rho=0.9, delta=1e-8)
        x = opt.step(np.zeros(2), np.array([1.0, -2.0]))
        np.testing.assert_allclose(opt.r, [0.1, 0.4])
        np.testing.assert_allclose(x, [-0.1 / np.sqrt(0.1 + 1e-8), 0.2 / np.sqrt(0.4 + 1e-8)])

    def test_single_block(self, two_blobs):
        data, view, _ = two_blobs
        cfg = LossConfig(mode="minibatch", s=1)
        result = train_minibatch(data, view, cfg, OptimizerConfig(max_epochs=5, restarts=2, learning_rate=1e-2))
        assert len(result.history) == 5
        assert np.isfinite(result.breakdown.total)

    def test_loss_decreases(self, two_blobs):
        data, view, _ = two_blobs
        cfg = LossConfig(mode="minibatch", s=4)
        result = train_minibatch(data, view, cfg, OptimizerConfig(max_epochs=200, restarts=1, learning_rate=1e-2))
        assert np.mean(result.history[-10:]) < np.mean(result.history[:10])

    def test_deterministic(self, two_blobs):
        data, view, _ = two_blobs
        cfg = LossConfig(mode="minibatch", s=2)
        opt = OptimizerConfig(max_epochs=10, restarts=2, seed=5)
        a = train_minibatch(data, view, cfg, opt)
        b = train_minibatch(data, view, cfg, opt)
        np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
        assert a.history == b.history

    def test_report_keeps_each_term(self, two_blobs, caplog, monkeypatch):
        data, view, truth = two_blobs
        constraints = draw_constraints(truth, 10, np.random.default_rng(0))
        constrained = TrainingData(X=data.X, fs=data.fs, constraints=constraints)
        monkeypatch.setattr(logging.getLogger("training.report"), "propagate", True)
        with caplog.at_level(logging.DEBUG, logger="training.report"):
            train_minibatch(constrained, view, LossConfig(mode="minibatch", s=2, xi=5.0),
                            OptimizerConfig(max_epochs=3, restarts=1))
        terms = [r.report["terms"] for r in caplog.records if hasattr(r, "report")]
        assert len(terms) == 3
        for t in terms:
            assert 0.0 <= t["base"] <= 1.0
            assert t["constraint"] > 0.0
            assert t["p_ml"] + t["p_cl"] > 0.0
            assert t["total"] == pytest.approx(t["base"] + t["constraint"] + t["regularization"], rel=1e-12)

    def test_epoch_terms_are_block_averages(self):
        blocks = [LossBreakdown(base=0.2, constraint=1.0, total=1.2), LossBreakdown(base=0.4, constraint=3.0, total=3.4)]
        mean = LossBreakdown.mean(blocks)
        assert (mean.base, mean.constraint, mean.total) == pytest.approx((0.3, 2.0, 2.3))
        assert mean.labels == 0.0

    def test_early_stopping_restores_best(self, two_blobs, rng):
        data, view, _ = two_blobs
        cfg = LossConfig(mode="minibatch", s=2)
        params = init_params(2, [6], data.fs.f, rng)
        # a zero learning rate never improves the validation loss after the first epoch
        opt = OptimizerConfig(max_epochs=50, early_stopping=True, patience=3, learning_rate=0.0)
        fitted, history, epochs = rmsprop_descent(data, view, cfg, params, opt)
        assert epochs == 4
        assert len(history) == 4
        np.testing.assert_array_equal(fitted.to_vector(), params.to_vector())

    def test_requires_minibatch_config(self, two_blobs):
        data, view, _ = two_blobs
        with pytest.raises(ValidationError):
            train_minibatch(data, view, LossConfig(), OptimizerConfig())

    def test_requires_full_matrix(self, two_blobs):
        data, _, _ = two_blobs
        view = phi_transform(euclidean_distances(data.X), keep_matrix=False)
        with pytest.raises(ValidationError):
            train_minibatch(data, view, LossConfig(mode="minibatch", s=2), OptimizerConfig())


def test_train_dispatches_on_mode(two_blobs):
    data, view, _ = two_blobs
    opt = OptimizerConfig(max_epochs=2, restarts=1)
    batch = train(data, view, LossConfig(), opt)
    mini = train(data, view, LossConfig(mode="minibatch", s=2), opt)
    # batch history starts with the initial loss
    assert len(batch.history) == 3
    assert len(mini.history) == 2
