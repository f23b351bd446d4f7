import math

import numpy as np
import pytest
import torch

from amgan import evalkit


def _result(probs, n_splits=1):
    return evalkit.inception_score_from_probs(np.asarray(probs, dtype=np.float64), n_splits)


class TestInceptionScoreMath:
    def test_uniform_predictor_scores_one(self):
        probs = np.full((40, 5), 0.2)
        assert abs(_result(probs, n_splits=4).mean - 1.0) < 1e-9

    def test_one_hot_uniform_marginal_scores_num_classes(self):
        # every class predicted with full confidence, equally often
        c = 6
        probs = np.tile(np.eye(c), (5, 1))
        result = _result(probs, n_splits=1)
        assert abs(result.mean - c) < 1e-6

    def test_hand_computed_four_image_case(self):
        rows = [[0.8, 0.2], [0.6, 0.4], [0.5, 0.5], [0.9, 0.1]]
        marginal = [0.7, 0.3]
        kls = []
        for row in rows:
            kls.append(
                sum(
                    p * (math.log(p + evalkit.KL_EPS) - math.log(q + evalkit.KL_EPS))
                    for p, q in zip(row, marginal)
                )
            )
        expected = math.exp(sum(kls) / len(kls))
        assert abs(_result(rows, n_splits=1).mean - expected) < 1e-9

    def test_bounds_hold_over_100_random_prob_tables(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = int(rng.integers(2, 9))
            n = int(rng.integers(10, 60))
            raw = rng.exponential(size=(n, c))
            probs = raw / raw.sum(axis=1, keepdims=True)
            result = _result(probs, n_splits=2)
            assert 1.0 - 1e-9 <= result.mean <= c + 1e-9

    def test_splits_are_strided_over_class_sorted_input(self):
        # two classes, images grouped by class: contiguous splits would see a
        # single class each and report ~1; strided splits must mix them
        probs = np.concatenate([np.tile([[0.99, 0.01]], (10, 1)), np.tile([[0.01, 0.99]], (10, 1))])
        result = _result(probs, n_splits=2)
        assert result.mean > 1.5

    def test_too_few_images_rejected(self):
        with pytest.raises(evalkit.EvalError):
            _result(np.full((5, 3), 1 / 3), n_splits=10)


class TestScorer:
    def test_single_class_rejected(self):
        images = np.zeros((20, 64, 64, 3), dtype=np.float32)
        with pytest.raises(evalkit.EvalError):
            evalkit.train_scorer(images, np.zeros(20, dtype=int), epochs=1)

    def test_two_color_toy_problem_learned(self):
        rng = np.random.default_rng(3)
        images = rng.normal(0, 0.05, size=(60, 64, 64, 3)).astype(np.float32)
        images[:30, :, :, 0] += 0.8  # red-shifted class
        images[30:, :, :, 2] += 0.8  # blue-shifted class
        class_ids = np.array([0] * 30 + [1] * 30)
        scorer, acc = evalkit.train_scorer(images, class_ids, epochs=30, seed=0)
        assert acc > 0.9
        probs = evalkit.class_probabilities(scorer, images)
        assert probs.shape == (60, 2)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_probabilities_deterministic_across_batches(self):
        torch.manual_seed(0)
        scorer = evalkit.ScorerNet(3)
        images = np.random.default_rng(1).normal(size=(10, 64, 64, 3)).astype(np.float32)
        a = evalkit.class_probabilities(scorer, images, batch_size=3)
        b = evalkit.class_probabilities(scorer, images, batch_size=10)
        assert np.allclose(a, b, atol=1e-6)


class TestArtifacts:
    def test_grid_dimensions(self, tmp_path):
        from PIL import Image

        images = np.zeros((6, 64, 64, 3), dtype=np.float32)
        path = tmp_path / "grid.png"
        evalkit.emit_grid(images, 2, 3, path)
        with Image.open(path) as img:
            assert img.size == (3 * 64 + 4 * 2, 2 * 64 + 3 * 2)

    def test_grid_rejects_wrong_count(self, tmp_path):
        with pytest.raises(evalkit.EvalError):
            evalkit.emit_grid(np.zeros((5, 64, 64, 3)), 2, 3, tmp_path / "g.png")

    def test_metric_plot_with_legend_sidecar(self, tmp_path):
        csv_path = tmp_path / "metrics.csv"
        csv_path.write_text(
            "iteration,term,value\n0,loss_a,1.0\n1,loss_a,0.5\n0,loss_b,2.0\n1,loss_b,1.5\n"
        )
        out = tmp_path / "plot.png"
        names = evalkit.emit_metric_plot(csv_path, out)
        assert names == ["loss_a", "loss_b"]
        assert out.is_file()
        assert (tmp_path / "plot.png.legend.txt").read_text().splitlines() == ["loss_a", "loss_b"]

    def test_metric_plot_rejects_empty_csv(self, tmp_path):
        csv_path = tmp_path / "metrics.csv"
        csv_path.write_text("iteration,term,value\n")
        with pytest.raises(evalkit.EvalError):
            evalkit.emit_metric_plot(csv_path, tmp_path / "p.png")
