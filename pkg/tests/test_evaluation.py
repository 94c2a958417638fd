import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from trml.dataset import build_missingness_plan, make_batch
from trml.errors import DataError
from trml.evaluation import (
    binary_accuracy,
    evaluate,
    export_projection_2d,
    export_similarity_heatmap,
    mean_absolute_error,
    paired_ttest,
    project_2d,
    regularized_incomplete_beta,
    similarity_heatmaps,
)
from trml.model import forward_batch

from conftest import random_params, tiny_dataset

scores = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=30)


class TestMetrics:
    def test_hand_example(self):
        assert binary_accuracy([0.5, -0.2], [1.0, 2.0]) == 0.5
        assert mean_absolute_error([0.5, -0.2], [1.0, 2.0]) == pytest.approx(1.35)

    def test_perfect(self):
        y = [1.2, -0.4, 2.0]
        assert mean_absolute_error(y, y) == 0.0 and binary_accuracy(y, y) == 1.0

    def test_zero_labels_excluded(self):
        assert binary_accuracy([1.0, -1.0, 5.0], [0.0, -2.0, 1.0]) == 1.0
        assert math.isnan(binary_accuracy([1.0], [0.0]))

    @given(scores, st.floats(1e-3, 1e3))
    def test_acc2_positive_scaling(self, pred, c):
        labels = np.linspace(-1, 1, len(pred)) + 0.01
        assert binary_accuracy(np.array(pred) * c, labels) == binary_accuracy(pred, labels)

    @given(scores, st.floats(-5, 5))
    def test_mae_translation(self, pred, c):
        labels = np.linspace(-1, 1, len(pred))
        assert mean_absolute_error(np.array(pred) + c, labels + c) == pytest.approx(
            mean_absolute_error(pred, labels), abs=1e-12)


class TestEvaluate:
    def test_setting_a_test_split_is_text_missing(self):
        ds = tiny_dataset(0, n_train=10)
        plan = build_missingness_plan(ds, "A", "text", 0.5, 0)
        batch = make_batch(ds, ds.split_indices("test"), plan)
        assert set(batch.modes) == {"mt"}

    def test_matches_forward(self):
        ds = tiny_dataset(1, n_train=10)
        plan = build_missingness_plan(ds, "B", "visual", 0.5, 1)
        p = random_params(1)
        rep = evaluate(p, ds, plan, "train")
        out = forward_batch(make_batch(ds, ds.split_indices("train"), plan), p).outputs[:, 0]
        np.testing.assert_array_equal(rep.predictions, out)
        assert rep.mae == mean_absolute_error(out, rep.labels)
        assert rep.n == 10 and rep.predictions_csv().count("\n") == 11

    def test_dimension_mismatch(self):
        ds = tiny_dataset(0)
        plan = build_missingness_plan(ds, "B", "text", 1.0, 0)
        with pytest.raises(DataError):
            evaluate(random_params(0, d=4), ds, plan)

    def test_classification_reports_accuracy_only(self):
        ds = tiny_dataset(0, task="classification")
        plan = build_missingness_plan(ds, "B", "text", 1.0, 0)
        rep = evaluate(random_params(0, task="classification", out_dim=2), ds, plan, "train")
        assert rep.mae is None and rep.acc2 is None and 0.0 <= rep.acc <= 1.0


class TestTTest:
    def test_known_value(self):
        r = paired_ttest([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert r.t == pytest.approx(4.2426, abs=1e-3) and r.p_two_tailed == pytest.approx(0.0132, abs=1e-3)
        ref = stats.ttest_1samp([1, 2, 3, 4, 5], 0.0)
        assert r.t == pytest.approx(ref.statistic, abs=1e-12)
        assert r.p_two_tailed == pytest.approx(ref.pvalue, abs=1e-12)
        assert r.df == 4

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=20))
    def test_against_reference(self, pairs):
        a, b = map(np.array, zip(*pairs))
        d = a - b
        if np.all(d == 0) or np.ptp(d) < 1e-6 * max(1.0, np.abs(d).max()):
            return
        r = paired_ttest(a, b)
        ref = stats.ttest_rel(a, b)
        assert r.t == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
        assert r.p_two_tailed == pytest.approx(ref.pvalue, abs=1e-9)

    def test_swap_and_negation(self):
        a, b = [0.3, 0.5, 0.2, 0.9], [0.1, 0.6, 0.1, 0.4]
        r, s = paired_ttest(a, b), paired_ttest(b, a)
        assert s.t == -r.t and s.p_two_tailed == r.p_two_tailed

    def test_identical(self):
        r = paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.t == 0.0 and r.p_two_tailed == 1.0

    def test_constant_difference(self):
        r = paired_ttest([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        assert r.t == math.inf and r.p_two_tailed == 0.0

    @pytest.mark.parametrize("a,b", [([1.0], [2.0]), ([1.0, 2.0], [1.0])])
    def test_invalid(self, a, b):
        with pytest.raises(ValueError):
            paired_ttest(a, b)

    @settings(max_examples=80)
    @given(st.floats(0.0, 1.0), st.floats(0.1, 30.0), st.floats(0.1, 30.0))
    def test_incomplete_beta_oracle(self, x, a, b):
        assert regularized_incomplete_beta(x, a, b) == pytest.approx(special.betainc(a, b, x), abs=1e-12)


class TestHeatmap:
    def _setup(self):
        ds = tiny_dataset(2, n_train=8)
        return ds, random_params(2), [r.id for r in ds.records[:8]]

    def test_shapes_and_range(self):
        ds, p, ids = self._setup()
        mats = similarity_heatmaps(p, ds, ids)
        assert set(mats) == {"text_virtual", "visual_virtual", "cross", "text_self", "visual_self"}
        for M in mats.values():
            assert M.shape == (8, 8)
            assert np.all(np.abs(M) <= 1 + 1e-12)
        np.testing.assert_allclose(np.diag(mats["text_self"]), 1.0, atol=1e-12)

    def test_duplicate_id(self):
        ds, p, ids = self._setup()
        M = similarity_heatmaps(p, ds, [ids[0], ids[1], ids[0]])["text_self"]
        assert M[0, 2] == pytest.approx(1.0, abs=1e-12)

    def test_export_deterministic(self, tmp_path):
        ds, p, ids = self._setup()
        a = export_similarity_heatmap(p, ds, ids, tmp_path / "a")
        b = export_similarity_heatmap(p, ds, ids, tmp_path / "b")
        for k in a:
            assert a[k].read_bytes() == b[k].read_bytes()
        first = a["cross"].read_text().splitlines()[0]
        assert first == "#trml-export v1 kind=heatmap pair=cross"

    def test_unknown_id(self):
        ds, p, _ = self._setup()
        with pytest.raises(DataError):
            similarity_heatmaps(p, ds, ["nope", "train-00000"])


class TestProjection:
    def test_matches_svd(self):
        X = np.random.default_rng(0).normal(size=(5, 4))
        coords, deficient = project_2d(X)
        Xc = X - X.mean(axis=0)
        U, s, _ = np.linalg.svd(Xc, full_matrices=False)
        ref = U[:, :2] * s[:2]
        assert not deficient
        for k in range(2):
            sign = np.sign(coords[:, k] @ ref[:, k])
            np.testing.assert_allclose(coords[:, k], sign * ref[:, k], atol=1e-8)

    def test_largest_coordinate_positive(self):
        coords, _ = project_2d(np.random.default_rng(4).normal(size=(7, 5)))
        for k in range(2):
            assert coords[np.argmax(np.abs(coords[:, k])), k] > 0

    def test_sign_rule_deterministic(self):
        X = np.random.default_rng(1).normal(size=(6, 3))
        a, _ = project_2d(X)
        b, _ = project_2d(X + 10.0)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_collinear(self):
        X = np.outer(np.arange(5.0), [1.0, 2.0, -1.0])
        coords, deficient = project_2d(X)
        assert deficient and np.all(coords[:, 1] == 0)
        assert np.ptp(coords[:, 0]) == pytest.approx(4 * math.sqrt(6))

    def test_export(self, tmp_path):
        ds = tiny_dataset(3, n_train=8)
        coords = export_projection_2d(random_params(3), ds, "train", tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0].startswith("#trml-export v1 kind=projection rank_deficient=")
        assert lines[1] == "id,modality,x,y" and len(lines) == 2 + 4 * 8
        assert coords.shape == (32, 2)
