import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthcomp.errors import EvaluationError, ShapeError, SupportError
from depthcomp.grid import SparseDepthMap
from depthcomp.metrics import METRICS_CSV_HEADER, EvalResult, aggregate, evaluate


def sparse_from(depth):
    return SparseDepthMap(depth=np.asarray(depth, dtype=np.float64))


class TestEvaluate:
    def test_perfect_prediction_is_all_zeros(self, rng):
        depth = rng.uniform(1.0, 60.0, (6, 6))
        res = evaluate(depth, sparse_from(depth))
        assert res.rmse_mm == 0.0
        assert res.mae_mm == 0.0
        assert res.irmse_km == 0.0
        assert res.imae_km == 0.0
        assert res.n_valid == 36

    def test_one_meter_offset_is_thousand_mm(self):
        gt = np.full((3, 4), 10.0)
        res = evaluate(gt + 1.0, sparse_from(gt))
        assert res.rmse_mm == 1000.0
        assert res.mae_mm == 1000.0

    def test_single_pixel_inverse_metrics(self):
        # gt 2 m, pred 4 m: depth error 2000 mm; inverse error
        # |1/4 - 1/2| = 0.25 1/m = 250 1/km.
        res = evaluate(np.array([[4.0]]), sparse_from([[2.0]]))
        assert res.mae_mm == 2000.0
        assert res.rmse_mm == 2000.0
        assert res.imae_km == 250.0
        assert res.irmse_km == 250.0

    def test_invalid_pixels_excluded(self):
        gt = np.array([[2.0, 0.0]])
        pred = np.array([[2.0, 12345.0]])
        res = evaluate(pred, sparse_from(gt))
        assert res.n_valid == 1
        assert res.mae_mm == 0.0

    def test_rmse_at_least_mae(self, rng):
        for _ in range(10):
            gt = rng.uniform(1.0, 50.0, (5, 5))
            pred = gt + rng.normal(0, 2, (5, 5))
            pred = np.clip(pred, 0.5, None)
            res = evaluate(pred, sparse_from(gt))
            assert res.rmse_mm >= res.mae_mm - 1e-9
            assert res.irmse_km >= res.imae_km - 1e-9

    def test_empty_support_raises(self):
        with pytest.raises(SupportError):
            evaluate(np.ones((2, 2)), sparse_from(np.zeros((2, 2))))

    def test_non_positive_prediction_raises(self):
        gt = sparse_from([[5.0]])
        with pytest.raises(EvaluationError):
            evaluate(np.array([[0.0]]), gt)
        with pytest.raises(EvaluationError):
            evaluate(np.array([[-1.0]]), gt)

    def test_non_positive_off_support_tolerated(self):
        gt = sparse_from([[5.0, 0.0]])
        res = evaluate(np.array([[5.0, -3.0]]), gt)
        assert res.mae_mm == 0.0

    def test_non_finite_prediction_raises(self):
        with pytest.raises(EvaluationError):
            evaluate(np.array([[np.nan]]), sparse_from([[5.0]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            evaluate(np.ones((2, 3)), sparse_from(np.ones((2, 2))))

    def test_multichannel_rejected(self):
        with pytest.raises(ShapeError):
            evaluate(np.ones((2, 2, 3)), sparse_from(np.ones((2, 2))))

    def test_csv_row_matches_header(self):
        res = evaluate(np.array([[4.0]]), sparse_from([[2.0]]))
        row = res.to_csv_row()
        assert len(row.split(",")) == len(METRICS_CSV_HEADER.split(","))
        assert row.split(",")[-1] == "1"

    @given(st.integers(0, 2**32 - 1))
    def test_swap_symmetric_in_depth_error(self, seed):
        # |p - g| is symmetric, so mae/rmse survive swapping pred and gt.
        rng = np.random.default_rng(seed)
        gt = rng.uniform(1.0, 20.0, (4, 4))
        pred = rng.uniform(1.0, 20.0, (4, 4))
        a = evaluate(pred, sparse_from(gt))
        b = evaluate(gt, sparse_from(pred))
        assert a.mae_mm == pytest.approx(b.mae_mm, rel=1e-12)
        assert a.rmse_mm == pytest.approx(b.rmse_mm, rel=1e-12)
        assert a.imae_km == pytest.approx(b.imae_km, rel=1e-12)


class TestAggregate:
    def test_single_result_is_identity(self, rng):
        gt = rng.uniform(1.0, 30.0, (4, 4))
        pred = np.clip(gt + rng.normal(0, 1, (4, 4)), 0.5, None)
        res = evaluate(pred, sparse_from(gt))
        pooled = aggregate([res])
        assert pooled == res

    def test_pooling_matches_joint_evaluation(self, rng):
        # Two frames pooled must equal one evaluation of the
        # concatenated frames.
        gt = rng.uniform(1.0, 30.0, (6, 4))
        pred = np.clip(gt + rng.normal(0, 1, (6, 4)), 0.5, None)
        top = evaluate(pred[:3], sparse_from(gt[:3]))
        bottom = evaluate(pred[3:], sparse_from(gt[3:]))
        joint = evaluate(pred, sparse_from(gt))
        pooled = aggregate([top, bottom])
        assert pooled.n_valid == joint.n_valid
        assert pooled.rmse_mm == pytest.approx(joint.rmse_mm, rel=1e-12)
        assert pooled.mae_mm == pytest.approx(joint.mae_mm, rel=1e-12)
        assert pooled.irmse_km == pytest.approx(joint.irmse_km, rel=1e-12)
        assert pooled.imae_km == pytest.approx(joint.imae_km, rel=1e-12)

    def test_not_a_mean_of_means(self):
        # Frames with different sizes: pooling weights by pixel count.
        big = evaluate(np.full((2, 2), 3.0), sparse_from(np.full((2, 2), 2.0)))
        small = evaluate(np.array([[2.0]]), sparse_from([[2.0]]))
        pooled = aggregate([big, small])
        assert pooled.mae_mm == pytest.approx(1000.0 * 4 / 5, rel=1e-12)
        naive = 0.5 * (big.mae_mm + small.mae_mm)
        assert pooled.mae_mm != pytest.approx(naive, rel=1e-6)

    def test_weights_must_match_counts(self):
        res = evaluate(np.array([[4.0]]), sparse_from([[2.0]]))
        assert aggregate([res], weights=[1]).n_valid == 1
        with pytest.raises(ShapeError):
            aggregate([res], weights=[2])
        with pytest.raises(ShapeError):
            aggregate([res], weights=[1, 1])

    def test_empty_rejected(self):
        with pytest.raises(SupportError):
            aggregate([])

    def test_order_invariant(self, rng):
        frames = []
        for _ in range(3):
            gt = rng.uniform(1.0, 30.0, (3, 3))
            pred = np.clip(gt + rng.normal(0, 1, (3, 3)), 0.5, None)
            frames.append(evaluate(pred, sparse_from(gt)))
        a = aggregate(frames)
        b = aggregate(frames[::-1])
        assert a.n_valid == b.n_valid
        assert a.mae_mm == pytest.approx(b.mae_mm, rel=1e-15)


class TestFromSums:
    def test_round_trip(self):
        res = EvalResult.from_sums(400.0, 40.0, 9.0, 3.0, 4)
        assert res.rmse_mm == 10.0
        assert res.mae_mm == 10.0
        assert res.irmse_km == 1.5
        assert res.imae_km == 0.75

    def test_zero_count_rejected(self):
        with pytest.raises(SupportError):
            EvalResult.from_sums(0.0, 0.0, 0.0, 0.0, 0)
