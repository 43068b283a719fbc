import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthcomp.densify import (
    density,
    dilate,
    interpolate,
    make_kernel,
    parse_kernel_spec,
)
from depthcomp.errors import ParameterError, SupportError
from depthcomp.grid import SparseDepthMap


def sparse_from(depth):
    return SparseDepthMap(depth=np.asarray(depth, dtype=np.float64))


def random_sparse(rng, height, width, n_valid):
    depth = np.zeros((height, width))
    flat = rng.choice(height * width, size=n_valid, replace=False)
    depth.ravel()[flat] = rng.uniform(1.0, 50.0, size=n_valid)
    return SparseDepthMap(depth=depth)


def oracle_dilate(sparse, kernel):
    """Pixelwise loop restatement of the minimum-valid-depth fill rule."""
    height, width = sparse.height, sparse.width
    depth = sparse.depth.copy()
    valid = sparse.valid.copy()
    for y in range(height):
        for x in range(width):
            if sparse.valid[y, x]:
                continue
            best = math.inf
            for dy, dx in kernel.offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < height and 0 <= nx < width and sparse.valid[ny, nx]:
                    best = min(best, sparse.depth[ny, nx])
            if best < math.inf:
                depth[y, x] = best
                valid[y, x] = True
    return depth, valid


def oracle_interpolate(sparse, method):
    """Loop oracle: sort support by (squared distance, scan index)."""
    ys, xs = np.nonzero(sparse.valid)
    support = list(zip(ys.tolist(), xs.tolist()))
    out = sparse.depth.copy()
    for y in range(sparse.height):
        for x in range(sparse.width):
            if sparse.valid[y, x]:
                continue
            ranked = sorted(
                ((y - sy) ** 2 + (x - sx) ** 2, i)
                for i, (sy, sx) in enumerate(support)
            )
            if method == "nearest":
                sy, sx = support[ranked[0][1]]
                out[y, x] = sparse.depth[sy, sx]
            else:
                picked = ranked[: min(4, len(ranked))]
                weights = [1.0 / math.sqrt(d2) for d2, _ in picked]
                total = sum(
                    w * sparse.depth[support[i][0], support[i][1]]
                    for w, (_, i) in zip(weights, picked)
                )
                out[y, x] = total / sum(weights)
    return out


class TestKernels:
    def test_cross3_offsets(self):
        k = make_kernel("cross", 3)
        assert set(k.offsets) == {(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)}

    def test_cross5_offsets(self):
        k = make_kernel("cross", 5)
        expected = {(0, 0)}
        expected |= {(s, 0) for s in (-2, -1, 1, 2)}
        expected |= {(0, s) for s in (-2, -1, 1, 2)}
        assert set(k.offsets) == expected
        assert len(k.offsets) == 9

    def test_square3_is_full_box(self):
        k = make_kernel("square", 3)
        assert len(k.offsets) == 9
        assert set(k.offsets) == {(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)}

    def test_square7_count(self):
        assert len(make_kernel("square", 7).offsets) == 49

    def test_offsets_symmetric_under_negation(self):
        for shape in ("cross", "square"):
            for size in (3, 5, 7):
                offs = set(make_kernel(shape, size).offsets)
                assert {(-dy, -dx) for dy, dx in offs} == offs
                assert (0, 0) in offs

    def test_radius(self):
        assert make_kernel("cross", 5).radius == 2
        assert make_kernel("square", 3).radius == 1

    @pytest.mark.parametrize("bad", [2, 4, 1, 0, -3, 3.0])
    def test_bad_size_rejected(self, bad):
        with pytest.raises(ParameterError):
            make_kernel("square", bad)

    def test_bad_shape_rejected(self):
        with pytest.raises(ParameterError):
            make_kernel("disc", 3)

    def test_spec_round_trip(self):
        for spec in ("cross3", "square5", "cross7"):
            assert parse_kernel_spec(spec).spec() == spec

    def test_spec_parser_tolerates_case_and_space(self):
        assert parse_kernel_spec(" Square5 ") == make_kernel("square", 5)

    @pytest.mark.parametrize("bad", ["square", "cross2x", "blob3", "square4", ""])
    def test_bad_spec_rejected(self, bad):
        with pytest.raises(ParameterError):
            parse_kernel_spec(bad)


class TestDilate:
    def test_single_seed_cross3(self):
        depth = np.zeros((5, 5))
        depth[2, 2] = 7.0
        out = dilate(sparse_from(depth), make_kernel("cross", 3))
        expect_valid = np.zeros((5, 5), dtype=bool)
        for y, x in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)]:
            expect_valid[y, x] = True
        assert np.array_equal(out.valid, expect_valid)
        assert np.all(out.depth[out.valid] == 7.0)
        assert np.all(out.depth[~out.valid] == 0.0)

    def test_single_seed_square3(self):
        depth = np.zeros((5, 5))
        depth[2, 2] = 7.0
        out = dilate(sparse_from(depth), make_kernel("square", 3))
        assert out.n_valid == 9
        assert np.all(out.depth[1:4, 1:4] == 7.0)

    def test_minimum_wins_between_neighbors(self):
        depth = np.zeros((1, 3))
        depth[0, 0] = 9.0
        depth[0, 2] = 4.0
        out = dilate(sparse_from(depth), make_kernel("cross", 3))
        assert out.depth[0, 1] == 4.0

    def test_valid_pixels_never_rewritten(self):
        depth = np.zeros((1, 2))
        depth[0, 0] = 9.0
        depth[0, 1] = 2.0
        out = dilate(sparse_from(depth), make_kernel("square", 3))
        assert out.depth[0, 0] == 9.0

    def test_border_seed_clips_kernel(self):
        depth = np.zeros((4, 4))
        depth[0, 0] = 3.0
        out = dilate(sparse_from(depth), make_kernel("cross", 3))
        assert out.n_valid == 3
        assert out.valid[0, 1] and out.valid[1, 0]

    def test_empty_input_stays_empty(self):
        out = dilate(sparse_from(np.zeros((4, 4))), make_kernel("square", 5))
        assert out.n_valid == 0

    def test_idempotent_when_fully_dense(self):
        depth = np.arange(1, 13, dtype=np.float64).reshape(3, 4)
        out = dilate(sparse_from(depth), make_kernel("square", 3))
        assert np.array_equal(out.depth, depth)

    @pytest.mark.parametrize("spec", ["cross3", "square3", "cross5", "square5"])
    def test_matches_loop_oracle(self, rng, spec):
        kernel = parse_kernel_spec(spec)
        for trial in range(4):
            sparse = random_sparse(rng, 9, 11, n_valid=int(rng.integers(1, 15)))
            got = dilate(sparse, kernel)
            want_depth, want_valid = oracle_dilate(sparse, kernel)
            assert np.array_equal(got.valid, want_valid)
            assert np.array_equal(got.depth, want_depth)

    def test_density_monotone_in_kernel_size(self, rng):
        sparse = random_sparse(rng, 16, 16, n_valid=6)
        d3 = density(dilate(sparse, make_kernel("square", 3)))
        d5 = density(dilate(sparse, make_kernel("square", 5)))
        d7 = density(dilate(sparse, make_kernel("square", 7)))
        assert density(sparse) <= d3 <= d5 <= d7

    def test_cross_fills_no_more_than_square(self, rng):
        sparse = random_sparse(rng, 12, 12, n_valid=5)
        for size in (3, 5):
            cross = dilate(sparse, make_kernel("cross", size))
            square = dilate(sparse, make_kernel("square", size))
            assert not np.any(cross.valid & ~square.valid)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 20))
    def test_valid_set_grows_and_depths_survive(self, seed, n_valid):
        rng = np.random.default_rng(seed)
        sparse = random_sparse(rng, 8, 8, n_valid=n_valid)
        out = dilate(sparse, make_kernel("cross", 3))
        assert np.all(out.valid[sparse.valid])
        assert np.array_equal(out.depth[sparse.valid], sparse.depth[sparse.valid])


class TestInterpolate:
    def test_nearest_step_profile(self):
        # Valid ends of an 11-wide strip; the midpoint x=5 ties in distance
        # and must take the earlier scan-order pixel (x=0).
        depth = np.zeros((1, 11))
        depth[0, 0] = 2.0
        depth[0, 10] = 8.0
        out = interpolate(sparse_from(depth), "nearest")
        assert np.array_equal(out.depth[0], [2, 2, 2, 2, 2, 2, 8, 8, 8, 8, 8])
        assert out.n_valid == 11

    def test_nearest_copies_exact_values(self):
        depth = np.zeros((3, 3))
        depth[1, 1] = 0.1 + 0.2
        out = interpolate(sparse_from(depth), "nearest")
        assert np.all(out.depth == depth[1, 1])

    def test_bilinear_two_point_blend(self):
        # Hole at x=1 between supports at x=0 and x=3: weights 1 and 1/2.
        depth = np.zeros((1, 4))
        depth[0, 0] = 2.0
        depth[0, 3] = 8.0
        out = interpolate(sparse_from(depth), "bilinear")
        expect = (1.0 * 2.0 + 0.5 * 8.0) / 1.5
        assert out.depth[0, 1] == pytest.approx(expect, abs=1e-12)

    def test_bilinear_single_support_is_constant(self):
        depth = np.zeros((4, 5))
        depth[2, 3] = 6.5
        out = interpolate(sparse_from(depth), "bilinear")
        assert np.all(out.depth == 6.5)

    def test_bilinear_equidistant_ring_picks_scan_order(self):
        # Five supports, four of them at squared distance 4 from the hole:
        # only the first three in scan order join the d2=2 winner.
        depth = np.zeros((5, 5))
        coords = {(0, 2): 10.0, (1, 1): 20.0, (2, 0): 30.0, (2, 4): 40.0, (4, 2): 50.0}
        for (y, x), v in coords.items():
            depth[y, x] = v
        out = interpolate(sparse_from(depth), "bilinear")
        w_near = 1.0 / math.sqrt(2.0)
        w_far = 0.5
        expect = (w_near * 20.0 + w_far * (10.0 + 30.0 + 40.0)) / (w_near + 3 * w_far)
        assert out.depth[2, 2] == pytest.approx(expect, abs=1e-12)

    def test_valid_pixels_kept_by_both_methods(self, rng):
        sparse = random_sparse(rng, 7, 7, n_valid=9)
        for method in ("nearest", "bilinear"):
            out = interpolate(sparse, method)
            assert np.array_equal(out.depth[sparse.valid], sparse.depth[sparse.valid])
            assert out.n_valid == 49

    @pytest.mark.parametrize("method", ["nearest", "bilinear"])
    def test_matches_loop_oracle(self, rng, method):
        for trial in range(4):
            sparse = random_sparse(rng, 8, 9, n_valid=int(rng.integers(1, 12)))
            got = interpolate(sparse, method)
            want = oracle_interpolate(sparse, method)
            if method == "nearest":
                assert np.array_equal(got.depth, want)
            else:
                np.testing.assert_allclose(got.depth, want, rtol=0, atol=1e-12)

    def test_fully_dense_input_unchanged(self):
        depth = np.arange(1, 10, dtype=np.float64).reshape(3, 3)
        out = interpolate(sparse_from(depth), "nearest")
        assert np.array_equal(out.depth, depth)

    def test_empty_support_raises(self):
        with pytest.raises(SupportError):
            interpolate(sparse_from(np.zeros((3, 3))), "nearest")

    def test_unknown_method_rejected(self):
        sparse = sparse_from(np.ones((2, 2)))
        with pytest.raises(ParameterError):
            interpolate(sparse, "cubic")

    @given(st.integers(0, 2**32 - 1))
    def test_output_depths_within_support_range(self, seed):
        rng = np.random.default_rng(seed)
        sparse = random_sparse(rng, 6, 6, n_valid=int(rng.integers(1, 10)))
        lo = sparse.depth[sparse.valid].min()
        hi = sparse.depth[sparse.valid].max()
        for method in ("nearest", "bilinear"):
            out = interpolate(sparse, method)
            assert np.all(out.depth >= lo - 1e-12)
            assert np.all(out.depth <= hi + 1e-12)
