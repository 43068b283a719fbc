import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from depthcomp.errors import CodecError, ParameterError, ShapeError
from depthcomp.grid import (
    DenseGrid,
    SparseDepthMap,
    downsample_mask,
    read_csv_grid,
    read_kitti_png,
    write_csv_grid,
    write_kitti_png,
)


def png_from_raw(raw):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(raw, dtype=np.uint16)).save(buf, format="PNG")
    return buf.getvalue()


class TestDenseGrid:
    def test_promotes_2d_to_single_channel(self):
        g = DenseGrid(np.ones((3, 4)))
        assert g.data.shape == (3, 4, 1)
        assert (g.height, g.width, g.channels) == (3, 4, 1)

    def test_rejects_non_finite(self):
        with pytest.raises(ShapeError):
            DenseGrid(np.array([[1.0, np.nan]]))
        with pytest.raises(ShapeError):
            DenseGrid(np.array([[np.inf, 1.0]]))

    def test_rejects_bad_rank_and_empty(self):
        with pytest.raises(ShapeError):
            DenseGrid(np.zeros(5))
        with pytest.raises(ShapeError):
            DenseGrid(np.zeros((0, 3, 1)))


class TestSparseDepthMap:
    def test_invalid_cells_store_zero(self):
        m = SparseDepthMap(np.array([[2.0, 7.0]]), np.array([[True, False]]))
        assert m.depth[0, 1] == 0.0
        assert m.n_valid == 1

    def test_mask_inferred_from_positive_depth(self):
        m = SparseDepthMap(np.array([[0.0, 3.5], [0.0, 0.0]]))
        assert m.valid.tolist() == [[False, True], [False, False]]
        assert m.density == 0.25

    def test_valid_pixel_must_be_positive_finite(self):
        with pytest.raises(ShapeError):
            SparseDepthMap(np.array([[0.0]]), np.array([[True]]))
        with pytest.raises(ShapeError):
            SparseDepthMap(np.array([[np.nan]]), np.array([[True]]))

    def test_mask_shape_must_match(self):
        with pytest.raises(ShapeError):
            SparseDepthMap(np.ones((2, 2)), np.ones((2, 3), dtype=bool))


class TestKittiPng:
    def test_raw_256_is_one_meter(self):
        m = read_kitti_png(png_from_raw([[256]]))
        assert m.depth[0, 0] == 1.0
        assert m.valid[0, 0]

    def test_raw_zero_is_invalid(self):
        m = read_kitti_png(png_from_raw([[0]]))
        assert not m.valid[0, 0]
        assert m.depth[0, 0] == 0.0

    def test_raw_21760_is_85_meters(self):
        # 21760 / 256, worked by hand
        m = read_kitti_png(png_from_raw([[21760]]))
        assert m.depth[0, 0] == 85.0

    def test_quantization_aligned_roundtrip_exact(self, rng):
        raw = rng.integers(0, 65536, size=(7, 9))
        m = SparseDepthMap(raw / 256.0, raw > 0)
        back = read_kitti_png(write_kitti_png(m))
        assert np.array_equal(back.depth, m.depth)
        assert np.array_equal(back.valid, m.valid)

    def test_all_invalid_map_encodes_all_zero(self):
        m = SparseDepthMap(np.zeros((3, 3)))
        raw = np.asarray(Image.open(io.BytesIO(write_kitti_png(m))))
        assert (raw == 0).all()

    def test_round_half_up_1003_millimeters(self):
        # 1.003 * 256 = 256.768 -> raw 257 under round-half-up; rereads
        # as 257/256 = 1.00390625
        m = SparseDepthMap(np.array([[1.003]]))
        back = read_kitti_png(write_kitti_png(m))
        assert back.depth[0, 0] == 1.00390625

    def test_depth_at_or_beyond_range_raises(self):
        for depth in (256.0, 300.0):
            with pytest.raises(CodecError):
                write_kitti_png(SparseDepthMap(np.array([[depth]])))

    def test_tiny_valid_depth_stays_valid(self):
        # below half the quantization step the raw value would round to
        # 0 (= invalid); the codec clamps it up to raw 1 instead
        m = SparseDepthMap(np.array([[1e-4]]))
        back = read_kitti_png(write_kitti_png(m))
        assert back.valid[0, 0]
        assert back.depth[0, 0] == 1.0 / 256.0

    def test_rejects_8bit_png(self):
        buf = io.BytesIO()
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(CodecError):
            read_kitti_png(buf.getvalue())

    def test_rejects_garbage_payload(self):
        with pytest.raises(CodecError):
            read_kitti_png(b"not a png at all")

    @given(st.integers(0, 65535))
    def test_single_pixel_roundtrip_any_raw(self, raw):
        m = read_kitti_png(png_from_raw([[raw]]))
        assert np.asarray(Image.open(io.BytesIO(write_kitti_png(m))))[0, 0] == raw


class TestCsvGrid:
    def test_two_by_two(self):
        g = read_csv_grid("1,2\n3,4")
        assert g.data[:, :, 0].tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_one_by_one_zero(self):
        assert read_csv_grid("0").data[0, 0, 0] == 0.0

    def test_roundtrip_identity(self, rng):
        g = DenseGrid(rng.normal(size=(4, 5, 3)))
        back = read_csv_grid(write_csv_grid(g), channels=3)
        assert np.array_equal(back.data, g.data)

    def test_full_precision(self):
        g = DenseGrid(np.array([[np.pi, 1 / 3]]))
        assert np.array_equal(read_csv_grid(write_csv_grid(g)).data, g.data)

    def test_ragged_rows_rejected(self):
        with pytest.raises(CodecError):
            read_csv_grid("1,2\n3")

    def test_non_numeric_cell_rejected(self):
        with pytest.raises(CodecError):
            read_csv_grid("1,x")

    def test_empty_rejected(self):
        with pytest.raises(CodecError):
            read_csv_grid("  \n ")


class TestDownsampleMask:
    def test_all_true_stays_true(self):
        assert downsample_mask(np.ones((4, 4), dtype=bool), 2).all()

    def test_single_true_pixel_marks_one_block(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[3, 1] = True
        out = downsample_mask(mask, 2)
        assert out.sum() == 1
        assert out[1, 0]

    def test_checkerboard_collapses_to_all_true(self):
        mask = np.indices((4, 4)).sum(axis=0) % 2 == 0
        assert downsample_mask(mask, 2).all()

    def test_non_divisible_factor_rejected(self):
        with pytest.raises(ShapeError):
            downsample_mask(np.ones((4, 6), dtype=bool), 4)
        with pytest.raises(ParameterError):
            downsample_mask(np.ones((4, 4), dtype=bool), 0)

    @given(st.integers(1, 40))
    def test_density_never_decreases(self, seed):
        local = np.random.default_rng(seed)
        mask = local.random((8, 12)) < local.random()
        out = downsample_mask(mask, 2)
        assert out.mean() >= mask.mean()
