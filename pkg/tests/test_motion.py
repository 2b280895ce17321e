import numpy as np
import pytest

from stylemotion import (
    MotionFrame,
    MotionSequence,
    RegionPartition,
    SmoothingSkippedWarning,
    savgol_smooth,
    split_regions,
    merge_regions,
    save_sequence,
    load_sequence,
)


def make_seq(expression, pose=None, fps=25):
    expression = np.asarray(expression, dtype=np.float64)
    if pose is None:
        pose = np.zeros((expression.shape[0], 2))
    return MotionSequence(shape=np.zeros(3), expression=expression, pose=pose, fps=fps)


class TestDataModel:
    def test_frame_rejects_non_finite(self):
        with pytest.raises(ValueError):
            MotionFrame(expression=np.array([np.nan]), pose=np.array([0.0]))

    def test_sequence_rejects_empty(self):
        with pytest.raises(ValueError):
            make_seq(np.zeros((0, 3)))

    def test_sequence_rejects_frame_count_mismatch(self):
        with pytest.raises(ValueError):
            MotionSequence(shape=np.zeros(2), expression=np.zeros((4, 3)), pose=np.zeros((5, 2)))

    def test_sequence_rejects_nonpositive_fps(self):
        with pytest.raises(ValueError):
            make_seq(np.zeros((3, 2)), fps=0)

    def test_frame_accessor_matches_rows(self):
        seq = make_seq(np.arange(12.0).reshape(4, 3))
        f = seq.frame(2)
        assert np.array_equal(f.expression, [6.0, 7.0, 8.0])

    def test_motion_matrix_concatenates_channels(self, rng):
        expr = rng.normal(size=(5, 3))
        pose = rng.normal(size=(5, 2))
        seq = make_seq(expr, pose)
        assert np.array_equal(seq.motion_matrix(), np.concatenate([expr, pose], axis=1))


class TestSavgol:
    def test_constant_preserved(self):
        seq = make_seq(np.full((5, 1), 3.0))
        out = savgol_smooth(seq, window=5, polyorder=2)
        assert np.allclose(out.expression, 3.0, atol=1e-12)

    def test_linear_preserved(self):
        seq = make_seq(np.arange(5.0)[:, None])
        out = savgol_smooth(seq, window=5, polyorder=2)
        assert np.allclose(out.expression[:, 0], np.arange(5.0), atol=1e-12)

    def test_quadratic_center_matches_least_squares_fit(self):
        # Degree-1 fit of t^2 over the full window, evaluated at the center.
        y = np.array([0.0, 1.0, 4.0, 9.0, 16.0])
        x = np.arange(5.0)
        oracle = np.polyval(np.polyfit(x, y, 1), 2.0)
        assert oracle == pytest.approx(6.0)
        out = savgol_smooth(make_seq(y[:, None]), window=5, polyorder=1)
        assert out.expression[2, 0] == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("polyorder", [0, 1, 2, 3])
    def test_polynomial_idempotence(self, polyorder, rng):
        t = np.arange(40.0)
        coeffs = rng.normal(size=(polyorder + 1, 3))
        data = np.stack([np.polyval(coeffs[:, c], t) for c in range(3)], axis=1)
        seq = make_seq(data, pose=data[:, :2].copy())
        out = savgol_smooth(seq, window=9, polyorder=polyorder)
        scale = np.abs(data).max()
        assert np.allclose(out.expression, data, rtol=0, atol=1e-10 * max(scale, 1.0))
        assert np.allclose(out.pose, seq.pose, rtol=0, atol=1e-10 * max(scale, 1.0))

    def test_boundary_frames_match_truncated_window_fit(self, rng):
        data = rng.normal(size=(20, 2))
        out = savgol_smooth(make_seq(data), window=7, polyorder=2)
        for t in (0, 1, 2, 17, 18, 19):
            lo, hi = max(0, t - 3), min(20, t + 4)
            x = np.arange(lo, hi, dtype=float)
            for c in range(2):
                expect = np.polyval(np.polyfit(x, data[lo:hi, c], 2), float(t))
                assert out.expression[t, c] == pytest.approx(expect, abs=1e-9)

    def test_interior_matches_scipy(self, rng):
        scipy_signal = pytest.importorskip("scipy.signal")
        data = rng.normal(size=(50, 3))
        out = savgol_smooth(make_seq(data), window=9, polyorder=2)
        ref = scipy_signal.savgol_filter(data, 9, 2, axis=0)
        assert np.allclose(out.expression[4:-4], ref[4:-4], atol=1e-10)

    def test_commutes_with_channel_permutation(self, rng):
        data = rng.normal(size=(30, 4))
        perm = rng.permutation(4)
        a = savgol_smooth(make_seq(data), window=7, polyorder=2).expression[:, perm]
        b = savgol_smooth(make_seq(data[:, perm]), window=7, polyorder=2).expression
        assert np.allclose(a, b, atol=1e-12)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            savgol_smooth(make_seq(np.zeros((10, 1))), window=4, polyorder=2)

    def test_polyorder_not_below_window_rejected(self):
        with pytest.raises(ValueError):
            savgol_smooth(make_seq(np.zeros((10, 1))), window=5, polyorder=5)

    def test_window_longer_than_sequence_warns_and_returns_unchanged(self):
        seq = make_seq(np.arange(6.0).reshape(3, 2))
        with pytest.warns(SmoothingSkippedWarning):
            out = savgol_smooth(seq, window=5, polyorder=2)
        assert out is seq

    def test_shape_and_fps_untouched(self, rng):
        seq = MotionSequence(
            shape=rng.normal(size=4), expression=rng.normal(size=(20, 3)),
            pose=rng.normal(size=(20, 2)), fps=30,
        )
        out = savgol_smooth(seq, window=5, polyorder=2)
        assert np.array_equal(out.shape, seq.shape)
        assert out.fps == 30


class TestRegions:
    def test_split_selects_columns(self):
        part = RegionPartition((0, 1), (2, 3))
        upper, lower = split_regions(np.array([[1.0, 2.0, 3.0, 4.0]]), part)
        assert np.array_equal(upper, [[1.0, 2.0]])
        assert np.array_equal(lower, [[3.0, 4.0]])

    def test_split_merge_roundtrip(self, rng):
        part = RegionPartition((0, 3, 5), (1, 2, 4))
        data = rng.normal(size=(10, 6))
        upper, lower = split_regions(data, part)
        assert np.array_equal(merge_regions(upper, lower, part), data)

    def test_overlapping_partition_rejected(self):
        with pytest.raises(ValueError):
            RegionPartition((0, 1), (1, 2))

    def test_empty_region_rejected(self):
        with pytest.raises(ValueError):
            RegionPartition((), (0, 1))

    def test_partition_must_cover_dims(self):
        part = RegionPartition((0,), (2,))
        with pytest.raises(ValueError):
            split_regions(np.zeros((2, 3)), part)

    def test_out_of_range_index_rejected(self):
        part = RegionPartition((0, 1), (2, 5))
        with pytest.raises(ValueError):
            split_regions(np.zeros((2, 4)), part)


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        # Values representable in float32 must survive save/load exactly.
        seq = MotionSequence(
            shape=rng.normal(size=3).astype(np.float32),
            expression=rng.normal(size=(12, 4)).astype(np.float32),
            pose=rng.normal(size=(12, 2)).astype(np.float32),
            fps=30,
        )
        save_sequence(seq, tmp_path / "clip")
        back = load_sequence(tmp_path / "clip")
        assert np.array_equal(back.expression, seq.expression)
        assert np.array_equal(back.pose, seq.pose)
        assert np.array_equal(back.shape, seq.shape)
        assert back.fps == 30

    def test_resave_is_byte_identical(self, tmp_path, rng):
        seq = make_seq(rng.normal(size=(8, 3)).astype(np.float32))
        save_sequence(seq, tmp_path / "a")
        save_sequence(load_sequence(tmp_path / "a"), tmp_path / "b")
        for name in ("expression.f32", "pose.f32", "shape.f32", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_files_are_little_endian_float32(self, tmp_path):
        seq = make_seq(np.array([[1.0, 2.0], [3.0, 4.0]]))
        save_sequence(seq, tmp_path / "clip")
        raw = np.fromfile(tmp_path / "clip" / "expression.f32", dtype="<f4")
        assert np.array_equal(raw, [1.0, 2.0, 3.0, 4.0])

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sequence(tmp_path / "nope")

    def test_truncated_tensor_file_rejected(self, tmp_path):
        seq = make_seq(np.zeros((4, 2)))
        save_sequence(seq, tmp_path / "clip")
        data = (tmp_path / "clip" / "expression.f32").read_bytes()
        (tmp_path / "clip" / "expression.f32").write_bytes(data[:-4])
        with pytest.raises(ValueError):
            load_sequence(tmp_path / "clip")
