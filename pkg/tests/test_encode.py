"""Tests for the joints-by-frames image encoding and bilinear resize."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelalign.data import BodyFrame, SkeletonSequence
from skelalign.encode import (
    EncodeError,
    EncoderConfig,
    encode,
    encode_batch,
    encode_batch_array,
    encode_raster,
    resize_bilinear,
    write_ppm,
)


def make_sequence(seed, joints=25, frames=60, slots=2, lattice=False):
    rng = np.random.default_rng(seed)
    if lattice:
        # dyadic grid coordinates so that translations by grid values are
        # exact in float64, which makes translation invariance bit-exact
        draw = lambda: rng.integers(-8192, 8193, size=(joints, 3)) / 1024.0
    else:
        draw = lambda: rng.normal(size=(joints, 3))
    seq_frames = [BodyFrame([draw() for _ in range(slots)]) for _ in range(frames)]
    return SkeletonSequence(seq_frames, label=0)


def translate(seq, offset):
    frames = [
        BodyFrame([body + np.asarray(offset) for body in f.bodies]) for f in seq.frames
    ]
    return SkeletonSequence(frames, label=seq.label, domain=seq.domain,
                            subject_id=seq.subject_id, view_id=seq.view_id)


class TestEncode:
    CFG = EncoderConfig(out_height=32, out_width=32)

    def test_preresize_raster_shape(self):
        seq = make_sequence(0, joints=25, frames=60, slots=2)
        raster = encode_raster(seq, self.CFG)
        assert raster.shape == (50, 60, 3)

    def test_constant_channel_maps_to_zero(self):
        seq = make_sequence(1, joints=5, frames=6, slots=1)
        frames = [
            BodyFrame([np.column_stack([np.full(5, 2.5), b.bodies[0][:, 1], b.bodies[0][:, 2]])])
            for b in seq.frames
        ]
        flat_x = SkeletonSequence(frames, label=0)
        raster = encode_raster(flat_x, self.CFG)
        np.testing.assert_array_equal(raster[..., 0], np.zeros((10, 6)))
        assert raster[..., 1].max() > 0

    def test_output_shape_and_range(self):
        seq = make_sequence(2, joints=11, frames=17, slots=1)
        img = encode(seq, self.CFG)
        assert img.values.shape == (32, 32, 3)
        assert img.values.min() >= 0.0 and img.values.max() <= 1.0

    def test_empty_sequence_raises(self):
        with pytest.raises(EncodeError):
            encode(SkeletonSequence([]), self.CFG)

    def test_pure_function(self):
        seq = make_sequence(3)
        a = encode(seq, self.CFG).values
        b = encode(seq, self.CFG).values
        assert np.array_equal(a, b)

    def test_translation_invariance_is_exact(self):
        seq = make_sequence(4, lattice=True)
        moved = translate(seq, (3.0, -1.5, 0.25))
        assert np.array_equal(encode(seq, self.CFG).values,
                              encode(moved, self.CFG).values)

    def test_absent_body_slot_rows_are_zero(self):
        seq = make_sequence(5, joints=4, frames=5, slots=1)
        raster = encode_raster(seq, EncoderConfig(body_slots=2))
        np.testing.assert_array_equal(raster[4:], np.zeros((4, 5, 3)))
        # padding rows must not drag the normalization toward zero
        assert raster[:4].min() == 0.0 and raster[:4].max() == 1.0

    def test_row_locality_before_resize(self):
        rng = np.random.default_rng(6)
        coords = rng.uniform(-1.0, 1.0, size=(5, 6, 3))
        # pin every channel's extremes on joint 0 so edits elsewhere never
        # shift the normalization statistics
        coords[0, 0, :] = -10.0
        coords[0, 1, :] = 10.0
        frames = [BodyFrame([coords[:, t].copy()]) for t in range(6)]
        seq = SkeletonSequence([BodyFrame([coords[:, t]]) for t in range(6)], label=0)
        base = encode_raster(seq, EncoderConfig(body_slots=1))
        frames[2].bodies[0][3, 0] = 0.123  # interior value, extremes untouched
        changed = encode_raster(SkeletonSequence(frames, label=0), EncoderConfig(body_slots=1))
        diff_rows = np.argwhere(np.any(base != changed, axis=(1, 2))).ravel()
        assert diff_rows.tolist() == [3]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_translation_invariance_property(self, seed):
        rng = np.random.default_rng(seed)
        seq = make_sequence(seed, joints=5, frames=6, slots=1, lattice=True)
        offset = rng.integers(-4096, 4097, size=3) / 1024.0
        moved = translate(seq, offset)
        assert np.array_equal(encode(seq, self.CFG).values,
                              encode(moved, self.CFG).values)


class TestResizeBilinear:
    def test_constant_image_stays_constant(self):
        img = np.full((3, 5, 3), 0.7)
        out = resize_bilinear(img, 8, 2)
        np.testing.assert_allclose(out, np.full((8, 2, 3), 0.7), atol=1e-12)

    def test_row_interpolation_closed_form(self):
        img = np.array([[0.0, 1.0]])[:, :, None].repeat(3, axis=2)
        out = resize_bilinear(img, 1, 4)
        np.testing.assert_allclose(out[0, :, 0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-12)

    def test_identity_size(self):
        img = np.random.default_rng(7).uniform(size=(6, 9, 3))
        out = resize_bilinear(img, 6, 9)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_corners_coincide(self):
        img = np.random.default_rng(8).uniform(size=(5, 7, 3))
        out = resize_bilinear(img, 11, 13)
        np.testing.assert_allclose(out[0, 0], img[0, 0], atol=1e-12)
        np.testing.assert_allclose(out[-1, -1], img[-1, -1], atol=1e-12)
        np.testing.assert_allclose(out[0, -1], img[0, -1], atol=1e-12)
        np.testing.assert_allclose(out[-1, 0], img[-1, 0], atol=1e-12)

    def test_single_row_input(self):
        img = np.random.default_rng(9).uniform(size=(1, 4, 3))
        out = resize_bilinear(img, 3, 4)
        for r in range(3):
            np.testing.assert_allclose(out[r], img[0], atol=1e-12)


class TestEncodeBatch:
    CFG = EncoderConfig(out_height=16, out_width=16)

    def test_batch_of_32(self):
        seqs = [make_sequence(s, joints=5, frames=6, slots=1) for s in range(32)]
        batch = encode_batch(seqs, self.CFG)
        assert batch.shape == (32, 3, 16, 16)

    def test_single_item_matches_encode(self):
        seq = make_sequence(40, joints=5, frames=6, slots=1)
        batch = encode_batch([seq], self.CFG)
        np.testing.assert_array_equal(
            batch.data[0], encode(seq, self.CFG).values.transpose(2, 0, 1)
        )

    def test_order_follows_input(self):
        seqs = [make_sequence(s, joints=5, frames=6, slots=1) for s in range(4)]
        fwd = encode_batch_array(seqs, self.CFG)
        rev = encode_batch_array(list(reversed(seqs)), self.CFG)
        np.testing.assert_array_equal(fwd, rev[::-1])

    def test_empty_batch_raises(self):
        with pytest.raises(EncodeError):
            encode_batch([], self.CFG)


class TestPpm:
    def test_header_and_payload(self, tmp_path):
        values = np.zeros((2, 3, 3))
        values[0, 0] = (1.0, 0.5, 0.0)
        path = tmp_path / "img.ppm"
        write_ppm(values, path)
        blob = path.read_bytes()
        assert blob.startswith(b"P6\n3 2\n255\n")
        payload = blob.split(b"255\n", 1)[1]
        assert len(payload) == 2 * 3 * 3
        assert payload[:3] == bytes([255, 128, 0])

    def test_deterministic(self, tmp_path):
        values = np.random.default_rng(10).uniform(size=(4, 4, 3))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(values, a)
        write_ppm(values, b)
        assert a.read_bytes() == b.read_bytes()
