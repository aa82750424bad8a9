import numpy as np
import pytest

from landseg.infer import sliding_infer


def const_logits(values):
    values = np.asarray(values, dtype=np.float64)

    def fn(patch):
        h, w = patch.shape[:2]
        return np.broadcast_to(values, (h, w, values.size))

    return fn


class TestSlidingInfer:
    def test_single_window_equals_forward_argmax(self):
        rng = np.random.default_rng(0)
        image = rng.random((16, 16, 3)).astype(np.float32)
        logits = rng.normal(size=(16, 16, 6))

        def fn(patch):
            assert patch.shape == (16, 16, 3)
            return logits

        out = sliding_infer(fn, image, window=16)
        np.testing.assert_array_equal(out, np.argmax(logits, axis=-1))

    def test_constant_model_constant_labels(self):
        image = np.zeros((40, 52, 3), dtype=np.float32)
        out = sliding_infer(const_logits([0.1, 0.9, 0.2, 0, 0, 0]), image,
                            window=16, stride=8)
        assert (out == 1).all()
        assert out.shape == (40, 52)

    def test_two_window_overlap_hand_oracle(self):
        # 1-D-ish case: height 4, width 6, window 4, stride 2 -> windows at
        # cols 0 and 2. logits favor class 0 in window A, class 1 in window B;
        # the overlap (cols 2..3) averages them.
        image = np.zeros((4, 6, 3), dtype=np.float32)
        calls = []

        def fn(patch):
            left = len(calls)
            calls.append(left)
            out = np.zeros((4, 4, 6))
            if left == 0:
                out[:, :, 0] = 3.0  # window at col 0
                out[:, :, 1] = 1.0
            else:
                out[:, :, 0] = 0.0  # window at col 2
                out[:, :, 1] = 2.0
            return out

        out = sliding_infer(fn, image, window=4, stride=2)
        assert len(calls) == 2
        # cols 0..1: only window A -> class 0 (3 > 1)
        assert (out[:, 0:2] == 0).all()
        # cols 2..3: average -> class 0: 1.5, class 1: 1.5 -> tie, lowest id
        assert (out[:, 2:4] == 0).all()
        # cols 4..5: only window B -> class 1
        assert (out[:, 4:6] == 1).all()

    def test_stride_equals_window_matches_per_window_argmax(self):
        rng = np.random.default_rng(1)
        image = rng.random((32, 48, 3)).astype(np.float32)
        cache = {}

        def fn(patch):
            key = patch.tobytes()
            if key not in cache:
                cache[key] = rng.normal(size=(16, 16, 6))
            return cache[key]

        out = sliding_infer(fn, image.copy(), window=16, stride=16)
        for top in range(0, 32, 16):
            for left in range(0, 48, 16):
                patch = image[top:top + 16, left:left + 16]
                expected = np.argmax(cache[patch.tobytes()], axis=-1)
                np.testing.assert_array_equal(out[top:top + 16, left:left + 16],
                                              expected)

    def test_small_image_padded_and_cropped(self):
        image = np.zeros((10, 12, 3), dtype=np.float32)
        out = sliding_infer(const_logits([0, 0, 5, 0, 0, 0]), image, window=16)
        assert out.shape == (10, 12)
        assert (out == 2).all()

    def test_full_coverage_with_clamped_last_window(self):
        # 1000-wide image, window 384, stride 192: last start clamps to 616
        image = np.zeros((8, 1000, 3), dtype=np.float32)
        seen = []

        def fn(patch):
            seen.append(patch.shape)
            return np.ones((patch.shape[0], patch.shape[1], 6))

        out = sliding_infer(fn, image, window=8, stride=4)
        assert out.shape == (8, 1000)
        # no unassigned pixels is implied by finite averaging (hits >= 1)

    def test_bad_stride_rejected(self):
        image = np.zeros((8, 8, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            sliding_infer(const_logits([1, 0, 0, 0, 0, 0]), image, window=4, stride=5)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        image = rng.random((24, 24, 3)).astype(np.float32)
        fixed = rng.normal(size=(16, 16, 6))
        a = sliding_infer(lambda p: fixed, image, 16, 8)
        b = sliding_infer(lambda p: fixed, image, 16, 8)
        np.testing.assert_array_equal(a, b)
