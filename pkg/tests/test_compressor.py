"""Tests for the 50 Hz to 10 Hz feature compressor."""

import unittest

import numpy as np

from compressor import (
    CLS_ATTENTION,
    MEAN_POOL,
    CLSAttentionParams,
    CompressorConfig,
    cls_attention_weights,
    compress,
    compressed_frame_rate,
)
from errors import ConfigurationError, ShapeError
from vae import UnifiedSequence


class TestCompressor(unittest.TestCase):
    """Test mean pooling and CLS attention pooling."""

    def setUp(self):
        self.z = UnifiedSequence(np.random.default_rng(0).normal(size=(12, 6)))

    def test_mean_pool_drops_trailing_frames(self):
        """12 frames at factor 5 give 2 averaged rows."""
        out = compress(self.z, CompressorConfig(factor=5))

        self.assertEqual(out.length, 2)
        np.testing.assert_allclose(out.values[1], self.z.values[5:10].mean(axis=0))

    def test_short_input_gives_empty_output(self):
        """Fewer frames than the factor compress to nothing."""
        out = compress(UnifiedSequence(np.zeros((3, 6))), CompressorConfig(factor=5))
        self.assertEqual(out.values.shape, (0, 6))

    def test_uniform_attention_equals_mean_pool(self):
        """A zero query attends uniformly."""
        config = CompressorConfig(factor=4, mode=CLS_ATTENTION)

        attended = compress(self.z, config, CLSAttentionParams.uniform(6))
        pooled = compress(self.z, CompressorConfig(factor=4, mode=MEAN_POOL))

        np.testing.assert_allclose(attended.values, pooled.values)

    def test_attention_weights_are_convex(self):
        """Weights are positive, sum to one, and outputs stay within each chunk's range."""
        config = CompressorConfig(factor=4, mode=CLS_ATTENTION)
        params = CLSAttentionParams.random(6, 8, np.random.default_rng(1))

        weights = cls_attention_weights(self.z, config, params)
        out = compress(self.z, config, params)

        np.testing.assert_allclose(weights.sum(axis=1), 1.0)
        self.assertTrue(np.all(weights > 0))
        chunks = self.z.values.reshape(3, 4, 6)
        self.assertTrue(np.all(out.values <= chunks.max(axis=1) + 1e-12))
        self.assertTrue(np.all(out.values >= chunks.min(axis=1) - 1e-12))

    def test_attention_needs_params(self):
        """CLS attention without parameters is a configuration error."""
        with self.assertRaises(ConfigurationError):
            compress(self.z, CompressorConfig(mode=CLS_ATTENTION))

    def test_attention_shape_mismatch(self):
        """A key projection of the wrong width is rejected."""
        params = CLSAttentionParams.random(5, 8, np.random.default_rng(1))
        with self.assertRaises(ShapeError):
            cls_attention_weights(self.z, CompressorConfig(mode=CLS_ATTENTION), params)

    def test_invalid_config(self):
        """Factor must be positive and the mode known."""
        self.assertTrue(CompressorConfig(factor=0).validate())
        self.assertTrue(CompressorConfig(mode="max").validate())
        with self.assertRaises(ConfigurationError):
            compressed_frame_rate(50.0, CompressorConfig(factor=0))

    def test_frame_rate(self):
        """50 Hz at factor 5 is 10 Hz."""
        self.assertEqual(compressed_frame_rate(50.0, CompressorConfig()), 10.0)


if __name__ == "__main__":
    unittest.main()
