"""Tests for edit-pair constructors.

Covers:
- Splice algebra of insertion and deletion pairs (sample-exact inverses)
- Substitution overwrites exactly the destination span
- Acoustic pairs (denoise SNR, volume peak, speed/pitch instruction text)
- Loss-weight masks and frame spans
- Constructor factory and end-to-end semantic examples
"""

import unittest
from unittest.mock import Mock

import numpy as np

from audio_io import ManifestEntry, Waveform
from constructors import SUPPORTED_TASKS, ConstructorContext, create_constructor
from constructors.acoustic import (
    construct_denoise_pair,
    construct_speed_pair,
    construct_volume_pair,
    pitch_instruction,
    speed_instruction,
    volume_instruction,
)
from constructors.base import (
    ALIGNED_CUTS,
    UNIFORM_CUTS,
    EditExample,
    build_loss_weights,
    frame_span,
    token_boundaries,
)
from constructors.semantic import (
    construct_deletion_pair,
    construct_insertion_pair,
    construct_substitution_pair,
)
from dsp import FRAME_SIZE, snr_db
from errors import ConfigurationError, PreconditionError
from instruction_parser import apply_edit, parse_instruction, tokenize_transcript


def _config():
    config = Mock()
    config.edit_weight = 2.0
    config.max_span_tokens = 3
    config.instruction_style = "basic"
    config.snr_min_db = 0.0
    config.snr_max_db = 20.0
    return config


def _noise_audio(seed, seconds=2.0, scale=0.1):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-scale, scale, int(16000 * seconds)), 16000)


class TestLossWeights(unittest.TestCase):
    """Test frame spans and per-frame loss weights."""

    def test_frame_span_rounds_outward(self):
        """Samples [a, b) cover frames floor(a/320) to ceil(b/320)."""
        self.assertEqual(frame_span(330, 700), (1, 3))
        self.assertEqual(frame_span(640, 960), (2, 3))
        self.assertEqual(frame_span(500, 500), (1, 1))

    def test_empty_span_is_uniform(self):
        """No edited region means all ones."""
        np.testing.assert_array_equal(build_loss_weights(10, (4, 4), 2.0), np.ones(10))

    def test_full_span(self):
        """A span over every frame gives all twos."""
        np.testing.assert_array_equal(build_loss_weights(6, (0, 6), 2.0), np.full(6, 2.0))

    def test_mean_weight(self):
        """Mean weight is 1 + (w - 1) |span| / T."""
        weights = build_loss_weights(20, (5, 9), 3.0)
        self.assertAlmostEqual(weights.mean(), 1 + 2.0 * 4 / 20)

    def test_weight_below_one(self):
        """Weights under 1 are rejected."""
        with self.assertRaises(ConfigurationError):
            build_loss_weights(5, (0, 2), 0.5)


class TestSpliceAlgebra(unittest.TestCase):
    """Test insertion and deletion pair construction."""

    def test_insertion_pair(self):
        """The input misses the cut; re-inserting it restores the original."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            audio = Waveform(rng.normal(size=int(rng.integers(2, 3000))), 16000)
            a = int(rng.integers(0, audio.num_samples))
            b = int(rng.integers(a + 1, audio.num_samples + 1))

            pair = construct_insertion_pair(audio, (a, b))

            self.assertEqual(pair.source.num_samples, audio.num_samples - (b - a))
            rebuilt = np.concatenate([pair.source.samples[:a], audio.samples[a:b], pair.source.samples[a:]])
            np.testing.assert_array_equal(rebuilt, audio.samples)
            np.testing.assert_array_equal(pair.target.samples, audio.samples)
            self.assertEqual(pair.edit_span_frames, (a // FRAME_SIZE, -(-b // FRAME_SIZE)))

    def test_deletion_then_insertion_is_identity(self):
        """Cutting the spliced artifact back out gives the original samples."""
        rng = np.random.default_rng(1)
        for _ in range(200):
            audio = Waveform(rng.normal(size=int(rng.integers(1, 2000))), 16000)
            artifact = Waveform(rng.normal(size=int(rng.integers(1, 500))), 16000)
            pos = int(rng.integers(0, audio.num_samples + 1))

            pair = construct_deletion_pair(audio, artifact, pos)
            self.assertEqual(pair.source.num_samples, audio.num_samples + artifact.num_samples)

            undone = construct_insertion_pair(pair.source, (pos, pos + artifact.num_samples))
            np.testing.assert_array_equal(undone.source.samples, audio.samples)

    def test_empty_cut_rejected(self):
        """A zero-length cut is a precondition failure."""
        with self.assertRaises(PreconditionError):
            construct_insertion_pair(_noise_audio(0, 0.1), (10, 10))

    def test_out_of_bounds_cut(self):
        """Cuts beyond the audio are rejected."""
        with self.assertRaises(PreconditionError):
            construct_insertion_pair(_noise_audio(0, 0.1), (100, 5000))


class TestSubstitution(unittest.TestCase):
    """Test substitution pair construction."""

    def test_overwrites_destination_only(self):
        """Input equals target except on dst, where it holds the src samples."""
        audio = _noise_audio(2, 0.5)

        pair = construct_substitution_pair(audio, (100, 400), (1000, 1300))

        differs = np.flatnonzero(pair.source.samples != pair.target.samples)
        self.assertEqual(differs.min(), 1000)
        self.assertEqual(differs.max(), 1299)
        np.testing.assert_array_equal(pair.source.samples[1000:1300], audio.samples[100:400])
        self.assertEqual(pair.source.num_samples, pair.target.num_samples)

    def test_unequal_spans_use_shorter_length(self):
        """Spans of different length are cropped to the shorter one."""
        pair = construct_substitution_pair(_noise_audio(3, 0.5), (0, 500), (2000, 2300))
        self.assertEqual(pair.params["src_samples"], [0, 300])
        self.assertEqual(pair.params["dst_samples"], [2000, 2300])

    def test_overlap_rejected(self):
        """Overlapping spans are an error."""
        with self.assertRaises(PreconditionError):
            construct_substitution_pair(_noise_audio(4, 0.5), (100, 400), (300, 600))


class TestAcousticPairs(unittest.TestCase):
    """Test global acoustic edits."""

    def test_denoise_hits_snr(self):
        """Target is the clean audio and the input mixes noise at the requested SNR."""
        clean = _noise_audio(5, 1.0, scale=0.05)
        pool = [_noise_audio(6, 0.7, scale=0.05)]

        pair = construct_denoise_pair(clean, pool, 7.5, np.random.default_rng(0))

        np.testing.assert_array_equal(pair.target.samples, clean.samples)
        self.assertLess(abs(snr_db(clean.samples, pair.source.samples) - 7.5), 0.01)

    def test_denoise_is_seeded(self):
        """The same seed gives the same mixture."""
        clean, pool = _noise_audio(5, 0.5), [_noise_audio(6, 0.7), _noise_audio(7, 0.3)]

        first = construct_denoise_pair(clean, pool, 5.0, np.random.default_rng(11))
        second = construct_denoise_pair(clean, pool, 5.0, np.random.default_rng(11))

        np.testing.assert_array_equal(first.source.samples, second.source.samples)

    def test_empty_noise_pool(self):
        """Denoising needs a noise pool."""
        with self.assertRaises(ConfigurationError):
            construct_denoise_pair(_noise_audio(5, 0.5), [], 5.0, np.random.default_rng(0))

    def test_volume_peak(self):
        """Factor 1.5 scales the peak by 1.5 when nothing clips."""
        audio = _noise_audio(8, 0.5, scale=0.4)

        pair = construct_volume_pair(audio, 1.5)

        self.assertAlmostEqual(pair.target.peak, 1.5 * audio.peak)
        self.assertEqual(pair.edit_span_frames, (0, 0))

    def test_speed_durations(self):
        """Speed 2 halves the target duration."""
        pair = construct_speed_pair(_noise_audio(9, 1.0), 2.0)

        self.assertEqual(pair.target.num_samples, 8000)
        self.assertAlmostEqual(pair.params["target_duration_s"], 0.5)

    def test_instruction_text(self):
        """Instruction strings follow the acoustic test-set phrasing."""
        self.assertEqual(speed_instruction(1.7), "adjusts the speed to 1.7")
        self.assertEqual(speed_instruction(0.5), "adjusts the speed to 0.5")
        self.assertEqual(pitch_instruction(-4), "shifts the pitch by -4 steps")
        self.assertEqual(volume_instruction(2.0), "adjusts the volume to 2")


class TestTokenBoundaries(unittest.TestCase):
    """Test token-to-sample mapping."""

    def test_uniform_cuts_snap_to_frames(self):
        """Without alignment, tokens share the audio on frame edges."""
        entry = ManifestEntry(id="a", audio_path="a.wav", transcript="one two three four", language="en")

        bounds, mode = token_boundaries(entry, ["one", "two", "three", "four"], 12800)

        self.assertEqual(mode, UNIFORM_CUTS)
        self.assertEqual(bounds, [0, 3200, 6400, 9600, 12800])
        self.assertTrue(all(b % FRAME_SIZE == 0 for b in bounds))

    def test_aligned_cuts(self):
        """Per-token alignments place boundaries at token starts."""
        entry = ManifestEntry(
            id="a", audio_path="a.wav", transcript="hi there", language="en", spans=[[0.1, 0.4], [0.5, 0.9]]
        )

        bounds, mode = token_boundaries(entry, ["hi", "there"], 16000)

        self.assertEqual(mode, ALIGNED_CUTS)
        self.assertEqual(bounds, [0, 8000, 16000])


class TestFactory(unittest.TestCase):
    """Test create_constructor."""

    def test_every_supported_task(self):
        """Each supported task maps to a constructor reporting that task."""
        for task in SUPPORTED_TASKS:
            constructor = create_constructor(task, _config(), Mock())
            self.assertEqual(constructor.task, task)

    def test_reserved_task(self):
        """Emotion and dialect have no constructor."""
        with self.assertRaises(ValueError) as ctx:
            create_constructor("emotion", _config(), Mock())
        self.assertIn("reserved", str(ctx.exception))

    def test_unknown_task(self):
        """Unknown tasks are rejected."""
        with self.assertRaises(ValueError) as ctx:
            create_constructor("karaoke", _config(), Mock())
        self.assertIn("Unknown task type", str(ctx.exception))


class TestSemanticConstructors(unittest.TestCase):
    """Test full semantic examples built from one source item."""

    def setUp(self):
        self.entry = ManifestEntry(
            id="utt1",
            audio_path="utt1.wav",
            transcript="the quick brown fox jumps over the lazy dog",
            language="en",
        )
        self.audio = _noise_audio(10, 3.0)

    def _check(self, example):
        self.assertEqual(example.target_text, self.entry.transcript)
        self.assertEqual(example.validate(), [])
        self.assertEqual(example.cot.reconstruct(), example.target_text)
        parsed = parse_instruction(example.instruction, example.language)
        edited, _ = apply_edit(example.source_text, parsed)
        self.assertEqual(edited, example.target_text)
        weights = example.loss_weights
        self.assertEqual(weights.shape[0], example.target_frames)
        self.assertTrue(set(np.unique(weights)) <= {1.0, 2.0})

    def test_insertion_example(self):
        """The source lacks words and audio that the target has."""
        constructor = create_constructor("insertion", _config(), Mock())
        for seed in range(10):
            example = constructor.construct(self.entry, self.audio, np.random.default_rng(seed))

            self._check(example)
            self.assertLess(example.source_audio.num_samples, example.target_audio.num_samples)
            self.assertLess(
                len(tokenize_transcript(example.source_text, "en")), len(tokenize_transcript(example.target_text, "en"))
            )
            self.assertGreater(example.loss_weights.max(), 1.0)

    def test_deletion_example(self):
        """The source carries extra donor words and audio."""
        constructor = create_constructor("deletion", _config(), Mock())
        for seed in range(10):
            example = constructor.construct(self.entry, self.audio, np.random.default_rng(seed))

            self._check(example)
            self.assertGreater(example.source_audio.num_samples, example.target_audio.num_samples)
            np.testing.assert_array_equal(example.target_audio.samples, self.audio.samples)

    def test_substitution_example(self):
        """Source and target audio have equal length."""
        entry = ManifestEntry(id="zh1", audio_path="zh1.wav", transcript="比如当有人替受伤的小鸟包扎时", language="zh")
        constructor = create_constructor("substitution", _config(), Mock())
        for seed in range(10):
            example = constructor.construct(entry, self.audio, np.random.default_rng(seed))

            self.assertEqual(example.source_audio.num_samples, example.target_audio.num_samples)
            self.assertEqual(example.validate(), [])
            self.assertNotEqual(example.source_text, example.target_text)

    def test_same_seed_same_example(self):
        """Construction is deterministic for a fixed generator seed."""
        constructor = create_constructor("insertion", _config(), Mock())

        first = constructor.construct(self.entry, self.audio, np.random.default_rng(3))
        second = constructor.construct(self.entry, self.audio, np.random.default_rng(3))

        self.assertEqual(first, second)
        np.testing.assert_array_equal(first.source_audio.samples, second.source_audio.samples)

    def test_too_short_transcript(self):
        """Insertion needs at least two tokens."""
        entry = ManifestEntry(id="x", audio_path="x.wav", transcript="hello", language="en")
        constructor = create_constructor("insertion", _config(), Mock())

        with self.assertRaises(PreconditionError):
            constructor.construct(entry, self.audio, np.random.default_rng(0))


class TestAcousticConstructors(unittest.TestCase):
    """Test acoustic examples built from one source item."""

    def setUp(self):
        self.entry = ManifestEntry(id="utt1", audio_path="utt1.wav", transcript="hello world", language="en")
        self.audio = _noise_audio(12, 1.0)

    def test_acoustic_examples_have_no_cot(self):
        """Acoustic examples keep the transcript and use uniform weights."""
        context = ConstructorContext(noise_pool=[_noise_audio(13, 0.5)])
        for task in ("denoise", "add_sound", "speed", "pitch", "volume"):
            with self.subTest(task=task):
                constructor = create_constructor(task, _config(), Mock(), context)

                example = constructor.construct(self.entry, self.audio, np.random.default_rng(0))

                self.assertIsNone(example.cot)
                self.assertEqual(example.instruction_type, "acoustic")
                self.assertEqual(example.source_text, example.target_text)
                np.testing.assert_array_equal(example.loss_weights, np.ones(example.target_frames))

    def test_example_serialization(self):
        """to_dict and from_dict preserve the stored fields."""
        constructor = create_constructor("speed", _config(), Mock())
        example = constructor.construct(self.entry, self.audio, np.random.default_rng(0))

        restored = EditExample.from_dict(example.to_dict())

        self.assertEqual(restored, example)
        self.assertIn(example.params["rate"], (0.5, 0.6, 0.7, 0.8, 0.9, 1.1, 1.2, 1.3, 1.5, 1.7, 2.0))


if __name__ == "__main__":
    unittest.main()
