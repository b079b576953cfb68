"""Tests for benchmark generation/validation and the edit-set builder.

Covers:
- Task distributions (validation, degenerate weights, count-table proportions)
- Forced-count generation passes validation against the basic table
- Seeded generation is byte-identical across runs
- Expected-count parsing
- EditsetBuilder output files, statistics, determinism across --jobs, and locking
"""

import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import Mock

import numpy as np

from audio_io import ManifestEntry, Waveform, save_manifest, write_wav
from constructors.base import EditExample
from edit_forge import (
    BASIC_COUNTS,
    FULL_COUNTS,
    BenchmarkManifest,
    EditsetBuilder,
    TaskDistribution,
    expected_counts_from_json,
    generate_benchmark,
    item_rng,
    load_expected_counts,
    validate_benchmark,
)
from errors import ConfigurationError, DuplicateIdError, LockError
from locking import LOCK_FILE_NAME


def _zh_entries(count, offset=0):
    """Transcripts of eight distinct CJK characters each, unique across items."""
    entries = []
    for i in range(count):
        base = 0x4E00 + (offset + i) * 8
        text = "".join(chr(base + k) for k in range(8))
        entries.append(ManifestEntry(id=f"zh{i:04d}", audio_path=f"zh{i:04d}.wav", transcript=text, language="zh"))
    return entries


def _en_entries(count):
    """Lowercase transcripts of eight words unique across items."""
    entries = []
    for i in range(count):
        words = [f"w{i}t{k}" for k in range(8)]
        entries.append(ManifestEntry(id=f"en{i:04d}", audio_path=f"en{i:04d}.wav", transcript=" ".join(words), language="en"))
    return entries


class TestTaskDistribution(unittest.TestCase):
    """Test task and instruction-type sampling."""

    def test_single_task(self):
        """Weights (1, 0, 0) only ever draw deletion."""
        distribution = TaskDistribution.from_weights({"deletion": 1, "insertion": 0, "substitution": 0})
        rng = np.random.default_rng(0)

        draws = {distribution.draw_task(rng, "en") for _ in range(200)}

        self.assertEqual(draws, {"deletion"})
        self.assertEqual(distribution.tasks(), ["deletion"])

    def test_validate(self):
        """Unknown tasks, negative weights and zero sums are reported."""
        self.assertEqual(TaskDistribution.from_weights({"deletion": 1}).validate(), [])
        self.assertTrue(TaskDistribution.from_weights({"juggling": 1}).validate())
        self.assertTrue(TaskDistribution.from_weights({"deletion": -1, "insertion": 2}).validate())
        self.assertTrue(TaskDistribution.from_weights({"deletion": 0}).validate())

    def test_from_counts_per_language(self):
        """Count tables give per-language task and type weights."""
        distribution = TaskDistribution.from_counts(BASIC_COUNTS)

        self.assertEqual(distribution.weights_for("zh")["deletion"], 170)
        self.assertEqual(distribution.weights_for("en")["substitution"], 179)
        self.assertEqual(distribution.type_weights["en"]["deletion"]["content"], 133)

    def test_item_rng(self):
        """Generators depend only on seed and id."""
        self.assertEqual(item_rng(5, "a").integers(1 << 30), item_rng(5, "a").integers(1 << 30))
        self.assertNotEqual(item_rng(5, "a").integers(1 << 30), item_rng(5, "b").integers(1 << 30))


class TestGenerateBenchmark(unittest.TestCase):
    """Test text-only benchmark generation."""

    def test_single_task_distribution(self):
        """All generated items are deletions under (1, 0, 0)."""
        distribution = TaskDistribution.from_weights({"deletion": 1, "insertion": 0, "substitution": 0})

        manifest = generate_benchmark(_en_entries(30), distribution, np.random.default_rng(0))

        self.assertEqual(len(manifest.entries), 30)
        self.assertTrue(all(e.task == "deletion" for e in manifest.entries))
        self.assertTrue(all(e.cot.reconstruct() == e.target_text for e in manifest.entries))

    def test_forced_basic_counts_validate(self):
        """Filling the basic table exactly passes validation."""
        entries = _zh_entries(520) + _en_entries(540)
        distribution = TaskDistribution.from_counts(BASIC_COUNTS)

        manifest = generate_benchmark(entries, distribution, np.random.default_rng(7), counts=BASIC_COUNTS)
        report = validate_benchmark(manifest, BASIC_COUNTS)

        self.assertTrue(report.passed, [m.describe() for m in report.mismatches])
        self.assertEqual(report.total, 499 + 519)
        totals = {}
        for (task, language, _), count in manifest.counts.items():
            totals[(task, language)] = totals.get((task, language), 0) + count
        self.assertEqual(totals[("deletion", "zh")], 170)
        self.assertEqual(totals[("substitution", "zh")], 159)
        self.assertEqual(totals[("insertion", "en")], 160)
        self.assertEqual(totals[("substitution", "en")], 179)

    def test_full_distribution_proportions(self):
        """Sampling 896 zh and 655 en items stays within 3 sigma of the full table."""
        entries = _zh_entries(896) + _en_entries(655)
        distribution = TaskDistribution.from_counts(FULL_COUNTS)

        manifest = generate_benchmark(entries, distribution, np.random.default_rng(2024), style="full")

        self.assertEqual(manifest.skipped, [])
        actual = manifest.counts
        totals = {"zh": 896, "en": 655}
        for cell, expected in FULL_COUNTS.items():
            n = totals[cell[1]]
            p = expected / n
            sigma = math.sqrt(n * p * (1 - p))
            self.assertLessEqual(abs(actual.get(cell, 0) - expected), 3 * sigma, cell)

    def test_seeded_output_is_byte_identical(self):
        """Two runs with the same seed write the same manifest bytes."""
        entries = _zh_entries(40) + _en_entries(40)
        distribution = TaskDistribution.from_counts(FULL_COUNTS)

        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for run in range(2):
                path = Path(tmp) / f"bench{run}.jsonl"
                generate_benchmark(entries, distribution, np.random.default_rng(11), style="full").save(path)
                paths.append(path)

            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())

    def test_validation_reports_mismatch(self):
        """Missing and unexpected cells are both reported."""
        manifest = BenchmarkManifest(
            [EditExample(id="a", task="deletion", language="en", instruction="x", instruction_type="index")]
        )

        report = validate_benchmark(manifest, {("insertion", "en", "index"): 1})

        self.assertFalse(report.passed)
        self.assertEqual(len(report.mismatches), 2)
        self.assertEqual(report.to_dict()["total"], 1)

    def test_manifest_load_rejects_duplicates(self):
        """A saved benchmark with repeated ids cannot be loaded."""
        example = EditExample(id="a", task="deletion", language="en", instruction="x", instruction_type="index")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bench.jsonl"
            BenchmarkManifest([example, example]).save(path)

            with self.assertRaises(DuplicateIdError):
                BenchmarkManifest.load(path)


class TestExpectedCounts(unittest.TestCase):
    """Test expected-count parsing."""

    def test_table_name(self):
        """A bare table name selects that table."""
        self.assertEqual(expected_counts_from_json("basic"), BASIC_COUNTS)

    def test_cells_override_tables(self):
        """Explicit cells override table entries."""
        counts = expected_counts_from_json(
            {"tables": ["basic"], "cells": [{"task": "deletion", "language": "zh", "instruction_type": "index", "count": 1}]}
        )
        self.assertEqual(counts[("deletion", "zh", "index")], 1)
        self.assertEqual(counts[("deletion", "zh", "content")], 78)

    def test_errors(self):
        """Unknown tables and malformed cells are configuration errors."""
        with self.assertRaises(ConfigurationError):
            expected_counts_from_json("huge")
        with self.assertRaises(ConfigurationError):
            expected_counts_from_json([{"task": "deletion"}])
        with self.assertRaises(ConfigurationError):
            expected_counts_from_json(42)

    def test_load_from_file(self):
        """Counts load from a JSON file."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "expected.json"
            path.write_text(json.dumps("full"), encoding="utf-8")
            self.assertEqual(load_expected_counts(path), FULL_COUNTS)


class TestEditsetBuilder(unittest.TestCase):
    """Test the build-editset pipeline."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        rng = np.random.default_rng(0)
        entries = []
        for i, text in enumerate(
            ["the cat sat on a mat", "a bird sang in the tree", "rain falls softly at night", "we walked home"]
        ):
            item_id = f"en{i}"
            write_wav(Waveform(rng.uniform(-0.3, 0.3, 16000 + 3200 * i)), self.dir / f"{item_id}.wav")
            entries.append(ManifestEntry(id=item_id, audio_path=f"{item_id}.wav", transcript=text, language="en"))
        for i, text in enumerate(["比如当有人替受伤的小鸟包扎时", "当我们做体验时"]):
            item_id = f"zh{i}"
            write_wav(Waveform(rng.uniform(-0.3, 0.3, 24000)), self.dir / f"{item_id}.wav")
            entries.append(ManifestEntry(id=item_id, audio_path=f"{item_id}.wav", transcript=text, language="zh"))
        self.manifest = self.dir / "manifest.jsonl"
        save_manifest(entries, self.manifest)

        self.noise_dir = self.dir / "noise"
        self.noise_dir.mkdir()
        write_wav(Waveform(rng.normal(0, 0.05, 8000)), self.noise_dir / "hum.wav")

    def tearDown(self):
        self.tmp.cleanup()

    def _config(self, jobs=1, tasks=None):
        config = Mock()
        config.seed = 42
        config.jobs = jobs
        config.task_distribution = tasks or {
            "deletion": 1,
            "insertion": 1,
            "substitution": 1,
            "speed": 1,
            "pitch": 1,
            "volume": 1,
            "denoise": 1,
            "add_sound": 1,
        }
        config.edit_weight = 2.0
        config.max_span_tokens = 2
        config.instruction_style = "basic"
        config.snr_min_db = 0.0
        config.snr_max_db = 20.0
        return config

    def test_build_writes_manifest_and_audio(self):
        """Every item gets source/target WAVs and a manifest row."""
        out_dir = self.dir / "out"

        stats = EditsetBuilder(self._config(), Mock()).build(self.manifest, out_dir, self.noise_dir)

        self.assertEqual(stats, {"created": 6, "skipped": 0, "errors": 0})
        rows = [json.loads(line) for line in (out_dir / "editset.jsonl").read_text(encoding="utf-8").splitlines()]
        self.assertEqual([row["id"] for row in rows], ["en0", "en1", "en2", "en3", "zh0", "zh1"])
        for row in rows:
            self.assertTrue((out_dir / row["source_path"]).exists())
            self.assertTrue((out_dir / row["target_path"]).exists())
            example = EditExample.from_dict(row)
            self.assertEqual(example.validate(), [])
        self.assertFalse((out_dir / LOCK_FILE_NAME).exists())

    def test_output_independent_of_jobs(self):
        """One worker and four workers write identical bytes."""
        outputs = []
        for jobs in (1, 4):
            out_dir = self.dir / f"out{jobs}"
            EditsetBuilder(self._config(jobs=jobs), Mock()).build(self.manifest, out_dir, self.noise_dir)
            outputs.append(out_dir)

        self.assertEqual(
            (outputs[0] / "editset.jsonl").read_bytes(), (outputs[1] / "editset.jsonl").read_bytes()
        )
        for wav in sorted((outputs[0] / "audio").iterdir()):
            self.assertEqual(wav.read_bytes(), (outputs[1] / "audio" / wav.name).read_bytes())

    def test_ids_that_sanitize_alike_get_separate_audio(self):
        """'a/b' and 'a_b' map to the same safe text but never share WAV files."""
        entries = [
            ManifestEntry(id="a/b", audio_path="en0.wav", transcript="the cat sat on a mat", language="en"),
            ManifestEntry(id="a_b", audio_path="en1.wav", transcript="a bird sang in the tree", language="en"),
        ]
        manifest = self.dir / "clash.jsonl"
        save_manifest(entries, manifest)
        out_dir = self.dir / "clash"

        stats = EditsetBuilder(self._config(tasks={"volume": 1}), Mock()).build(manifest, out_dir)

        self.assertEqual(stats, {"created": 2, "skipped": 0, "errors": 0})
        rows = [json.loads(line) for line in (out_dir / "editset.jsonl").read_text(encoding="utf-8").splitlines()]
        self.assertEqual(len({row["source_path"] for row in rows}), 2)
        self.assertEqual(len({row["target_path"] for row in rows}), 2)
        self.assertEqual(len(list((out_dir / "audio").iterdir())), 4)

    def test_unbuildable_items_are_skipped(self):
        """A one-word transcript cannot host an insertion and is skipped."""
        entries = [ManifestEntry(id="short", audio_path="en0.wav", transcript="hello", language="en")]
        manifest = self.dir / "short.jsonl"
        save_manifest(entries, manifest)
        logger = Mock()

        stats = EditsetBuilder(self._config(tasks={"insertion": 1}), logger).build(manifest, self.dir / "o")

        self.assertEqual(stats, {"created": 0, "skipped": 1, "errors": 0})
        logger.warning.assert_called()

    def test_noise_tasks_need_noise_dir(self):
        """Denoising without a noise directory is a configuration error."""
        with self.assertRaises(ConfigurationError):
            EditsetBuilder(self._config(tasks={"denoise": 1}), Mock()).build(self.manifest, self.dir / "o")

    def test_reserved_task_rejected(self):
        """Reserved task kinds cannot be built."""
        with self.assertRaises(ConfigurationError):
            EditsetBuilder(self._config(tasks={"emotion": 1}), Mock()).build(self.manifest, self.dir / "o")

    def test_locked_output_directory(self):
        """A fresh lock held by another run stops the build."""
        out_dir = self.dir / "locked"
        out_dir.mkdir()
        (out_dir / LOCK_FILE_NAME).write_text("PID: 1\n")

        with self.assertRaises(LockError):
            EditsetBuilder(self._config(tasks={"speed": 1}), Mock()).build(self.manifest, out_dir)


if __name__ == "__main__":
    unittest.main()
