"""Edit-set construction and benchmark generation/validation."""

import hashlib
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from audio_io import ManifestEntry, Waveform, load_manifest, read_jsonl, read_wav, write_jsonl, write_wav
from constructors import SUPPORTED_TASKS, ConstructorContext, DonorPool, EditExample, create_constructor
from constructors.acoustic import (
    ADD_SOUND_INSTRUCTION,
    DENOISE_INSTRUCTION,
    PITCH_STEPS,
    SPEED_RATES,
    VOLUME_FACTORS,
    construct_add_sound_pair,
    construct_denoise_pair,
    construct_pitch_pair,
    construct_speed_pair,
    construct_volume_pair,
    pitch_instruction,
    speed_instruction,
    volume_instruction,
)
from constructors.base import (
    ACOUSTIC_TYPE,
    ADD_SOUND,
    DENOISE,
    PITCH,
    SPEED,
    VOLUME,
    build_loss_weights,
)
from constructors.semantic import (
    choose_instruction,
    construct_deletion_pair,
    construct_insertion_pair,
    construct_substitution_pair,
    edit_candidates,
)
from errors import ConfigurationError, DuplicateIdError, EditResolutionError, PreconditionError, UniEditError
from instruction_parser import (
    BASIC_STYLE,
    CONTENT_BASED,
    DELETION,
    INDEX_BASED,
    INSERTION,
    SUBSTITUTION,
    apply_edit,
    join_tokens,
    make_cot,
    render_instruction,
    tokenize_transcript,
)
from locking import OutputLock

logger = logging.getLogger(__name__)

Cell = tuple[str, str, str]  # (task, language, instruction type)

# Semantic test sets, basic version (English instructions for both languages)
BASIC_COUNTS: dict[Cell, int] = {
    (DELETION, "zh", INDEX_BASED): 92,
    (DELETION, "zh", CONTENT_BASED): 78,
    (INSERTION, "zh", INDEX_BASED): 65,
    (INSERTION, "zh", CONTENT_BASED): 105,
    (SUBSTITUTION, "zh", INDEX_BASED): 29,
    (SUBSTITUTION, "zh", CONTENT_BASED): 130,
    (DELETION, "en", INDEX_BASED): 47,
    (DELETION, "en", CONTENT_BASED): 133,
    (INSERTION, "en", INDEX_BASED): 79,
    (INSERTION, "en", CONTENT_BASED): 81,
    (SUBSTITUTION, "en", INDEX_BASED): 29,
    (SUBSTITUTION, "en", CONTENT_BASED): 150,
}

# Semantic test sets, full version (native-language instructions)
FULL_COUNTS: dict[Cell, int] = {
    (DELETION, "zh", INDEX_BASED): 186,
    (DELETION, "zh", CONTENT_BASED): 95,
    (INSERTION, "zh", INDEX_BASED): 180,
    (INSERTION, "zh", CONTENT_BASED): 110,
    (SUBSTITUTION, "zh", INDEX_BASED): 36,
    (SUBSTITUTION, "zh", CONTENT_BASED): 289,
    (DELETION, "en", INDEX_BASED): 138,
    (DELETION, "en", CONTENT_BASED): 62,
    (INSERTION, "en", INDEX_BASED): 100,
    (INSERTION, "en", CONTENT_BASED): 99,
    (SUBSTITUTION, "en", INDEX_BASED): 67,
    (SUBSTITUTION, "en", CONTENT_BASED): 189,
}

# Acoustic test sets; emotion and dialect rows are reserved tasks and not generated
ACOUSTIC_COUNTS: dict[Cell, int] = {
    (task, language, ACOUSTIC_TYPE): 50 for task in (SPEED, PITCH, VOLUME) for language in ("zh", "en")
}

COUNT_TABLES = {"basic": BASIC_COUNTS, "full": FULL_COUNTS, "acoustic": ACOUSTIC_COUNTS}

ANY_LANGUAGE = "*"

# Re-exported pair operations
__all__ = [
    "ACOUSTIC_COUNTS",
    "BASIC_COUNTS",
    "FULL_COUNTS",
    "BenchmarkManifest",
    "BenchmarkReport",
    "CellMismatch",
    "EditExample",
    "EditsetBuilder",
    "TaskDistribution",
    "build_loss_weights",
    "construct_add_sound_pair",
    "construct_deletion_pair",
    "construct_denoise_pair",
    "construct_insertion_pair",
    "construct_pitch_pair",
    "construct_speed_pair",
    "construct_substitution_pair",
    "construct_volume_pair",
    "expected_counts_from_json",
    "generate_benchmark",
    "item_rng",
    "load_expected_counts",
    "validate_benchmark",
]


def item_rng(seed: int, item_id: str) -> np.random.Generator:
    """Generator derived from (seed, id) only, so thread scheduling never changes output."""
    digest = hashlib.sha256(item_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([int(seed), *words])


@dataclass
class TaskDistribution:
    """Task weights per language, plus optional instruction-type weights per (language, task).

    The language key "*" applies to every language without its own entry.
    """

    task_weights: dict[str, dict[str, float]]
    type_weights: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    @classmethod
    def from_weights(cls, weights: dict[str, float]) -> "TaskDistribution":
        return cls({ANY_LANGUAGE: {task: float(w) for task, w in weights.items()}})

    @classmethod
    def from_counts(cls, counts: dict[Cell, int]) -> "TaskDistribution":
        """Distribution reproducing the proportions of a count table."""
        task_weights: dict[str, dict[str, float]] = {}
        type_weights: dict[str, dict[str, dict[str, float]]] = {}
        for (task, language, instruction_type), count in sorted(counts.items()):
            by_task = task_weights.setdefault(language, {})
            by_task[task] = by_task.get(task, 0.0) + count
            by_type = type_weights.setdefault(language, {}).setdefault(task, {})
            by_type[instruction_type] = by_type.get(instruction_type, 0.0) + count
        return cls(task_weights, type_weights)

    def validate(self) -> list[str]:
        errors = []
        for language, weights in sorted(self.task_weights.items()):
            for task, weight in sorted(weights.items()):
                if task not in SUPPORTED_TASKS:
                    errors.append(f"Unknown task '{task}' in distribution (supported: {', '.join(SUPPORTED_TASKS)})")
                if weight < 0:
                    errors.append(f"Negative weight {weight} for task '{task}'")
            if sum(weights.values()) <= 0:
                errors.append(f"Task weights for language '{language}' sum to zero")
        return errors

    def weights_for(self, language: str) -> dict[str, float]:
        weights = self.task_weights.get(language, self.task_weights.get(ANY_LANGUAGE, {}))
        return {task: w for task, w in sorted(weights.items()) if w > 0}

    def tasks(self) -> list[str]:
        found = set()
        for weights in self.task_weights.values():
            found.update(task for task, w in weights.items() if w > 0)
        return sorted(found)

    def draw_task(self, rng: np.random.Generator, language: str) -> Optional[str]:
        weights = self.weights_for(language)
        if not weights:
            return None
        names = list(weights)
        p = np.array([weights[name] for name in names])
        return names[int(rng.choice(len(names), p=p / p.sum()))]

    def draw_type(self, rng: np.random.Generator, language: str, task: str) -> Optional[str]:
        """Instruction type for a task, or None when any verified phrasing will do."""
        by_task = self.type_weights.get(language, self.type_weights.get(ANY_LANGUAGE, {}))
        weights = {t: w for t, w in sorted(by_task.get(task, {}).items()) if w > 0}
        if not weights or task not in (DELETION, INSERTION, SUBSTITUTION):
            return None
        names = list(weights)
        p = np.array([weights[name] for name in names])
        return names[int(rng.choice(len(names), p=p / p.sum()))]


@dataclass
class BenchmarkManifest:
    entries: list[EditExample]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (id, reason)

    @property
    def counts(self) -> dict[Cell, int]:
        return dict(Counter((e.task, e.language, e.instruction_type) for e in self.entries))

    def save(self, path: Union[str, Path]) -> None:
        write_jsonl(path, (entry.to_dict() for entry in self.entries))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BenchmarkManifest":
        entries = []
        seen: set[str] = set()
        for line_number, obj in read_jsonl(path):
            entry = EditExample.from_dict(obj)
            if entry.id in seen:
                raise DuplicateIdError(entry.id, line_number)
            seen.add(entry.id)
            entries.append(entry)
        return cls(entries)


@dataclass
class CellMismatch:
    task: str
    language: str
    instruction_type: str
    expected: int
    actual: int

    def describe(self) -> str:
        return (
            f"{self.task}/{self.language}/{self.instruction_type}: "
            f"expected {self.expected}, found {self.actual}"
        )


@dataclass
class BenchmarkReport:
    total: int
    mismatches: list[CellMismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "total": self.total,
            "mismatches": [
                {
                    "task": m.task,
                    "language": m.language,
                    "instruction_type": m.instruction_type,
                    "expected": m.expected,
                    "actual": m.actual,
                }
                for m in self.mismatches
            ],
        }


def validate_benchmark(manifest: BenchmarkManifest, expected: dict[Cell, int]) -> BenchmarkReport:
    """Compare per (task, language, instruction type) tallies against expectation."""
    actual = manifest.counts
    report = BenchmarkReport(total=len(manifest.entries))
    for cell in sorted(set(actual) | set(expected), key=lambda c: tuple(str(v) for v in c)):
        want, have = expected.get(cell, 0), actual.get(cell, 0)
        if want != have:
            report.mismatches.append(CellMismatch(*cell, expected=want, actual=have))
    return report


def expected_counts_from_json(obj: Any) -> dict[Cell, int]:
    """Build an expected-count table from JSON.

    Accepted forms: a table name ("basic", "full", "acoustic"); a list of
    {task, language, instruction_type, count} cells; or an object with
    optional "tables" (names, merged in order) and "cells" (overriding).

    Raises:
        ConfigurationError: On unknown table names or malformed cells
    """
    if isinstance(obj, str):
        obj = {"tables": [obj]}
    if isinstance(obj, list):
        obj = {"cells": obj}
    if not isinstance(obj, dict):
        raise ConfigurationError("Expected counts must be a table name, a list of cells or an object")

    counts: dict[Cell, int] = {}
    for name in obj.get("tables", []):
        if name not in COUNT_TABLES:
            raise ConfigurationError(f"Unknown count table '{name}' (must be one of {', '.join(COUNT_TABLES)})")
        counts.update(COUNT_TABLES[name])
    for index, cell in enumerate(obj.get("cells", []), 1):
        try:
            key = (str(cell["task"]), str(cell["language"]), str(cell["instruction_type"]))
            count = int(cell["count"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Malformed expected-count cell #{index}: {cell!r}") from e
        if count < 0:
            raise ConfigurationError(f"Expected-count cell #{index} has a negative count")
        counts[key] = count
    return counts


def load_expected_counts(path: Union[str, Path]) -> dict[Cell, int]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"Cannot read expected counts {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e.msg})") from e
    return expected_counts_from_json(obj)


def _plan_semantic(
    entry: ManifestEntry,
    task: str,
    instruction_type: Optional[str],
    donors: DonorPool,
    rng: np.random.Generator,
    style: str,
    max_span_tokens: int,
) -> EditExample:
    """Text-only semantic edit of one source item, verified by apply_edit."""
    language = entry.language
    tokens = tokenize_transcript(entry.transcript, language)
    n = len(tokens)
    if n == 0:
        raise PreconditionError(f"'{entry.id}' has an empty transcript")
    source_text = join_tokens(tokens, language)

    if task == DELETION:
        if n < 2:
            raise PreconditionError(f"Deleting from one-token transcript '{entry.id}' leaves nothing")
        count = int(rng.integers(1, min(max_span_tokens, n - 1) + 1))
        start = int(rng.integers(0, n - count + 1))
        target_tokens = tokens[:start] + tokens[start + count :]
        candidates = edit_candidates(DELETION, tokens, start, start + count, [], language)
    elif task == INSERTION:
        payload = donors.draw_tokens(rng, language, max_span_tokens, exclude_id=entry.id)
        start = int(rng.integers(0, n + 1))
        target_tokens = tokens[:start] + payload + tokens[start:]
        candidates = edit_candidates(INSERTION, tokens, start, start, payload, language)
    elif task == SUBSTITUTION:
        count = int(rng.integers(1, min(max_span_tokens, n) + 1))
        start = int(rng.integers(0, n - count + 1))
        payload = donors.draw_tokens(rng, language, max_span_tokens, exclude_id=entry.id)
        if payload == tokens[start : start + count]:
            raise PreconditionError(f"Drawn payload repeats the replaced words of '{entry.id}'")
        target_tokens = tokens[:start] + payload + tokens[start + count :]
        candidates = edit_candidates(SUBSTITUTION, tokens, start, start + count, payload, language)
    else:
        raise ConfigurationError(f"'{task}' is not a semantic task")

    target_text = join_tokens(target_tokens, language)
    instruction = choose_instruction(candidates, rng, source_text, target_text, instruction_type)
    if instruction is None:
        raise EditResolutionError(f"No {instruction_type or 'verified'} phrasing for {task} of '{entry.id}'")
    edited, span = apply_edit(source_text, instruction)
    return EditExample(
        id=entry.id,
        task=task,
        language=language,
        instruction=render_instruction(instruction, style),
        source_path=entry.audio_path,
        instruction_type=instruction.instruction_type,
        source_text=source_text,
        target_text=edited,
        cot=make_cot(edited, span.target, language),
        target_span_tokens=span.target,
    )


def _plan_acoustic(entry: ManifestEntry, task: str, rng: np.random.Generator) -> EditExample:
    """Instruction and parameter for an acoustic item; no audio is touched."""
    if task == SPEED:
        rate = float(SPEED_RATES[int(rng.integers(len(SPEED_RATES)))])
        instruction, params = speed_instruction(rate), {"rate": rate}
    elif task == PITCH:
        steps = int(PITCH_STEPS[int(rng.integers(len(PITCH_STEPS)))])
        instruction, params = pitch_instruction(steps), {"steps": steps}
    elif task == VOLUME:
        factor = float(VOLUME_FACTORS[int(rng.integers(len(VOLUME_FACTORS)))])
        instruction, params = volume_instruction(factor), {"factor": factor}
    elif task == DENOISE:
        instruction, params = DENOISE_INSTRUCTION, {}
    elif task == ADD_SOUND:
        instruction, params = ADD_SOUND_INSTRUCTION, {}
    else:
        raise ConfigurationError(f"'{task}' is not an acoustic task")
    return EditExample(
        id=entry.id,
        task=task,
        language=entry.language,
        instruction=instruction,
        source_path=entry.audio_path,
        instruction_type=ACOUSTIC_TYPE,
        source_text=entry.transcript,
        target_text=entry.transcript,
        params=params,
    )


def _plan_item(entry, task, instruction_type, donors, rng, style, max_span_tokens) -> EditExample:
    if task in (DELETION, INSERTION, SUBSTITUTION):
        return _plan_semantic(entry, task, instruction_type, donors, rng, style, max_span_tokens)
    return _plan_acoustic(entry, task, rng)


def generate_benchmark(
    entries: list[ManifestEntry],
    distribution: TaskDistribution,
    rng: np.random.Generator,
    style: str = BASIC_STYLE,
    counts: Optional[dict[Cell, int]] = None,
    max_span_tokens: int = 3,
    logger: Optional[logging.Logger] = None,
) -> BenchmarkManifest:
    """Assign each source item a task and synthesize its instruction and edited text.

    Items are visited in id order, so the result depends only on the
    entries, the distribution and the generator state. With `counts`,
    every (task, language, instruction type) cell is filled with exactly
    that many items where the manifest allows; leftover items are unused.
    Items whose edit cannot be resolved are skipped with a logged reason.
    """
    log = logger or logging.getLogger(__name__)
    ordered = sorted(entries, key=lambda e: e.id)
    donors = DonorPool(ordered)
    examples: list[EditExample] = []
    skipped: list[tuple[str, str]] = []

    if counts is None:
        for entry in ordered:
            task = distribution.draw_task(rng, entry.language)
            if task is None:
                skipped.append((entry.id, f"no task weights for language '{entry.language}'"))
                continue
            instruction_type = distribution.draw_type(rng, entry.language, task)
            try:
                examples.append(_plan_item(entry, task, instruction_type, donors, rng, style, max_span_tokens))
            except UniEditError as e:
                skipped.append((entry.id, str(e)))
    else:
        by_language: dict[str, list[ManifestEntry]] = {}
        for entry in ordered:
            by_language.setdefault(entry.language, []).append(entry)
        for language in sorted({cell[1] for cell in counts}):
            slots = [cell for cell in sorted(counts) if cell[1] == language for _ in range(counts[cell])]
            slots = [slots[i] for i in rng.permutation(len(slots))]
            items = by_language.get(language, [])
            pool = [items[i] for i in rng.permutation(len(items))]
            for task, _, instruction_type in slots:
                forced_type = None if instruction_type == ACOUSTIC_TYPE else instruction_type
                for index, entry in enumerate(pool):
                    try:
                        example = _plan_item(entry, task, forced_type, donors, rng, style, max_span_tokens)
                    except UniEditError as e:
                        log.debug(f"{entry.id} cannot host {task}/{instruction_type}: {e}")
                        continue
                    examples.append(example)
                    pool.pop(index)
                    break
                else:
                    skipped.append(("", f"no remaining {language} item hosts {task}/{instruction_type}"))

    for item_id, reason in skipped:
        log.info(f"Skipped {item_id or 'cell'}: {reason}")
    examples.sort(key=lambda e: e.id)
    log.info(f"Generated {len(examples)} benchmark items ({len(skipped)} skipped)")
    return BenchmarkManifest(examples, skipped)


def _audio_stem(item_id: str) -> str:
    """Filesystem-safe stem, suffixed with an id digest so distinct ids never share files."""
    safe = re.sub(r"[^\w.-]", "_", item_id)
    digest = hashlib.sha256(item_id.encode("utf-8")).hexdigest()[:10]
    return f"{safe}-{digest}"


def load_noise_pool(noise_dir: Optional[Path]) -> list[Waveform]:
    """All WAV files under noise_dir, in sorted path order."""
    if noise_dir is None:
        return []
    noise_dir = Path(noise_dir)
    if not noise_dir.is_dir():
        raise ConfigurationError(f"Noise directory not found: {noise_dir}")
    return [read_wav(path) for path in sorted(noise_dir.rglob("*.wav"))]


class EditsetBuilder:
    """Runs the build-editset pipeline: one constructed pair per source item."""

    MANIFEST_NAME = "editset.jsonl"
    AUDIO_DIR = "audio"

    def __init__(self, config, logger: Optional[logging.Logger] = None):
        """Initialize the builder.

        Args:
            config: RunConfig (seed, jobs, task_distribution, edit_weight,
                max_span_tokens, instruction_style, snr_min_db, snr_max_db)
            logger: Optional logger
        """
        self.config = config
        self.logger = logger or logging.getLogger(__name__)
        self.distribution = TaskDistribution.from_weights(config.task_distribution)

    def _create_constructors(self, context: ConstructorContext) -> dict:
        constructors = {}
        for task in self.distribution.tasks():
            try:
                constructors[task] = create_constructor(task, self.config, self.logger, context)
            except ValueError as e:
                raise ConfigurationError(str(e)) from e
        needs_noise = [t for t in constructors if t in (DENOISE, ADD_SOUND)]
        if needs_noise and not context.noise_pool:
            raise ConfigurationError(f"Tasks {', '.join(needs_noise)} need a noise directory with WAV files")
        return constructors

    def _build_item(self, entry: ManifestEntry, manifest_dir: Path, out_dir: Path, constructors: dict):
        """Returns (status, example or None, reason)."""
        try:
            rng = item_rng(self.config.seed, entry.id)
            task = self.distribution.draw_task(rng, entry.language)
            if task is None:
                return "skipped", None, f"no task weights for language '{entry.language}'"
            audio = read_wav(entry.resolve_audio_path(manifest_dir))
            example = constructors[task].construct(entry, audio, rng)

            stem = _audio_stem(entry.id)
            source_rel = f"{self.AUDIO_DIR}/{stem}_source.wav"
            target_rel = f"{self.AUDIO_DIR}/{stem}_target.wav"
            write_wav(example.source_audio, out_dir / source_rel)
            write_wav(example.target_audio, out_dir / target_rel)
            example.source_path = source_rel
            example.target_path = target_rel
            return "created", example, ""
        except UniEditError as e:
            return "skipped", None, str(e)
        except Exception as e:
            return "errors", None, f"{type(e).__name__}: {e}"

    def build(self, manifest_path: Path, out_dir: Path, noise_dir: Optional[Path] = None) -> dict:
        """Build the edit set.

        Returns:
            Dictionary with build statistics
        """
        stats = {
            "created": 0,
            "skipped": 0,
            "errors": 0,
        }
        problems = self.distribution.validate()
        if problems:
            raise ConfigurationError("; ".join(problems))

        manifest_path = Path(manifest_path)
        out_dir = Path(out_dir)
        self.logger.info(f"Loading manifest {manifest_path}...")
        entries = sorted(load_manifest(manifest_path), key=lambda e: e.id)
        self.logger.info(f"Found {len(entries)} source items")

        noise_pool = load_noise_pool(noise_dir)
        if noise_dir is not None:
            self.logger.info(f"Loaded {len(noise_pool)} noise files from {noise_dir}")
        context = ConstructorContext(noise_pool, DonorPool(entries, manifest_path.parent))
        constructors = self._create_constructors(context)

        out_dir.mkdir(parents=True, exist_ok=True)
        with OutputLock(out_dir, self.logger):
            (out_dir / self.AUDIO_DIR).mkdir(exist_ok=True)
            with ThreadPoolExecutor(max_workers=max(1, self.config.jobs)) as pool:
                results = list(
                    pool.map(
                        lambda entry: self._build_item(entry, manifest_path.parent, out_dir, constructors),
                        entries,
                    )
                )

            examples = []
            for entry, (status, example, reason) in zip(entries, results):
                stats[status] += 1
                if status == "created":
                    examples.append(example)
                elif status == "skipped":
                    self.logger.warning(f"Skipped '{entry.id}': {reason}")
                else:
                    self.logger.error(f"Error processing '{entry.id}': {reason}")

            write_jsonl(out_dir / self.MANIFEST_NAME, (e.to_dict() for e in examples))
            self.logger.info(f"Wrote {len(examples)} examples to {out_dir / self.MANIFEST_NAME}")

        return stats
