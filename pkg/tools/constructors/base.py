"""Base classes and shared helpers for edit-pair constructors."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from audio_io import ManifestEntry, PIPELINE_SAMPLE_RATE, Waveform, read_wav
from dsp import FRAME_SIZE
from errors import ConfigurationError, PreconditionError, UniEditError
from instruction_parser import CoTText, EditInstruction, apply_edit, tokenize_transcript

DENOISE = "denoise"
ADD_SOUND = "add_sound"
SPEED = "speed"
PITCH = "pitch"
VOLUME = "volume"
ACOUSTIC_TASKS = (DENOISE, ADD_SOUND, SPEED, PITCH, VOLUME)
# Schema-only task kinds: no constructor ships for them
RESERVED_TASKS = ("emotion", "dialect")
ACOUSTIC_TYPE = "acoustic"

ALIGNED_CUTS = "aligned"
UNIFORM_CUTS = "uniform"

DEFAULT_EDIT_WEIGHT = 2.0


def frame_span(start_sample: int, end_sample: int) -> tuple[int, int]:
    """Frames overlapping samples [start, end): (floor(start/320), ceil(end/320))."""
    if end_sample <= start_sample:
        return start_sample // FRAME_SIZE, start_sample // FRAME_SIZE
    return start_sample // FRAME_SIZE, -(-end_sample // FRAME_SIZE)


def build_loss_weights(target_frame_count: int, edit_span_frames: Sequence[int], weight: float) -> np.ndarray:
    """Per-frame loss weights: `weight` inside the edited span, 1.0 elsewhere.

    Raises:
        ConfigurationError: If weight < 1
    """
    if weight < 1.0:
        raise ConfigurationError(f"Edited-region loss weight must be >= 1, got {weight}")
    weights = np.ones(max(int(target_frame_count), 0))
    start, end = (int(v) for v in edit_span_frames)
    start, end = max(start, 0), min(end, weights.shape[0])
    if end > start:
        weights[start:end] = weight
    return weights


@dataclass
class EditPair:
    """Input and target audio of one constructed pair; span is in target frames."""

    source: Waveform
    target: Waveform
    edit_span_frames: tuple[int, int]
    params: dict = field(default_factory=dict)


@dataclass
class EditExample:
    """One training or evaluation item as stored in an edit-set manifest."""

    id: str
    task: str
    language: str
    instruction: str
    source_path: Optional[str] = None
    target_path: Optional[str] = None
    instruction_type: Optional[str] = None
    source_text: Optional[str] = None
    target_text: Optional[str] = None
    cot: Optional[CoTText] = None
    target_span_tokens: Optional[tuple[int, int]] = None
    edit_span_frames: Optional[tuple[int, int]] = None
    loss_weight: Optional[float] = None
    target_frames: Optional[int] = None
    params: dict = field(default_factory=dict)
    # In-memory audio, never serialized
    source_audio: Optional[Waveform] = field(default=None, repr=False, compare=False)
    target_audio: Optional[Waveform] = field(default=None, repr=False, compare=False)

    @property
    def is_semantic(self) -> bool:
        return self.task not in ACOUSTIC_TASKS and self.task not in RESERVED_TASKS

    @property
    def loss_weights(self) -> Optional[np.ndarray]:
        if self.target_frames is None:
            return None
        if not self.is_semantic or self.edit_span_frames is None:
            return np.ones(self.target_frames)
        return build_loss_weights(self.target_frames, self.edit_span_frames, self.loss_weight or 1.0)

    def validate(self) -> list[str]:
        problems = []
        if self.is_semantic and self.cot is None:
            problems.append(f"{self.id}: semantic task '{self.task}' has no CoT")
        if not self.is_semantic and self.cot is not None:
            problems.append(f"{self.id}: acoustic task '{self.task}' must not carry CoT")
        if self.cot is not None and self.target_text is not None and self.cot.reconstruct() != self.target_text:
            problems.append(f"{self.id}: CoT does not reconstruct the target text")
        if self.loss_weight is not None and self.loss_weight < 1.0:
            problems.append(f"{self.id}: loss weight {self.loss_weight} is below 1")
        return problems

    def to_dict(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "id": self.id,
            "task": self.task,
            "language": self.language,
            "instruction": self.instruction,
            "instruction_type": self.instruction_type,
            "source_path": self.source_path,
            "target_path": self.target_path,
            "source_text": self.source_text,
            "target_text": self.target_text,
            "cot": self.cot.text if self.cot else None,
            "mask_payload": self.cot.mask_payload if self.cot else None,
            "target_span_tokens": list(self.target_span_tokens) if self.target_span_tokens else None,
            "edit_span_frames": list(self.edit_span_frames) if self.edit_span_frames else None,
            "loss_weight": self.loss_weight,
            "target_frames": self.target_frames,
            "params": self.params,
        }
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "EditExample":
        cot = None
        if obj.get("cot") is not None:
            cot = CoTText(obj["cot"], obj.get("mask_payload") or "", obj["language"])
        span_tokens = obj.get("target_span_tokens")
        span_frames = obj.get("edit_span_frames")
        return cls(
            id=str(obj["id"]),
            task=obj["task"],
            language=obj["language"],
            instruction=obj.get("instruction", ""),
            source_path=obj.get("source_path"),
            target_path=obj.get("target_path"),
            instruction_type=obj.get("instruction_type"),
            source_text=obj.get("source_text"),
            target_text=obj.get("target_text"),
            cot=cot,
            target_span_tokens=tuple(span_tokens) if span_tokens is not None else None,
            edit_span_frames=tuple(span_frames) if span_frames is not None else None,
            loss_weight=obj.get("loss_weight"),
            target_frames=obj.get("target_frames"),
            params=obj.get("params") or {},
        )


def token_boundaries(entry: ManifestEntry, tokens: Sequence[str], num_samples: int) -> tuple[list[int], str]:
    """Sample index where each token starts, plus the end of the audio.

    With a per-token alignment (entry.spans) boundaries sit at token starts;
    otherwise tokens share the audio proportionally, snapped to frame edges.

    Returns:
        (boundaries of length len(tokens) + 1, cut mode)
    """
    count = len(tokens)
    if entry.spans is not None and len(entry.spans) == count and count > 0:
        starts = [int(round(float(span[0]) * PIPELINE_SAMPLE_RATE)) for span in entry.spans]
        boundaries = [0] + [min(max(s, 0), num_samples) for s in starts[1:]] + [num_samples]
        # Overlapping alignments must not produce negative-length tokens
        boundaries = list(np.maximum.accumulate(boundaries))
        return [int(b) for b in boundaries], ALIGNED_CUTS
    frames = num_samples // FRAME_SIZE
    boundaries = [int(round(i * frames / count)) * FRAME_SIZE for i in range(count)] if count else []
    return boundaries + [num_samples], UNIFORM_CUTS


def first_verified(
    candidates: Sequence[EditInstruction], source_text: str, target_text: str
) -> Optional[EditInstruction]:
    """First instruction whose application turns source_text into target_text."""
    for instruction in candidates:
        try:
            edited, _ = apply_edit(source_text, instruction)
        except UniEditError:
            continue
        if edited == target_text:
            return instruction
    return None


class DonorPool:
    """Other source items, lending their words and audio to constructed edits."""

    def __init__(self, entries: Sequence[ManifestEntry], manifest_dir: Optional[Path] = None):
        self.entries = sorted(entries, key=lambda e: e.id)
        self.manifest_dir = Path(manifest_dir) if manifest_dir else Path(".")

    def candidates(self, language: str, exclude_id: Optional[str] = None) -> list[ManifestEntry]:
        pool = [e for e in self.entries if e.language == language and e.id != exclude_id]
        if not pool:
            pool = [e for e in self.entries if e.language == language]
        return pool

    def draw(self, rng: np.random.Generator, language: str, exclude_id: Optional[str] = None) -> ManifestEntry:
        pool = self.candidates(language, exclude_id)
        if not pool:
            raise PreconditionError(f"No donor items in language '{language}'")
        return pool[int(rng.integers(len(pool)))]

    def draw_tokens(
        self, rng: np.random.Generator, language: str, max_tokens: int, exclude_id: Optional[str] = None
    ) -> list[str]:
        """Up to max_tokens consecutive tokens from a random donor transcript."""
        donor = self.draw(rng, language, exclude_id)
        tokens = tokenize_transcript(donor.transcript, language)
        if not tokens:
            raise PreconditionError(f"Donor '{donor.id}' has an empty transcript")
        count = int(rng.integers(1, min(max_tokens, len(tokens)) + 1))
        start = int(rng.integers(0, len(tokens) - count + 1))
        return tokens[start : start + count]

    def load_audio(self, entry: ManifestEntry) -> Waveform:
        return read_wav(entry.resolve_audio_path(self.manifest_dir))


@dataclass
class ConstructorContext:
    """Shared resources handed to every constructor of a run."""

    noise_pool: list[Waveform] = field(default_factory=list)
    donors: Optional[DonorPool] = None


class PairConstructor(ABC):
    """Abstract base class for edit-pair constructors.

    Every task kind implements this interface so the edit-set builder can
    treat semantic and acoustic tasks alike.
    """

    def __init__(self, config, context: Optional[ConstructorContext] = None, logger=None):
        self.config = config
        self.context = context or ConstructorContext()
        self.logger = logger or logging.getLogger(__name__)

    @property
    @abstractmethod
    def task(self) -> str:
        """Task kind produced by this constructor (e.g. 'insertion', 'speed')."""
        pass

    @property
    def is_semantic(self) -> bool:
        return self.task not in ACOUSTIC_TASKS

    @abstractmethod
    def construct(self, entry: ManifestEntry, audio: Waveform, rng: np.random.Generator) -> EditExample:
        """Build one edit example from a source item.

        Args:
            entry: Source manifest entry
            audio: Its decoded audio
            rng: Per-item random generator

        Returns:
            EditExample with source_audio/target_audio set and paths unset

        Raises:
            UniEditError: If the item cannot host this task (the caller skips it)
        """
        pass

    def finish(
        self,
        entry: ManifestEntry,
        pair: EditPair,
        instruction: str,
        **fields,
    ) -> EditExample:
        """Assemble the EditExample common to every task."""
        weight = self.config.edit_weight if self.is_semantic else 1.0
        example = EditExample(
            id=entry.id,
            task=self.task,
            language=entry.language,
            instruction=instruction,
            edit_span_frames=pair.edit_span_frames,
            loss_weight=weight,
            target_frames=pair.target.num_samples // FRAME_SIZE,
            params=dict(pair.params),
            source_audio=pair.source,
            target_audio=pair.target,
            **fields,
        )
        problems = example.validate()
        if problems:
            raise PreconditionError("; ".join(problems))
        return example
