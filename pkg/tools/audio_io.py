"""WAV and JSON-lines manifest persistence for every pipeline stage."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Union

import numpy as np
import soundfile as sf

from errors import (
    AudioFormatError,
    AudioIOError,
    DuplicateIdError,
    ManifestError,
    UnsupportedFormatError,
)

PIPELINE_SAMPLE_RATE = 16000
LANGUAGES = ("zh", "en")

# Full-scale divisor shared by read and write so PCM16 round trips are lossless
PCM16_SCALE = 32768.0

PathLike = Union[str, Path]

logger = logging.getLogger(__name__)


@dataclass
class Waveform:
    """Mono audio samples with their sample rate."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.sample_rate = int(self.sample_rate)

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    @property
    def peak(self) -> float:
        """Maximum absolute amplitude (0 for empty audio)."""
        if self.num_samples == 0:
            return 0.0
        return float(np.max(np.abs(self.samples)))

    def validate(self) -> list[str]:
        """Check the waveform invariants.

        Returns:
            List of problems (empty if valid)
        """
        problems = []
        if self.sample_rate <= 0:
            problems.append(f"Sample rate must be positive, got {self.sample_rate}")
        elif self.sample_rate != PIPELINE_SAMPLE_RATE:
            problems.append(
                f"Sample rate {self.sample_rate} Hz is not the pipeline rate {PIPELINE_SAMPLE_RATE} Hz"
            )
        if not np.all(np.isfinite(self.samples)):
            problems.append("Samples contain NaN or Inf")
        elif self.peak > 1.0:
            problems.append(f"Peak amplitude {self.peak:.4f} exceeds 1.0")
        return problems


def read_wav(path: PathLike, expected_rate: Optional[int] = PIPELINE_SAMPLE_RATE) -> Waveform:
    """Read a mono PCM16 WAV file.

    Args:
        path: WAV file path
        expected_rate: Required sample rate; None accepts any rate

    Returns:
        Waveform with samples scaled to [-1, 1)

    Raises:
        AudioIOError: If the file does not exist or cannot be opened
        AudioFormatError: If the file is not a readable WAV container
        UnsupportedFormatError: If the file is not mono PCM16 at the expected rate
    """
    path = Path(path)
    if not path.is_file():
        raise AudioIOError(f"Cannot open {path}: no such file")
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: unreadable audio header ({e})") from e

    if info.format != "WAV":
        raise UnsupportedFormatError(f"{path}: expected a WAV container, found {info.format}")
    if info.channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono audio, found {info.channels} channels")
    if info.subtype != "PCM_16":
        raise UnsupportedFormatError(f"{path}: expected PCM16, found {info.subtype}")
    if expected_rate is not None and info.samplerate != expected_rate:
        raise UnsupportedFormatError(
            f"{path}: expected {expected_rate} Hz, found {info.samplerate} Hz (resampling is not supported)"
        )

    try:
        pcm, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: truncated or corrupt WAV data ({e})") from e
    return Waveform(pcm.astype(np.float64) / PCM16_SCALE, sample_rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and round to int16."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)


def write_wav(wave_data: Waveform, path: PathLike) -> None:
    """Write a waveform as a mono PCM16 WAV file.

    Raises:
        AudioFormatError: If samples are not finite
        AudioIOError: If the file cannot be written
    """
    path = Path(path)
    if not np.all(np.isfinite(wave_data.samples)):
        raise AudioFormatError(f"Refusing to write non-finite samples to {path}")

    # int16 input is written as-is, so the 32768 scaling above is the only quantization
    pcm = quantize_pcm16(wave_data.samples)
    try:
        sf.write(str(path), pcm, wave_data.sample_rate, subtype="PCM_16", format="WAV")
    except (RuntimeError, OSError) as e:
        raise AudioIOError(f"Cannot write {path}: {e}") from e


def read_jsonl(path: PathLike) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, object) pairs from a JSON-lines file, skipping blank lines."""
    path = Path(path)
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"Cannot open {path}: {e}") from e

    with handle:
        for line_number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}: invalid JSON ({e.msg})", line_number) from e
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}: expected a JSON object", line_number)
            yield line_number, obj


def write_jsonl(path: PathLike, rows: Iterable[dict]) -> None:
    """Write one JSON object per line (UTF-8, non-ASCII kept verbatim)."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False))
                handle.write("\n")
    except OSError as e:
        raise AudioIOError(f"Cannot write {path}: {e}") from e


@dataclass
class ManifestEntry:
    """One source item: audio path, transcript and optional task fields."""

    id: str
    audio_path: str
    transcript: str
    language: str
    instruction: Optional[str] = None
    edited_text: Optional[str] = None
    spans: Optional[list] = None  # per-token [start_s, end_s] alignment
    extra: dict = field(default_factory=dict)  # unknown fields, preserved on save

    KNOWN_FIELDS = ("id", "audio_path", "transcript", "language", "instruction", "edited_text", "spans")

    @classmethod
    def from_dict(cls, obj: dict, line_number: Optional[int] = None) -> "ManifestEntry":
        for required in ("id", "audio_path", "transcript", "language"):
            if required not in obj:
                raise ManifestError(f"missing required field '{required}'", line_number)
        language = obj["language"]
        if language not in LANGUAGES:
            raise ManifestError(
                f"unsupported language '{language}' (must be one of {', '.join(LANGUAGES)})",
                line_number,
            )
        return cls(
            id=str(obj["id"]),
            audio_path=str(obj["audio_path"]),
            transcript=str(obj["transcript"]),
            language=language,
            instruction=obj.get("instruction"),
            edited_text=obj.get("edited_text"),
            spans=obj.get("spans"),
            extra={k: v for k, v in obj.items() if k not in cls.KNOWN_FIELDS},
        )

    def to_dict(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "id": self.id,
            "audio_path": self.audio_path,
            "transcript": self.transcript,
            "language": self.language,
        }
        for name in ("instruction", "edited_text", "spans"):
            value = getattr(self, name)
            if value is not None:
                obj[name] = value
        obj.update(self.extra)
        return obj

    def resolve_audio_path(self, manifest_dir: Path) -> Path:
        """Resolve audio_path relative to the manifest's directory."""
        audio = Path(self.audio_path)
        return audio if audio.is_absolute() else manifest_dir / audio


def load_manifest(path: PathLike) -> list[ManifestEntry]:
    """Load a source manifest in file order.

    Raises:
        ManifestError: On malformed lines (with line number)
        DuplicateIdError: When an id repeats
    """
    entries = []
    seen: set[str] = set()
    for line_number, obj in read_jsonl(path):
        entry = ManifestEntry.from_dict(obj, line_number)
        if entry.id in seen:
            raise DuplicateIdError(entry.id, line_number)
        seen.add(entry.id)
        entries.append(entry)
    logger.debug(f"Loaded {len(entries)} manifest entries from {path}")
    return entries


def save_manifest(entries: Iterable[ManifestEntry], path: PathLike) -> None:
    """Save manifest entries, one JSON object per line."""
    entries = list(entries)
    seen: set[str] = set()
    for entry in entries:
        if entry.id in seen:
            raise DuplicateIdError(entry.id)
        seen.add(entry.id)
    write_jsonl(path, (entry.to_dict() for entry in entries))
