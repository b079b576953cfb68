"""Evaluation of editing outputs: WER, ACC, no-edit WER, SIM, RDE and RAE.

Hypothesis transcripts and speaker embeddings are inputs; no ASR or
embedding model runs here.
"""

import json
import logging
import unicodedata
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from audio_io import read_jsonl, read_wav
from constructors.base import SPEED, VOLUME, EditExample
from errors import AudioIOError, ManifestError, MetricError, PreconditionError, ShapeError, UndefinedMetricError
from instruction_parser import tokenize_transcript

logger = logging.getLogger(__name__)

MATCH = "match"
SUB = "sub"
DEL = "del"
INS = "ins"

OUTPUT_ROLE = "output"
REFERENCE_ROLE = "reference"

DEFINITIONS = {
    "wer": "Levenshtein distance over normalised tokens / reference length (zh characters, en words)",
    "acc": (
        "Hypothesis tokens aligned to the edited span (insertions attributed to the preceding "
        "reference token) equal the masked payload exactly; for deletions, nothing is inserted at the gap"
    ),
    "no_edit_wer": (
        "Errors of the full alignment whose reference token lies outside the edited span, "
        "over the number of reference tokens outside it"
    ),
    "sim": "Cosine similarity of output and reference speaker embeddings",
    "rde": "|output duration - source duration / rate| / (source duration / rate)",
    "rae": "|output peak - factor x source peak| / (factor x source peak)",
}


@dataclass(frozen=True)
class AlignmentOp:
    op: str
    ref_index: Optional[int]
    hyp_index: Optional[int]
    ref_token: Optional[str] = None
    hyp_token: Optional[str] = None


@dataclass
class Alignment:
    ops: list[AlignmentOp]

    @property
    def cost(self) -> int:
        return sum(1 for op in self.ops if op.op != MATCH)

    def counts(self) -> dict[str, int]:
        tally = {MATCH: 0, SUB: 0, DEL: 0, INS: 0}
        for op in self.ops:
            tally[op.op] += 1
        return tally

    def reference_tokens(self) -> list[str]:
        return [op.ref_token for op in self.ops if op.ref_index is not None]

    def hypothesis_tokens(self) -> list[str]:
        return [op.hyp_token for op in self.ops if op.hyp_index is not None]


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance with a single rolling row."""
    row = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        prev, row[0] = row[0], i
        for j in range(1, len(b) + 1):
            cur = row[j]
            if a[i - 1] == b[j - 1]:
                row[j] = prev
            else:
                row[j] = 1 + min(prev, row[j], row[j - 1])
            prev = cur
    return row[len(b)]


def align(reference: Sequence[str], hypothesis: Sequence[str]) -> Alignment:
    """One minimum-cost alignment; ties prefer match, then sub, then del, then ins."""
    n, m = len(reference), len(hypothesis)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = dist[i - 1, j - 1] + (0 if reference[i - 1] == hypothesis[j - 1] else 1)
            dist[i, j] = min(diagonal, dist[i - 1, j] + 1, dist[i, j - 1] + 1)

    ops: list[AlignmentOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i, j]
        if i > 0 and j > 0 and reference[i - 1] == hypothesis[j - 1] and dist[i - 1, j - 1] == here:
            ops.append(AlignmentOp(MATCH, i - 1, j - 1, reference[i - 1], hypothesis[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i - 1, j - 1] + 1 == here:
            ops.append(AlignmentOp(SUB, i - 1, j - 1, reference[i - 1], hypothesis[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1, j] + 1 == here:
            ops.append(AlignmentOp(DEL, i - 1, None, reference[i - 1], None))
            i -= 1
        else:
            ops.append(AlignmentOp(INS, None, j - 1, None, hypothesis[j - 1]))
            j -= 1
    ops.reverse()
    return Alignment(ops)


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    if len(reference) == 0:
        raise UndefinedMetricError("WER is undefined for an empty reference")
    return levenshtein(list(reference), list(hypothesis)) / len(reference)


def _check_span(span: Sequence[int], length: int) -> tuple[int, int]:
    start, end = (int(v) for v in span)
    if not 0 <= start <= end <= length:
        raise PreconditionError(f"Span [{start}, {end}) outside a {length}-token reference")
    return start, end


def _attributed(alignment: Alignment) -> list[tuple[AlignmentOp, int]]:
    """Each op with the reference index it counts against (insertions: the preceding one)."""
    result = []
    last = -1
    for op in alignment.ops:
        if op.ref_index is not None:
            last = op.ref_index
            result.append((op, op.ref_index))
        else:
            result.append((op, last))
    return result


def _in_region(op: AlignmentOp, index: int, start: int, end: int) -> bool:
    if start <= index < end:
        return True
    # An empty span is a gap; insertions right before it land in the gap
    return start == end and op.op == INS and index == start - 1


def no_edit_wer(reference_edited: Sequence[str], hypothesis: Sequence[str], target_span: Sequence[int]) -> float:
    """WER restricted to reference tokens outside the edited span."""
    start, end = _check_span(target_span, len(reference_edited))
    outside = len(reference_edited) - (end - start)
    if outside == 0:
        raise UndefinedMetricError("Edited span covers the whole reference; no-edit WER is undefined")
    alignment = align(reference_edited, hypothesis)
    errors = sum(
        1
        for op, index in _attributed(alignment)
        if op.op != MATCH and not _in_region(op, index, start, end)
    )
    return errors / outside


def edit_acc(
    mask_payload: Sequence[str],
    hypothesis: Sequence[str],
    alignment: Alignment,
    target_span: Sequence[int],
) -> bool:
    """True iff the hypothesis tokens aligned to the edited span equal the payload."""
    if alignment.hypothesis_tokens() != list(hypothesis):
        raise MetricError("Alignment does not belong to this hypothesis")
    start, end = _check_span(target_span, len(alignment.reference_tokens()))
    region = [
        op.hyp_token
        for op, index in _attributed(alignment)
        if op.hyp_index is not None and _in_region(op, index, start, end)
    ]
    return region == list(mask_payload)


def cosine_sim(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"Embedding dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        raise UndefinedMetricError("Cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


def _relative_error(output: float, target: float, what: str) -> float:
    if target <= 0:
        raise UndefinedMetricError(f"Target {what} must be positive, got {target}")
    return abs(float(output) - float(target)) / float(target)


def rde(output_duration_s: float, target_duration_s: float) -> float:
    return _relative_error(output_duration_s, target_duration_s, "duration")


def rae(output_amplitude: float, target_amplitude: float) -> float:
    return _relative_error(output_amplitude, target_amplitude, "amplitude")


def _normalize_token(token: str, language: str) -> str:
    kept = "".join(
        ch for ch in token if not unicodedata.category(ch).startswith("P") or (language == "en" and ch == "'")
    )
    if language == "en":
        kept = kept.strip("'").lower()
    return kept


def normalize_transcript(text: str, language: str) -> list[str]:
    """Scoring tokens: zh characters or en lowercase words, punctuation removed."""
    return [t for t in (_normalize_token(tok, language) for tok in tokenize_transcript(text, language)) if t]


def normalize_with_span(text: str, language: str, span: Sequence[int]) -> tuple[list[str], tuple[int, int]]:
    """Normalised tokens plus `span` (indices into tokenize_transcript(text)) remapped onto them."""
    raw = tokenize_transcript(text, language)
    tokens = []
    kept_before = []
    for token in raw:
        kept_before.append(len(tokens))
        normalized = _normalize_token(token, language)
        if normalized:
            tokens.append(normalized)
    kept_before.append(len(tokens))
    start, end = _check_span(span, len(raw))
    return tokens, (kept_before[start], kept_before[end])


@dataclass
class Hypothesis:
    id: str
    text: str
    duration_s: Optional[float] = None
    amplitude: Optional[float] = None


def load_hypotheses(path: Union[str, Path]) -> dict[str, Hypothesis]:
    """Hypotheses JSON lines: {id, text, audio_path?, duration_s?, amplitude?}.

    When audio_path is given (relative to the file) and duration or
    amplitude is missing, they are measured from the audio.
    """
    path = Path(path)
    hypotheses: dict[str, Hypothesis] = {}
    for line_number, obj in read_jsonl(path):
        if "id" not in obj or "text" not in obj:
            raise ManifestError("hypothesis needs 'id' and 'text'", line_number)
        hyp = Hypothesis(str(obj["id"]), str(obj["text"]), obj.get("duration_s"), obj.get("amplitude"))
        audio_path = obj.get("audio_path")
        if audio_path and (hyp.duration_s is None or hyp.amplitude is None):
            audio = Path(audio_path)
            wave = read_wav(audio if audio.is_absolute() else path.parent / audio)
            hyp.duration_s = wave.duration_s if hyp.duration_s is None else hyp.duration_s
            hyp.amplitude = wave.peak if hyp.amplitude is None else hyp.amplitude
        hypotheses[hyp.id] = hyp
    return hypotheses


def load_embeddings(path: Union[str, Path]) -> dict[str, dict[str, np.ndarray]]:
    """Embeddings JSON lines: {id, vector, role}; role is 'output' (default) or 'reference'."""
    embeddings: dict[str, dict[str, np.ndarray]] = {}
    for line_number, obj in read_jsonl(path):
        if "id" not in obj or "vector" not in obj:
            raise ManifestError("embedding needs 'id' and 'vector'", line_number)
        role = obj.get("role", OUTPUT_ROLE)
        if role not in (OUTPUT_ROLE, REFERENCE_ROLE):
            raise ManifestError(f"unknown embedding role '{role}'", line_number)
        embeddings.setdefault(str(obj["id"]), {})[role] = np.asarray(obj["vector"], dtype=np.float64)
    return embeddings


@dataclass
class ExampleScore:
    id: str
    task: str
    language: str
    wer: Optional[float] = None
    acc: Optional[bool] = None
    no_edit_wer: Optional[float] = None
    sim: Optional[float] = None
    rde: Optional[float] = None
    rae: Optional[float] = None


METRIC_NAMES = ("wer", "acc", "no_edit_wer", "sim", "rde", "rae")


@dataclass
class MetricReport:
    rows: list[ExampleScore]
    missing: list[str] = field(default_factory=list)

    def aggregates(self) -> dict[str, dict[str, Any]]:
        """Per-task means (ACC: fraction true) and sample counts."""
        tasks: dict[str, dict[str, Any]] = {}
        for task in sorted({row.task for row in self.rows}):
            rows = [row for row in self.rows if row.task == task]
            summary: dict[str, Any] = {"count": len(rows)}
            for name in METRIC_NAMES:
                values = [float(getattr(row, name)) for row in rows if getattr(row, name) is not None]
                summary[name] = float(np.mean(values)) if values else None
                summary[f"{name}_count"] = len(values)
            tasks[task] = summary
        return tasks

    def to_dict(self) -> dict[str, Any]:
        return {
            "definitions": DEFINITIONS,
            "tasks": self.aggregates(),
            "examples": [asdict(row) for row in self.rows],
            "missing_hypotheses": self.missing,
        }


def _score_text(example: EditExample, text: str, score: ExampleScore) -> None:
    language = example.language
    if example.target_span_tokens is not None and example.cot is not None:
        reference, span = normalize_with_span(example.target_text, language, example.target_span_tokens)
    else:
        reference, span = normalize_transcript(example.target_text or "", language), None
    hypothesis = normalize_transcript(text, language)
    if reference:
        score.wer = wer(reference, hypothesis)
    if span is None:
        return
    payload = normalize_transcript(example.cot.mask_payload, language)
    score.acc = edit_acc(payload, hypothesis, align(reference, hypothesis), span)
    try:
        score.no_edit_wer = no_edit_wer(reference, hypothesis, span)
    except UndefinedMetricError as e:
        logger.debug(f"{example.id}: {e}")


def _source_measure(example: EditExample, key: str, audio_root: Optional[Path]) -> Optional[float]:
    """Source duration or peak from params, else measured from the source audio."""
    if key in example.params:
        return float(example.params[key])
    if audio_root is None or not example.source_path:
        return None
    source = Path(example.source_path)
    try:
        wave = read_wav(source if source.is_absolute() else audio_root / source)
    except (AudioIOError, OSError) as e:
        logger.warning(f"{example.id}: cannot measure source audio: {e}")
        return None
    return wave.duration_s if key == "source_duration_s" else wave.peak


def evaluate(
    examples: Sequence[EditExample],
    hypotheses: dict[str, Hypothesis],
    embeddings: Optional[dict[str, dict[str, np.ndarray]]] = None,
    audio_root: Optional[Path] = None,
) -> MetricReport:
    """Score every example that has a hypothesis; rows are sorted by id."""
    embeddings = embeddings or {}
    report = MetricReport(rows=[])
    for example in sorted(examples, key=lambda e: e.id):
        hyp = hypotheses.get(example.id)
        if hyp is None:
            report.missing.append(example.id)
            continue
        score = ExampleScore(example.id, example.task, example.language)
        _score_text(example, hyp.text, score)

        vectors = embeddings.get(example.id, {})
        if OUTPUT_ROLE in vectors and REFERENCE_ROLE in vectors:
            score.sim = cosine_sim(vectors[OUTPUT_ROLE], vectors[REFERENCE_ROLE])

        if example.task == SPEED and hyp.duration_s is not None and "rate" in example.params:
            source_duration = _source_measure(example, "source_duration_s", audio_root)
            if source_duration is not None:
                score.rde = rde(hyp.duration_s, source_duration / float(example.params["rate"]))
        if example.task == VOLUME and hyp.amplitude is not None and "factor" in example.params:
            source_peak = _source_measure(example, "source_peak", audio_root)
            if source_peak is not None:
                score.rae = rae(hyp.amplitude, float(example.params["factor"]) * source_peak)
        report.rows.append(score)

    if report.missing:
        logger.warning(f"{len(report.missing)} examples have no hypothesis")
    return report


def write_report(report: MetricReport, path: Union[str, Path]) -> None:
    try:
        Path(path).write_text(
            json.dumps(report.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as e:
        raise AudioIOError(f"Cannot write report {path}: {e}") from e
