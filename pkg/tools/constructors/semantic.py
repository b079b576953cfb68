"""Semantic edit pairs: insertion, deletion and substitution."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from audio_io import ManifestEntry, Waveform
from errors import EditResolutionError, PreconditionError
from instruction_parser import (
    AFTER,
    AT_END,
    AT_START,
    BEFORE,
    DELETION,
    FIRST,
    INSERTION,
    LAST,
    REPLACE,
    SUBSTITUTION,
    ContentAnchor,
    EdgeRange,
    EditInstruction,
    IndexRange,
    join_tokens,
    make_cot,
    render_instruction,
    tokenize_transcript,
)

from .base import (
    DonorPool,
    EditExample,
    EditPair,
    PairConstructor,
    first_verified,
    frame_span,
    token_boundaries,
)


def _check_span(span: Sequence[int], length: int, what: str) -> tuple[int, int]:
    start, end = (int(v) for v in span)
    if not 0 <= start <= end <= length:
        raise PreconditionError(f"{what} [{start}, {end}) outside audio of {length} samples")
    return start, end


def construct_insertion_pair(audio: Waveform, cut_span: Sequence[int]) -> EditPair:
    """Input lacks samples [a, b); the target is the original audio."""
    start, end = _check_span(cut_span, audio.num_samples, "Cut span")
    if end == start:
        raise PreconditionError("Cut span must be nonempty")
    samples = audio.samples
    source = Waveform(np.concatenate([samples[:start], samples[end:]]), audio.sample_rate)
    target = Waveform(samples.copy(), audio.sample_rate)
    return EditPair(source, target, frame_span(start, end), {"cut_samples": [start, end]})


def construct_deletion_pair(audio: Waveform, artifact_audio: Waveform, insert_pos: int) -> EditPair:
    """Input has an artifact spliced in at insert_pos; the target is the original audio."""
    pos, _ = _check_span((insert_pos, insert_pos), audio.num_samples, "Insert position")
    if artifact_audio.num_samples == 0:
        raise PreconditionError("Artifact audio is empty")
    if artifact_audio.sample_rate != audio.sample_rate:
        raise PreconditionError(
            f"Artifact rate {artifact_audio.sample_rate} Hz differs from {audio.sample_rate} Hz"
        )
    samples = audio.samples
    source = Waveform(np.concatenate([samples[:pos], artifact_audio.samples, samples[pos:]]), audio.sample_rate)
    target = Waveform(samples.copy(), audio.sample_rate)
    params = {"insert_pos": pos, "artifact_samples": artifact_audio.num_samples}
    return EditPair(source, target, frame_span(pos, pos), params)


def construct_substitution_pair(audio: Waveform, src_span: Sequence[int], dst_span: Sequence[int]) -> EditPair:
    """Input has dst overwritten by src; both are cropped to the shorter length."""
    src_start, src_end = _check_span(src_span, audio.num_samples, "Source span")
    dst_start, dst_end = _check_span(dst_span, audio.num_samples, "Destination span")
    if src_start < dst_end and dst_start < src_end:
        raise PreconditionError(
            f"Spans [{src_start}, {src_end}) and [{dst_start}, {dst_end}) overlap"
        )
    length = min(src_end - src_start, dst_end - dst_start)
    if length == 0:
        raise PreconditionError("Substitution spans must be nonempty")
    source_samples = audio.samples.copy()
    source_samples[dst_start : dst_start + length] = audio.samples[src_start : src_start + length]
    params = {
        "src_samples": [src_start, src_start + length],
        "dst_samples": [dst_start, dst_start + length],
    }
    return EditPair(
        Waveform(source_samples, audio.sample_rate),
        Waveform(audio.samples.copy(), audio.sample_rate),
        frame_span(dst_start, dst_start + length),
        params,
    )


def edit_candidates(
    task: str,
    tokens: Sequence[str],
    start: int,
    end: int,
    payload_tokens: Sequence[str],
    language: str,
) -> list[EditInstruction]:
    """Every locator phrasing of one edit of source tokens [start, end).

    Candidates are unverified: content anchors may be ambiguous.
    """
    count = len(tokens)
    locators = []
    if task == INSERTION:
        if start == 0:
            locators.append(ContentAnchor(None, AT_START))
        if start == count:
            locators.append(ContentAnchor(None, AT_END))
        if start > 0:
            locators.append(IndexRange(start, start, AFTER))
            locators.append(ContentAnchor(tokens[start - 1], AFTER))
        if start < count:
            locators.append(IndexRange(start + 1, start + 1, BEFORE))
            locators.append(ContentAnchor(tokens[start], BEFORE))
    else:
        locators.append(IndexRange(start + 1, end))
        if start == 0:
            locators.append(EdgeRange(FIRST, end))
        if end == count:
            locators.append(EdgeRange(LAST, end - start))
        locators.append(ContentAnchor(join_tokens(tokens[start:end], language), REPLACE))

    payload = "" if task == DELETION else join_tokens(payload_tokens, language)
    return [EditInstruction(task, locator, payload, language) for locator in locators]


def choose_instruction(
    candidates: Sequence[EditInstruction],
    rng: np.random.Generator,
    source_text: str,
    target_text: str,
    instruction_type: Optional[str] = None,
) -> Optional[EditInstruction]:
    """Random verified candidate, optionally restricted to index- or content-based."""
    if instruction_type is not None:
        candidates = [c for c in candidates if c.instruction_type == instruction_type]
    order = rng.permutation(len(candidates)) if candidates else []
    return first_verified([candidates[i] for i in order], source_text, target_text)


class SemanticConstructor(PairConstructor):
    """Shared planning for text-changing edits."""

    MIN_TOKENS = 1

    def _prepare(self, entry: ManifestEntry, audio: Waveform):
        tokens = tokenize_transcript(entry.transcript, entry.language)
        if len(tokens) < self.MIN_TOKENS:
            raise PreconditionError(
                f"{self.task} needs at least {self.MIN_TOKENS} tokens, '{entry.id}' has {len(tokens)}"
            )
        boundaries, mode = token_boundaries(entry, tokens, audio.num_samples)
        return tokens, boundaries, mode

    def _span_length(self, rng: np.random.Generator, limit: int) -> int:
        return int(rng.integers(1, max(1, min(self.config.max_span_tokens, limit)) + 1))

    def _emit(
        self,
        entry: ManifestEntry,
        pair: EditPair,
        source_tokens: list[str],
        target_tokens: list[str],
        candidates: list[EditInstruction],
        target_span: tuple[int, int],
        rng: np.random.Generator,
    ) -> EditExample:
        language = entry.language
        source_text = join_tokens(source_tokens, language)
        target_text = join_tokens(target_tokens, language)
        instruction = choose_instruction(candidates, rng, source_text, target_text)
        if instruction is None:
            raise EditResolutionError(f"No instruction phrasing reproduces the {self.task} edit of '{entry.id}'")
        cot = make_cot(target_text, target_span, language)
        self.logger.debug(f"{entry.id}: {self.task} via {instruction.locator}")
        return self.finish(
            entry,
            pair,
            render_instruction(instruction, self.config.instruction_style),
            instruction_type=instruction.instruction_type,
            source_text=source_text,
            target_text=target_text,
            cot=cot,
            target_span_tokens=target_span,
        )


class InsertionConstructor(SemanticConstructor):
    """Cut a token span from the audio; the model must insert it back."""

    MIN_TOKENS = 2

    @property
    def task(self) -> str:
        return INSERTION

    def construct(self, entry, audio, rng):
        tokens, boundaries, mode = self._prepare(entry, audio)
        count = self._span_length(rng, len(tokens) - 1)
        start = int(rng.integers(0, len(tokens) - count + 1))
        cut = (boundaries[start], boundaries[start + count])
        if cut[1] <= cut[0]:
            raise PreconditionError(f"Tokens {start}..{start + count} of '{entry.id}' have no audio")

        pair = construct_insertion_pair(audio, cut)
        pair.params["cut_mode"] = mode
        source_tokens = tokens[:start] + tokens[start + count :]
        candidates = edit_candidates(
            INSERTION, source_tokens, start, start, tokens[start : start + count], entry.language
        )
        return self._emit(entry, pair, source_tokens, tokens, candidates, (start, start + count), rng)


class DeletionConstructor(SemanticConstructor):
    """Splice words of a donor item into the audio; the model must delete them."""

    @property
    def task(self) -> str:
        return DELETION

    def construct(self, entry, audio, rng):
        tokens, boundaries, mode = self._prepare(entry, audio)
        donors = self.context.donors or DonorPool([entry])
        donor = donors.draw(rng, entry.language, exclude_id=entry.id)
        donor_audio = audio if donor.id == entry.id else donors.load_audio(donor)
        donor_tokens = tokenize_transcript(donor.transcript, donor.language)
        if not donor_tokens:
            raise PreconditionError(f"Donor '{donor.id}' has an empty transcript")
        donor_bounds, _ = token_boundaries(donor, donor_tokens, donor_audio.num_samples)

        count = self._span_length(rng, len(donor_tokens))
        donor_start = int(rng.integers(0, len(donor_tokens) - count + 1))
        artifact = Waveform(
            donor_audio.samples[donor_bounds[donor_start] : donor_bounds[donor_start + count]],
            donor_audio.sample_rate,
        )
        artifact_tokens = donor_tokens[donor_start : donor_start + count]
        position = int(rng.integers(0, len(tokens) + 1))

        pair = construct_deletion_pair(audio, artifact, boundaries[position])
        pair.params.update(cut_mode=mode, donor_id=donor.id)
        source_tokens = tokens[:position] + artifact_tokens + tokens[position:]
        candidates = edit_candidates(DELETION, source_tokens, position, position + count, [], entry.language)
        return self._emit(entry, pair, source_tokens, tokens, candidates, (position, position), rng)


class SubstitutionConstructor(SemanticConstructor):
    """Overwrite one token span with another; the model must restore the original words."""

    MIN_TOKENS = 2

    @property
    def task(self) -> str:
        return SUBSTITUTION

    def construct(self, entry, audio, rng):
        tokens, boundaries, mode = self._prepare(entry, audio)
        count = self._span_length(rng, len(tokens) // 2)
        src = int(rng.integers(0, len(tokens) - count + 1))
        options = [d for d in range(len(tokens) - count + 1) if d + count <= src or d >= src + count]
        if not options:
            raise PreconditionError(f"No room for two disjoint {count}-token spans in '{entry.id}'")
        dst = int(options[int(rng.integers(len(options)))])

        pair = construct_substitution_pair(
            audio,
            (boundaries[src], boundaries[src + count]),
            (boundaries[dst], boundaries[dst + count]),
        )
        pair.params["cut_mode"] = mode
        source_tokens = tokens[:dst] + tokens[src : src + count] + tokens[dst + count :]
        if source_tokens == tokens:
            raise PreconditionError(f"Spans of '{entry.id}' hold identical words; nothing to substitute")
        candidates = edit_candidates(
            SUBSTITUTION, source_tokens, dst, dst + count, tokens[dst : dst + count], entry.language
        )
        return self._emit(entry, pair, source_tokens, tokens, candidates, (dst, dst + count), rng)
