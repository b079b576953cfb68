"""Parser for free-form edit instructions over speech transcripts."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from errors import (
    AmbiguousAnchorError,
    AnchorNotFoundError,
    EditResolutionError,
    IndexOutOfBoundsError,
    InstructionError,
    InstructionParseError,
    PreconditionError,
)

DELETION = "deletion"
INSERTION = "insertion"
SUBSTITUTION = "substitution"
SEMANTIC_TASKS = (DELETION, INSERTION, SUBSTITUTION)

BEFORE = "before"
AFTER = "after"
AT_START = "at_start"
AT_END = "at_end"
REPLACE = "replace"

FIRST = "first"
LAST = "last"

INDEX_BASED = "index"
CONTENT_BASED = "content"

BASIC_STYLE = "basic"
FULL_STYLE = "full"

MASK_TOKEN = "[MASK]"

EN_NUMBERS = {
    "one": 1,
    "two": 2,
    "three": 3,
    "four": 4,
    "five": 5,
    "six": 6,
    "seven": 7,
    "eight": 8,
    "nine": 9,
    "ten": 10,
}
ZH_NUMBERS = {
    "一": 1,
    "二": 2,
    "两": 2,
    "三": 3,
    "四": 4,
    "五": 5,
    "六": 6,
    "七": 7,
    "八": 8,
    "九": 9,
    "十": 10,
}


def tokenize_transcript(text: str, language: str) -> list[str]:
    """Split a transcript into edit tokens.

    zh: one token per non-whitespace character. en: whitespace-delimited words.
    """
    if language == "zh":
        return [ch for ch in text if not ch.isspace()]
    return text.split()


def join_tokens(tokens: Sequence[str], language: str) -> str:
    if language == "zh":
        return "".join(tokens)
    return " ".join(tokens)


@dataclass(frozen=True)
class IndexRange:
    """1-based inclusive token range; relation is replace, or before/after for insertions."""

    start: int
    end: int
    relation: str = REPLACE


@dataclass(frozen=True)
class EdgeRange:
    """The first or last `count` tokens."""

    edge: str
    count: int


@dataclass(frozen=True)
class ContentAnchor:
    """Quoted transcript content, or the sentence start/end when anchor is None."""

    anchor: Optional[str]
    relation: str


Locator = Union[IndexRange, EdgeRange, ContentAnchor]


@dataclass(frozen=True)
class EditInstruction:
    kind: str
    locator: Locator
    payload: str
    language: str

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise InstructionError("; ".join(problems))

    @property
    def instruction_type(self) -> str:
        """Index-based or content-based, as tallied in benchmark statistics."""
        if isinstance(self.locator, ContentAnchor):
            return CONTENT_BASED
        return INDEX_BASED

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in SEMANTIC_TASKS:
            problems.append(f"Unknown edit kind '{self.kind}'")
        if self.kind == DELETION and self.payload:
            problems.append("Deletion takes no payload")
        if self.kind in (INSERTION, SUBSTITUTION) and not self.payload.strip():
            problems.append(f"{self.kind.capitalize()} needs a nonempty payload")

        locator = self.locator
        if isinstance(locator, IndexRange):
            if not 1 <= locator.start <= locator.end:
                problems.append(f"Index range must satisfy 1 <= start <= end, got {locator.start}..{locator.end}")
            if self.kind == INSERTION:
                if locator.relation not in (BEFORE, AFTER) or locator.start != locator.end:
                    problems.append("Insertion by index needs a single index with before/after")
            elif locator.relation != REPLACE:
                problems.append(f"{self.kind.capitalize()} by index cannot use relation '{locator.relation}'")
        elif isinstance(locator, EdgeRange):
            if locator.edge not in (FIRST, LAST):
                problems.append(f"Unknown edge '{locator.edge}'")
            if locator.count < 1:
                problems.append(f"Edge count must be >= 1, got {locator.count}")
            if self.kind == INSERTION:
                problems.append("Insertion cannot target the first/last N tokens")
        elif isinstance(locator, ContentAnchor):
            if locator.relation in (AT_START, AT_END):
                if self.kind != INSERTION or locator.anchor is not None:
                    problems.append("Sentence start/end only locates insertions")
            elif locator.relation in (BEFORE, AFTER):
                if self.kind != INSERTION:
                    problems.append(f"Relation '{locator.relation}' only locates insertions")
            elif locator.relation == REPLACE:
                if self.kind == INSERTION:
                    problems.append("Insertion needs a before/after relation")
            else:
                problems.append(f"Unknown relation '{locator.relation}'")
            if locator.relation not in (AT_START, AT_END) and not (locator.anchor or "").strip():
                problems.append("Content anchor is empty")
        else:
            problems.append(f"Unknown locator {locator!r}")
        return problems


@dataclass(frozen=True)
class EditSpan:
    """Edited region as 0-based half-open token intervals in source and target."""

    source: tuple[int, int]
    target: tuple[int, int]


@dataclass(frozen=True)
class CoTText:
    """Edited transcript with the edited region replaced by a single [MASK]."""

    text: str
    mask_payload: str
    language: str

    def reconstruct(self) -> str:
        prefix, suffix = self.text.split(MASK_TOKEN, 1)
        if self.language == "zh":
            return prefix + self.mask_payload + suffix
        parts = [prefix.strip(), self.mask_payload, suffix.strip()]
        return " ".join(part for part in parts if part)


QUOTE_OPEN = "'`‘“\"「"
QUOTE_CLOSE = "'’”\"」"


def _quoted(name: str) -> str:
    return rf"[{QUOTE_OPEN}](?P<{name}>.+?)[{QUOTE_CLOSE}]"


def _en_number(name: str) -> str:
    return rf"(?P<{name}>\d+|{'|'.join(EN_NUMBERS)})"


def _zh_number(name: str) -> str:
    return rf"(?P<{name}>\d+|[{''.join(ZH_NUMBERS)}])"


class InstructionParser:
    """Template grammar for English and Chinese edit instructions."""

    EN_UNIT = r"(?:characters? or words?|characters?|words?|chars?)"
    ZH_UNIT = r"个?(?:字符|字|词)"
    ZH_INSERT = r"(?:添加|插入|加上)"
    ZH_REPLACE = r"(?:换成|替换为|替换成|改成)"
    TRAILING_PERIOD_PATTERN = re.compile(r"[.。]\s*$")

    # (kind, fixed relation or None, pattern); tried in order, first full match wins
    EN_PATTERNS = [
        (DELETION, None, rf"(?:delete|remove) the {EN_UNIT} from index {_en_number('start')} to index {_en_number('end')}"),
        (DELETION, None, rf"(?:delete|remove) {EN_UNIT} {_en_number('start')} (?:to|through) {_en_number('end')}"),
        (DELETION, None, rf"(?:delete|remove) the (?P<edge>first|last) {_en_number('count')} {EN_UNIT}"),
        (DELETION, REPLACE, rf"(?:delete|remove) {_quoted('anchor')}"),
        (INSERTION, AT_START, rf"(?:insert|add) {_quoted('payload')} at the (?:beginning|start)(?: of the sentence)?"),
        (INSERTION, AT_START, rf"start the sentence with {_quoted('payload')}"),
        (INSERTION, AT_END, rf"(?:insert|add) {_quoted('payload')} at the end(?: of the sentence)?"),
        (INSERTION, AT_END, rf"end the sentence with {_quoted('payload')}"),
        (INSERTION, None, rf"(?:insert|add) {_quoted('payload')} (?P<relation>after|before) the {EN_UNIT} at index {_en_number('index')}"),
        (INSERTION, None, rf"(?:insert|add) {_quoted('payload')} (?P<relation>after|before) {EN_UNIT} {_en_number('index')}"),
        (INSERTION, None, rf"(?:insert|add) {_quoted('payload')} (?P<relation>after|before) {_quoted('anchor')}"),
        (SUBSTITUTION, None, rf"(?:substitute|replace) the {EN_UNIT} from index {_en_number('start')} to index {_en_number('end')} with {_quoted('payload')}"),
        (SUBSTITUTION, None, rf"(?:substitute|replace) {EN_UNIT} {_en_number('start')} (?:to|through) {_en_number('end')} with {_quoted('payload')}"),
        (SUBSTITUTION, None, rf"(?:substitute|replace|change) the (?P<edge>first|last) {_en_number('count')} {EN_UNIT} (?:with|to) {_quoted('payload')}"),
        (SUBSTITUTION, REPLACE, rf"(?:substitute|replace|change) {_quoted('anchor')} (?:with|to) {_quoted('payload')}"),
    ]

    ZH_PATTERNS = [
        (DELETION, None, rf"删除第{_zh_number('start')}(?:{ZH_UNIT})?到第{_zh_number('end')}{ZH_UNIT}"),
        (DELETION, None, rf"删除(?P<edge>前|最后){_zh_number('count')}{ZH_UNIT}"),
        (DELETION, REPLACE, rf"删除{_quoted('anchor')}"),
        (INSERTION, AT_START, rf"在句首{ZH_INSERT}{_quoted('payload')}"),
        (INSERTION, AT_END, rf"在句(?:末|尾){ZH_INSERT}{_quoted('payload')}"),
        (INSERTION, None, rf"在第{_zh_number('index')}{ZH_UNIT}之?(?P<relation>前|后)面?{ZH_INSERT}{_quoted('payload')}"),
        (INSERTION, None, rf"在{_quoted('anchor')}之?(?P<relation>前|后)面?{ZH_INSERT}{_quoted('payload')}"),
        (SUBSTITUTION, None, rf"(?:把|将)第{_zh_number('start')}(?:{ZH_UNIT})?到第{_zh_number('end')}{ZH_UNIT}{ZH_REPLACE}{_quoted('payload')}"),
        (SUBSTITUTION, None, rf"(?:把|将)(?P<edge>前|最后){_zh_number('count')}{ZH_UNIT}{ZH_REPLACE}{_quoted('payload')}"),
        (SUBSTITUTION, REPLACE, rf"(?:把|将){_quoted('anchor')}{ZH_REPLACE}{_quoted('payload')}"),
    ]

    RELATION_WORDS = {"after": AFTER, "before": BEFORE, "后": AFTER, "前": BEFORE}
    EDGE_WORDS = {"first": FIRST, "last": LAST, "前": FIRST, "最后": LAST}

    def __init__(self):
        self.patterns = [
            (kind, relation, re.compile(pattern, re.IGNORECASE))
            for kind, relation, pattern in self.EN_PATTERNS + self.ZH_PATTERNS
        ]

    @staticmethod
    def parse_number(text: str) -> int:
        text = text.lower()
        if text.isdigit():
            return int(text)
        if text in EN_NUMBERS:
            return EN_NUMBERS[text]
        return ZH_NUMBERS[text]

    def normalize(self, text: str) -> str:
        """Collapse whitespace and drop one trailing sentence period."""
        text = " ".join(text.split())
        return self.TRAILING_PERIOD_PATTERN.sub("", text)

    def parse(self, text: str, language: str) -> EditInstruction:
        """Parse an instruction into its structured form.

        Args:
            text: Instruction text in either template language
            language: Transcript language the instruction applies to

        Returns:
            EditInstruction

        Raises:
            InstructionParseError: If no template matches
            InstructionError: If a template matches but its values are invalid
        """
        normalized = self.normalize(text)
        for kind, relation, pattern in self.patterns:
            match = pattern.fullmatch(normalized)
            if match:
                return self._build(kind, relation, match.groupdict(), language)
        raise InstructionParseError(text)

    def _build(self, kind: str, relation: Optional[str], groups: dict, language: str) -> EditInstruction:
        payload = groups.get("payload") or ""
        if groups.get("start") is not None:
            locator: Locator = IndexRange(self.parse_number(groups["start"]), self.parse_number(groups["end"]))
        elif groups.get("index") is not None:
            index = self.parse_number(groups["index"])
            locator = IndexRange(index, index, self.RELATION_WORDS[groups["relation"].lower()])
        elif groups.get("count") is not None:
            locator = EdgeRange(self.EDGE_WORDS[groups["edge"].lower()], self.parse_number(groups["count"]))
        elif relation in (AT_START, AT_END):
            locator = ContentAnchor(None, relation)
        else:
            relation = relation or self.RELATION_WORDS[groups["relation"].lower()]
            locator = ContentAnchor(groups["anchor"], relation)
        return EditInstruction(kind, locator, payload, language)


_default_parser = InstructionParser()


def parse_instruction(text: str, language: str) -> EditInstruction:
    return _default_parser.parse(text, language)


def _loose(token: str) -> str:
    return re.sub(r"[^\w]", "", token.lower())


def find_anchor(tokens: Sequence[str], anchor_tokens: Sequence[str]) -> list[int]:
    """0-based start positions of anchor_tokens in tokens.

    Exact matches win; without any, case and punctuation are ignored.
    """
    width = len(anchor_tokens)
    if width == 0:
        return []
    starts = range(len(tokens) - width + 1)
    exact = [i for i in starts if list(tokens[i : i + width]) == list(anchor_tokens)]
    if exact:
        return exact
    loose_anchor = [_loose(t) for t in anchor_tokens]
    if not any(loose_anchor):
        return []
    loose_tokens = [_loose(t) for t in tokens]
    return [i for i in starts if loose_tokens[i : i + width] == loose_anchor]


def _resolve_anchor(tokens: list[str], anchor: str, language: str, occurrence: Optional[int]) -> tuple[int, int]:
    anchor_tokens = tokenize_transcript(anchor, language)
    matches = find_anchor(tokens, anchor_tokens)
    if not matches:
        raise AnchorNotFoundError(anchor)
    if occurrence is not None:
        if not 1 <= occurrence <= len(matches):
            raise EditResolutionError(
                f"Occurrence {occurrence} requested but {anchor!r} matches {len(matches)} time(s)"
            )
        start = matches[occurrence - 1]
    elif len(matches) > 1:
        raise AmbiguousAnchorError(anchor, [m + 1 for m in matches])
    else:
        start = matches[0]
    return start, start + len(anchor_tokens)


def resolve_source_span(
    tokens: list[str], instruction: EditInstruction, occurrence: Optional[int] = None
) -> tuple[int, int]:
    """Source token interval [start, end) the instruction replaces (empty for insertions)."""
    n = len(tokens)
    locator = instruction.locator
    if isinstance(locator, IndexRange):
        if locator.end > n:
            raise IndexOutOfBoundsError(
                f"Index {locator.end} is past the end of a {n}-token transcript"
            )
        if locator.relation == AFTER:
            return locator.start, locator.start
        if locator.relation == BEFORE:
            return locator.start - 1, locator.start - 1
        return locator.start - 1, locator.end
    if isinstance(locator, EdgeRange):
        if locator.count > n:
            raise IndexOutOfBoundsError(
                f"Cannot take the {locator.edge} {locator.count} tokens of a {n}-token transcript"
            )
        return (0, locator.count) if locator.edge == FIRST else (n - locator.count, n)
    if locator.relation == AT_START:
        return 0, 0
    if locator.relation == AT_END:
        return n, n
    start, end = _resolve_anchor(tokens, locator.anchor, instruction.language, occurrence)
    if locator.relation == BEFORE:
        return start, start
    if locator.relation == AFTER:
        return end, end
    return start, end


def _is_displaced_titlecase(token: str) -> bool:
    return token.istitle() and token != "I" and not token.startswith("I'")


def apply_edit(
    transcript: str, instruction: EditInstruction, occurrence: Optional[int] = None
) -> tuple[str, EditSpan]:
    """Apply an instruction to a transcript.

    Args:
        transcript: Source transcript
        instruction: Parsed instruction
        occurrence: 1-based match to use when a content anchor is ambiguous

    Returns:
        (edited_text, EditSpan)

    Raises:
        AnchorNotFoundError: Anchor absent from the transcript
        AmbiguousAnchorError: Anchor matches more than once and no occurrence given
        IndexOutOfBoundsError: Index locator past the transcript end
    """
    language = instruction.language
    tokens = tokenize_transcript(transcript, language)
    start, end = resolve_source_span(tokens, instruction, occurrence)
    payload_tokens = tokenize_transcript(instruction.payload, language)
    tail = tokens[end:]

    # Starting an English sentence with new words demotes the old first word
    if (
        language == "en"
        and isinstance(instruction.locator, ContentAnchor)
        and instruction.locator.relation == AT_START
        and tail
        and payload_tokens[0][:1].isupper()
        and _is_displaced_titlecase(tail[0])
    ):
        tail = [tail[0].lower(), *tail[1:]]

    edited = tokens[:start] + payload_tokens + tail
    span = EditSpan((start, end), (start, start + len(payload_tokens)))
    return join_tokens(edited, language), span


def make_cot(edited_text: str, target_span: tuple[int, int], language: str) -> CoTText:
    """Replace the target interval of the edited transcript by one [MASK] token."""
    tokens = tokenize_transcript(edited_text, language)
    start, end = target_span
    if not 0 <= start <= end <= len(tokens):
        raise PreconditionError(f"Target span {target_span} outside {len(tokens)} tokens")
    if MASK_TOKEN in edited_text:
        raise PreconditionError(f"Edited text already contains {MASK_TOKEN}")
    masked = tokens[:start] + [MASK_TOKEN] + tokens[end:]
    return CoTText(join_tokens(masked, language), join_tokens(tokens[start:end], language), language)


def inverse_instruction(
    instruction: EditInstruction, transcript: str, occurrence: Optional[int] = None
) -> EditInstruction:
    """Index-based instruction that turns the edited transcript back into the source."""
    language = instruction.language
    source = tokenize_transcript(transcript, language)
    edited_text, span = apply_edit(transcript, instruction, occurrence)
    edited = tokenize_transcript(edited_text, language)
    src_start, src_end = span.source
    tgt_start, tgt_end = span.target
    if edited[tgt_end:] != source[src_end:]:
        # A recapitalised first word is restored together with the inserted text
        src_end += 1
        tgt_end += 1

    removed = join_tokens(source[src_start:src_end], language)
    if tgt_start == tgt_end:
        if tgt_start == len(edited):
            locator: Locator = ContentAnchor(None, AT_END)
        elif tgt_start == 0:
            locator = IndexRange(1, 1, BEFORE)
        else:
            locator = IndexRange(tgt_start, tgt_start, AFTER)
        return EditInstruction(INSERTION, locator, removed, language)
    if src_start == src_end:
        return EditInstruction(DELETION, IndexRange(tgt_start + 1, tgt_end), "", language)
    return EditInstruction(SUBSTITUTION, IndexRange(tgt_start + 1, tgt_end), removed, language)


_EN_COUNT_WORDS = {value: word for word, value in EN_NUMBERS.items()}


def _render_basic(instruction: EditInstruction) -> str:
    locator = instruction.locator
    payload = instruction.payload
    if instruction.kind == DELETION:
        if isinstance(locator, IndexRange):
            return f"delete the characters or words from index {locator.start} to index {locator.end}"
        if isinstance(locator, EdgeRange):
            return f"delete the {locator.edge} {locator.count} characters or words"
        return f"delete '{locator.anchor}'"
    if instruction.kind == INSERTION:
        if isinstance(locator, IndexRange):
            return f"insert '{payload}' {locator.relation} the character or word at index {locator.start}"
        if locator.relation == AT_START:
            return f"insert '{payload}' at the beginning"
        if locator.relation == AT_END:
            return f"insert '{payload}' at the end"
        return f"insert '{payload}' {locator.relation} '{locator.anchor}'"
    if isinstance(locator, IndexRange):
        return f"substitute the characters or words from index {locator.start} to index {locator.end} with '{payload}'"
    if isinstance(locator, EdgeRange):
        return f"substitute the {locator.edge} {locator.count} characters or words with '{payload}'"
    return f"substitute '{locator.anchor}' with '{payload}'"


def _render_full_en(instruction: EditInstruction) -> str:
    locator = instruction.locator
    payload = instruction.payload
    if instruction.kind == DELETION:
        if isinstance(locator, IndexRange):
            return f"Delete words {locator.start} through {locator.end}."
        if isinstance(locator, EdgeRange):
            return f"Delete the {locator.edge} {locator.count} words."
        return f"Delete `{locator.anchor}'."
    if instruction.kind == INSERTION:
        if isinstance(locator, IndexRange):
            return f"Insert `{payload}' {locator.relation} word {locator.start}"
        if locator.relation == AT_START:
            return f"Start the sentence with `{payload}'"
        if locator.relation == AT_END:
            return f"End the sentence with `{payload}'"
        return f"Insert `{payload}' {locator.relation} `{locator.anchor}'"
    if isinstance(locator, IndexRange):
        return f"Replace words {locator.start} through {locator.end} with `{payload}'"
    if isinstance(locator, EdgeRange):
        count = _EN_COUNT_WORDS.get(locator.count, str(locator.count))
        return f"Change the {locator.edge} {count} words to `{payload}'"
    return f"Replace `{locator.anchor}' with `{payload}'"


def _render_full_zh(instruction: EditInstruction) -> str:
    locator = instruction.locator
    payload = instruction.payload
    edge = "前" if getattr(locator, "edge", FIRST) == FIRST else "最后"
    if instruction.kind == DELETION:
        if isinstance(locator, IndexRange):
            return f"删除第{locator.start}到第{locator.end}个字"
        if isinstance(locator, EdgeRange):
            return f"删除{edge}{locator.count}个字"
        return f"删除“{locator.anchor}”"
    if instruction.kind == INSERTION:
        if isinstance(locator, IndexRange):
            side = "后" if locator.relation == AFTER else "前"
            return f"在第{locator.start}个字{side}面插入“{payload}”"
        if locator.relation == AT_START:
            return f"在句首添加“{payload}”"
        if locator.relation == AT_END:
            return f"在句末添加“{payload}”"
        side = "后" if locator.relation == AFTER else "前"
        return f"在“{locator.anchor}”{side}面插入“{payload}”"
    if isinstance(locator, IndexRange):
        return f"把第{locator.start}到第{locator.end}个字换成“{payload}”"
    if isinstance(locator, EdgeRange):
        return f"把{edge}{locator.count}个字换成“{payload}”"
    return f"把“{locator.anchor}”换成“{payload}”"


def render_instruction(instruction: EditInstruction, style: str = BASIC_STYLE) -> str:
    """Instruction text in the basic (English for every language) or full (native) grammar."""
    if style == BASIC_STYLE:
        return _render_basic(instruction)
    if style == FULL_STYLE:
        if instruction.language == "zh":
            return _render_full_zh(instruction)
        return _render_full_en(instruction)
    raise InstructionError(f"Unknown instruction style '{style}'")
