"""Tests for instruction parsing, edit application and CoT masking.

Covers:
- The twelve worked examples of the basic and full test sets
- Render then parse round trips in both grammars
- Inverse instructions restore the source transcript
- Resolution errors (missing, ambiguous and out-of-range locators)
"""

import unittest

from errors import (
    AmbiguousAnchorError,
    AnchorNotFoundError,
    IndexOutOfBoundsError,
    InstructionError,
    InstructionParseError,
    PreconditionError,
)
from instruction_parser import (
    AFTER,
    AT_END,
    AT_START,
    BASIC_STYLE,
    BEFORE,
    CONTENT_BASED,
    DELETION,
    FIRST,
    FULL_STYLE,
    INDEX_BASED,
    INSERTION,
    LAST,
    MASK_TOKEN,
    REPLACE,
    SUBSTITUTION,
    ContentAnchor,
    EdgeRange,
    EditInstruction,
    IndexRange,
    apply_edit,
    inverse_instruction,
    make_cot,
    parse_instruction,
    render_instruction,
    tokenize_transcript,
)

# (instruction, language, original, edited, occurrence)
WORKED_EXAMPLES = [
    (
        "delete 'The second for'",
        "en",
        "The second for no better reason than the first",
        "no better reason than the first",
        None,
    ),
    (
        "delete the characters or words from index 6 to index 10",
        "zh",
        "火精灵又出现了猴腿帕克挠挠头",
        "火精灵又出克挠挠头",
        None,
    ),
    (
        "insert 'publicly' after the character or word at index 3",
        "en",
        "It does not comment on specific disputes",
        "It does not publicly comment on specific disputes",
        None,
    ),
    (
        "insert '的行为很可笑' at the end",
        "zh",
        "在他看来像这种用一排大炮来歼灭一只小虫",
        "在他看来像这种用一排大炮来歼灭一只小虫的行为很可笑",
        None,
    ),
    (
        "substitute 'a' with 'an outdoor'",
        "en",
        "A man wearing a jacket hat and jeans at a market",
        "A man wearing a jacket hat and jeans at an outdoor market",
        2,
    ),
    (
        "substitute the characters or words from index 1 to index 2 with '秋天'",
        "zh",
        "夏天的酷热过去了冬天的寒冷还早呢",
        "秋天的酷热过去了冬天的寒冷还早呢",
        None,
    ),
    (
        "Delete the first 4 words.",
        "en",
        "Roaming endlessly around the park she wants to go home",
        "park she wants to go home",
        None,
    ),
    (
        "删除“当我们做体验时”",
        "zh",
        "当我们做体验时我们到底在做什么",
        "我们到底在做什么",
        None,
    ),
    (
        "Start the sentence with `In practice,'",
        "en",
        "To turn this into an algorithm only finitely many frequencies are solved for",
        "In practice, to turn this into an algorithm only finitely many frequencies are solved for",
        None,
    ),
    (
        "在句末添加“大家都很感动”",
        "zh",
        "比如当有人替受伤的小鸟包扎时",
        "比如当有人替受伤的小鸟包扎时大家都很感动",
        None,
    ),
    (
        "Change the last two words to `accidentally'",
        "en",
        "The boy wanted to believe that his friend had simply become separated from him by accident",
        "The boy wanted to believe that his friend had simply become separated from him accidentally",
        None,
    ),
    (
        "把“不变应万变”换成“静观其变”",
        "zh",
        "采取以不变应万变的不卖不赔方法",
        "采取以静观其变的不卖不赔方法",
        None,
    ),
]


class TestTokenize(unittest.TestCase):
    """Test transcript tokenization."""

    def test_zh_characters(self):
        """Chinese splits into characters."""
        self.assertEqual(len(tokenize_transcript("火精灵又出现了猴腿帕克挠挠头", "zh")), 14)
        self.assertEqual(tokenize_transcript("你 好", "zh"), ["你", "好"])

    def test_en_words(self):
        """English splits on whitespace."""
        self.assertEqual(len(tokenize_transcript("It does not comment on specific disputes", "en")), 7)
        self.assertEqual(tokenize_transcript("", "en"), [])


class TestParse(unittest.TestCase):
    """Test template parsing."""

    def test_index_deletion(self):
        """Index ranges are 1-based inclusive."""
        instruction = parse_instruction("delete the characters or words from index 6 to index 10", "zh")

        self.assertEqual(instruction.kind, DELETION)
        self.assertEqual(instruction.locator, IndexRange(6, 10))
        self.assertEqual(instruction.instruction_type, INDEX_BASED)

    def test_index_insertion(self):
        """Insertion by index keeps the relation and payload."""
        instruction = parse_instruction("insert 'publicly' after the character or word at index 3", "en")

        self.assertEqual(instruction.kind, INSERTION)
        self.assertEqual(instruction.locator, IndexRange(3, 3, AFTER))
        self.assertEqual(instruction.payload, "publicly")

    def test_content_substitution(self):
        """Quoted anchors and payloads are extracted verbatim."""
        instruction = parse_instruction("substitute 'a' with 'an outdoor'", "en")

        self.assertEqual(instruction.kind, SUBSTITUTION)
        self.assertEqual(instruction.locator, ContentAnchor("a", REPLACE))
        self.assertEqual(instruction.payload, "an outdoor")
        self.assertEqual(instruction.instruction_type, CONTENT_BASED)

    def test_number_words(self):
        """Spelled-out counts are understood."""
        instruction = parse_instruction("Change the last two words to `accidentally'", "en")
        self.assertEqual(instruction.locator, EdgeRange(LAST, 2))

    def test_unrecognized_template(self):
        """Unknown phrasing raises a parse error with the text."""
        with self.assertRaises(InstructionParseError) as ctx:
            parse_instruction("make it sound happier", "en")
        self.assertEqual(ctx.exception.text, "make it sound happier")

    def test_invalid_values(self):
        """A reversed index range is rejected."""
        with self.assertRaises(InstructionError):
            parse_instruction("delete the characters or words from index 5 to index 2", "en")


class TestWorkedExamples(unittest.TestCase):
    """Test parse then apply on the worked examples."""

    def test_all_examples_reproduce_edited_text(self):
        """Every example yields the expected edited text exactly."""
        for text, language, original, expected, occurrence in WORKED_EXAMPLES:
            with self.subTest(instruction=text):
                instruction = parse_instruction(text, language)

                edited, _ = apply_edit(original, instruction, occurrence)

                self.assertEqual(edited, expected)

    def test_zh_deletion_removes_indices_six_to_ten(self):
        """The removed source tokens are exactly 现了猴腿帕."""
        original = "火精灵又出现了猴腿帕克挠挠头"
        instruction = parse_instruction("delete the characters or words from index 6 to index 10", "zh")

        _, span = apply_edit(original, instruction)

        self.assertEqual("".join(tokenize_transcript(original, "zh")[span.source[0] : span.source[1]]), "现了猴腿帕")
        self.assertEqual(span.target, (5, 5))

    def test_repeated_anchor_is_ambiguous(self):
        """Without an occurrence, a repeated anchor lists its 1-based positions."""
        instruction = parse_instruction("substitute 'a' with 'an outdoor'", "en")

        with self.assertRaises(AmbiguousAnchorError) as ctx:
            apply_edit("A man wearing a jacket hat and jeans at a market", instruction)
        self.assertEqual(ctx.exception.positions, [4, 10])

    def test_inverse_restores_source(self):
        """Applying the inverse instruction to the edited text gives back the original."""
        for text, language, original, _, occurrence in WORKED_EXAMPLES:
            with self.subTest(instruction=text):
                instruction = parse_instruction(text, language)
                edited, _ = apply_edit(original, instruction, occurrence)

                inverse = inverse_instruction(instruction, original, occurrence)
                restored, _ = apply_edit(edited, inverse)

                self.assertEqual(
                    tokenize_transcript(restored, language), tokenize_transcript(original, language)
                )


class TestResolutionErrors(unittest.TestCase):
    """Test unresolvable instructions."""

    def test_missing_anchor(self):
        """An absent anchor raises AnchorNotFoundError."""
        instruction = parse_instruction("delete 'zebra'", "en")
        with self.assertRaises(AnchorNotFoundError):
            apply_edit("the quick brown fox", instruction)

    def test_index_past_end(self):
        """Index ranges beyond the transcript raise IndexOutOfBoundsError."""
        instruction = parse_instruction("delete the characters or words from index 3 to index 9", "en")
        with self.assertRaises(IndexOutOfBoundsError):
            apply_edit("the quick brown fox", instruction)

    def test_edge_count_past_end(self):
        """Taking more tokens than exist is out of bounds."""
        instruction = EditInstruction(DELETION, EdgeRange(FIRST, 5), "", "en")
        with self.assertRaises(IndexOutOfBoundsError):
            apply_edit("the quick brown fox", instruction)

    def test_loose_anchor_match(self):
        """Anchors match ignoring case and punctuation when no exact match exists."""
        instruction = EditInstruction(DELETION, ContentAnchor("Brown fox", REPLACE), "", "en")
        edited, _ = apply_edit("the quick brown fox.", instruction)
        self.assertEqual(edited, "the quick")


class TestCoT(unittest.TestCase):
    """Test [MASK] construction."""

    def test_deletion_mask_at_edit_point(self):
        """An empty target span places the mask at the deletion point."""
        cot = make_cot("no better reason than the first", (0, 0), "en")

        self.assertEqual(cot.text, f"{MASK_TOKEN} no better reason than the first")
        self.assertEqual(cot.reconstruct(), "no better reason than the first")

    def test_insertion_mask_covers_payload(self):
        """The inserted words are held out as the mask payload."""
        cot = make_cot("It does not publicly comment on specific disputes", (3, 4), "en")

        self.assertEqual(cot.text, "It does not [MASK] comment on specific disputes")
        self.assertEqual(cot.mask_payload, "publicly")

    def test_zh_reconstruction(self):
        """Chinese masks join without separators and reconstruct exactly."""
        edited = "秋天的酷热过去了冬天的寒冷还早呢"
        cot = make_cot(edited, (0, 2), "zh")

        self.assertEqual(cot.text, "[MASK]的酷热过去了冬天的寒冷还早呢")
        self.assertEqual(cot.reconstruct(), edited)

    def test_span_out_of_range(self):
        """A span beyond the text is a precondition failure."""
        with self.assertRaises(PreconditionError):
            make_cot("a b", (1, 5), "en")


class TestRender(unittest.TestCase):
    """Test rendering in both grammars."""

    INSTRUCTIONS = [
        EditInstruction(DELETION, IndexRange(2, 4), "", "en"),
        EditInstruction(DELETION, EdgeRange(LAST, 3), "", "en"),
        EditInstruction(DELETION, ContentAnchor("the park", REPLACE), "", "en"),
        EditInstruction(INSERTION, IndexRange(5, 5, BEFORE), "really", "en"),
        EditInstruction(INSERTION, ContentAnchor(None, AT_START), "Well,", "en"),
        EditInstruction(INSERTION, ContentAnchor(None, AT_END), "today", "en"),
        EditInstruction(INSERTION, ContentAnchor("park", AFTER), "nearby", "en"),
        EditInstruction(SUBSTITUTION, IndexRange(1, 2), "a dog", "en"),
        EditInstruction(SUBSTITUTION, EdgeRange(FIRST, 2), "Running", "en"),
        EditInstruction(SUBSTITUTION, ContentAnchor("home", REPLACE), "away", "en"),
        EditInstruction(DELETION, IndexRange(6, 10), "", "zh"),
        EditInstruction(DELETION, EdgeRange(FIRST, 2), "", "zh"),
        EditInstruction(INSERTION, IndexRange(3, 3, AFTER), "很", "zh"),
        EditInstruction(INSERTION, ContentAnchor("小鸟", BEFORE), "可爱的", "zh"),
        EditInstruction(INSERTION, ContentAnchor(None, AT_START), "其实", "zh"),
        EditInstruction(SUBSTITUTION, EdgeRange(LAST, 2), "方式", "zh"),
        EditInstruction(SUBSTITUTION, ContentAnchor("不变应万变", REPLACE), "静观其变", "zh"),
    ]

    def test_round_trip_both_styles(self):
        """Parsing a rendered instruction gives the same instruction back."""
        for instruction in self.INSTRUCTIONS:
            for style in (BASIC_STYLE, FULL_STYLE):
                with self.subTest(instruction=instruction, style=style):
                    text = render_instruction(instruction, style)
                    self.assertEqual(parse_instruction(text, instruction.language), instruction)

    def test_full_style_matches_worked_phrasing(self):
        """Full-style rendering uses the native phrasing."""
        self.assertEqual(
            render_instruction(EditInstruction(DELETION, EdgeRange(FIRST, 4), "", "en"), FULL_STYLE),
            "Delete the first 4 words.",
        )
        self.assertEqual(
            render_instruction(EditInstruction(INSERTION, ContentAnchor(None, AT_END), "大家都很感动", "zh"), FULL_STYLE),
            "在句末添加“大家都很感动”",
        )

    def test_unknown_style(self):
        """Only basic and full styles exist."""
        with self.assertRaises(InstructionError):
            render_instruction(self.INSTRUCTIONS[0], "fancy")


if __name__ == "__main__":
    unittest.main()
