import math

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_cue, mock_table_for_doc, write_events, write_transcript
from vsat.issues import AppendTag, IssueKind, MaskSpans, ReplaceText, SplitCue
from vsat.lang_issues import (
    LangOptions,
    cosine_bow,
    detect_harmful,
    detect_non_word,
    detect_segmentation,
    detect_time_sync,
    mask_text,
    normalize_tokens,
    run_language_pass,
    spelling_issues,
    split_cue,
    validate_spell_rules,
)
from vsat.media_ingest import silence_clip
from vsat.model_backends import (
    AssetAsr,
    AssetEvents,
    EventScore,
    MockLlm,
    TranscriptWord,
)
from vsat.subtitle_core import SubtitleDoc, SubtitleFormat


def word(text, start, end):
    return TranscriptWord(text=text, start_ms=start, end_ms=end, confidence=0.9)


class TestNormalize:
    def test_lowercase_and_punctuation(self):
        assert normalize_tokens("Hello, World!") == ["hello", "world"]

    def test_bracketed_tags_dropped(self):
        assert normalize_tokens("so loud [music] yes") == ["so", "loud", "yes"]

    def test_intra_word_apostrophe_kept(self):
        assert normalize_tokens("don't 'quote'") == ["don't", "quote"]


class TestCosine:
    def test_both_empty(self):
        assert cosine_bow([], []) == 1.0

    def test_one_empty(self):
        assert cosine_bow(["a"], []) == 0.0

    def test_parallel_count_vectors(self):
        assert cosine_bow(["a"], ["a", "a"]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert cosine_bow(["a"], ["b"]) == 0.0

    def test_hand_computed_half(self):
        # count vectors (1,1,0) and (1,0,1) over {hello,world,there}
        sim = cosine_bow(["hello", "world"], ["hello", "there"])
        assert sim == pytest.approx(0.5)

    def test_symmetry_and_range(self):
        a, b = ["x", "y", "y"], ["y", "z"]
        assert cosine_bow(a, b) == cosine_bow(b, a)
        assert 0.0 <= cosine_bow(a, b) <= 1.0

    def test_self_similarity_is_one(self):
        tokens = ["a", "b", "b", "c"]
        assert cosine_bow(tokens, tokens) == pytest.approx(1.0)

    def test_exact_seven_tenths(self):
        # (1,1,0)·(4,3,5): dot=7, |a|²=2, |b|²=50 -> 7/sqrt(100) == 0.7 exactly
        a = ["a", "b"]
        b = ["a"] * 4 + ["b"] * 3 + ["c"] * 5
        assert cosine_bow(a, b) == 0.7


class TestSpellRules:
    def test_rule1_suffix(self):
        check = validate_spell_rules("desert", "deserty")
        assert not check.passed and check.failed_rule == 1

    def test_rule1_all_suffixes(self):
        for suffix in ("y", "ness", "ful", "less", "ed", "ly", "ing", "s", "es"):
            assert validate_spell_rules("desert", "desert" + suffix).failed_rule == 1

    def test_rule3_identity(self):
        check = validate_spell_rules("desert", "desert")
        assert not check.passed and check.failed_rule == 3

    def test_spelling_fix_passes(self):
        assert validate_spell_rules("desert", "dessert").passed

    def test_case_insensitive(self):
        assert validate_spell_rules("Desert", "DESERT").failed_rule == 3


def spell_doc():
    cues = (
        make_cue(1, 0, 2000, ["We are baking a cake today."]),
        make_cue(2, 2000, 4000, ["the desert was delicious"]),
    )
    return SubtitleDoc(format=SubtitleFormat.SRT, cues=cues)


class TestSpelling:
    def test_dessert_example(self):
        doc = spell_doc()
        text = doc.cues[1].text
        span = [text.index("desert"), text.index("desert") + len("desert")]
        table = mock_table_for_doc(
            doc,
            spell_findings={2: [{"word": "desert", "char_span": span,
                                 "rationale": "cooking context"}]},
            spell_fixes={(2, "desert"): ["dessert"]},
        )
        issues = spelling_issues(doc.cues[1], doc.cues[:1], MockLlm(table))
        assert len(issues) == 1
        assert issues[0].suggestion == ReplaceText(lines=("the dessert was delicious",))
        assert issues[0].evidence["candidates"] == ["dessert"]

    def test_no_findings(self):
        doc = spell_doc()
        table = mock_table_for_doc(doc)
        assert spelling_issues(doc.cues[1], doc.cues[:1], MockLlm(table)) == []

    def test_rule_rejected_candidate_drops_finding(self):
        doc = spell_doc()
        text = doc.cues[1].text
        span = [text.index("desert"), text.index("desert") + len("desert")]
        table = mock_table_for_doc(
            doc,
            spell_findings={2: [{"word": "desert", "char_span": span,
                                 "rationale": "context"}]},
            spell_fixes={(2, "desert"): ["deserty"]},
        )
        assert spelling_issues(doc.cues[1], doc.cues[:1], MockLlm(table)) == []


class TestMasking:
    def test_hand_offsets(self):
        assert mask_text("you idiot!", [(4, 9)]) == "you *****!"

    def test_length_and_outside_preserved(self):
        original = "keep this word safe"
        masked = mask_text(original, [(5, 9)])
        assert len(masked) == len(original)
        assert masked[:5] == original[:5] and masked[9:] == original[9:]

    def test_span_crossing_line_rejected(self):
        with pytest.raises(ValueError, match="line boundary"):
            mask_text("ab\ncd", [(1, 4)])

    def test_detect_harmful(self):
        cue = make_cue(1, 0, 1000, ["you idiot!"])
        doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=(cue,))
        table = mock_table_for_doc(doc, harm_spans={1: [{"start": 4, "end": 9}]})
        issue = detect_harmful(cue, MockLlm(table))
        assert issue.kind is IssueKind.HARMFUL_WORD
        assert issue.suggestion == MaskSpans(spans=((4, 9),))
        assert issue.evidence["masked_preview"] == "you *****!"

    def test_clean_cue(self):
        cue = make_cue(1, 0, 1000, ["hello"])
        doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=(cue,))
        issue = detect_harmful(cue, MockLlm(mock_table_for_doc(doc)))
        assert issue is None


class TestTimeSync:
    def test_identical_no_issue(self):
        cue = make_cue(1, 0, 1000, ["hello world"])
        words = [word("hello", 0, 400), word("world", 400, 900)]
        assert detect_time_sync(cue, words) is None

    def test_half_similarity_flagged(self):
        cue = make_cue(1, 0, 1000, ["hello world"])
        words = [word("hello", 0, 400), word("there", 400, 900)]
        issue = detect_time_sync(cue, words)
        assert issue is not None
        assert issue.evidence["similarity"] == pytest.approx(0.5)
        assert issue.suggestion == ReplaceText(lines=("hello there",))

    def test_disjoint_vocab(self):
        cue = make_cue(1, 0, 1000, ["alpha beta"])
        words = [word("gamma", 0, 500)]
        issue = detect_time_sync(cue, words)
        assert issue.evidence["similarity"] == 0.0

    def test_empty_transcript_nonempty_cue(self):
        cue = make_cue(1, 0, 1000, ["hello"])
        issue = detect_time_sync(cue, [])
        assert issue is not None
        assert issue.evidence["similarity"] == 0.0
        assert issue.suggestion is None

    def test_boundary_exact_threshold_passes(self):
        # similarity computes to exactly 0.7; "falls below" is strict
        cue = make_cue(1, 0, 1000, ["aa bb"])
        words = [word("aa", i * 10, i * 10 + 9) for i in range(4)]
        words += [word("bb", 40 + i * 10, 49 + i * 10) for i in range(3)]
        words += [word("cc", 70 + i * 10, 79 + i * 10) for i in range(5)]
        assert detect_time_sync(cue, words, threshold=0.7) is None

    def test_boundary_just_below_flags(self):
        cue = make_cue(1, 0, 1000, ["aa bb"])
        words = [word("aa", i * 10, i * 10 + 9) for i in range(4)]
        words += [word("bb", 40 + i * 10, 49 + i * 10) for i in range(3)]
        words += [word("cc", 70 + i * 10, 79 + i * 10) for i in range(5)]
        issue = detect_time_sync(cue, words, threshold=math.nextafter(0.7, 1.0))
        assert issue is not None


class TestNonWord:
    def test_music_tagged(self):
        cue = make_cue(1, 0, 1000, ["♪"])
        events = [EventScore("Music", 0.71), EventScore("Speech", 0.1)]
        issue = detect_non_word(cue, events)
        assert issue.suggestion == AppendTag(label="music")

    def test_below_threshold(self):
        cue = make_cue(1, 0, 1000, ["hello"])
        events = [EventScore("Speech", 0.9), EventScore("Music", 0.29)]
        assert detect_non_word(cue, events) is None

    def test_boundary_exact_threshold(self):
        cue = make_cue(1, 0, 1000, ["hello"])
        assert detect_non_word(cue, [EventScore("Music", 0.3)]) is None
        assert detect_non_word(cue, [EventScore("Music", 0.301)]) is not None

    def test_idempotent_when_tag_present(self):
        cue = make_cue(1, 0, 1000, ["♪", "[music]"])
        events = [EventScore("Music", 0.9)]
        assert detect_non_word(cue, events) is None

    def test_speech_never_tagged(self):
        cue = make_cue(1, 0, 1000, ["hello"])
        assert detect_non_word(cue, [EventScore("Speech", 0.99)]) is None


class TestSegmentationDetect:
    def test_fifty_char_line_passes(self):
        cue = make_cue(1, 0, 1000, ["a" * 50])
        assert detect_segmentation(cue) is None

    def test_fifty_one_char_line_flags(self):
        cue = make_cue(1, 0, 5000, ["ab " * 17])  # 51 chars
        issue = detect_segmentation(cue)
        assert issue is not None
        assert issue.kind is IssueKind.SEGMENTATION

    def test_two_thirty_char_lines_pass(self):
        cue = make_cue(1, 0, 1000, ["b" * 30, "c" * 30])
        assert detect_segmentation(cue) is None


class TestSplitCue:
    def test_identity_when_short(self):
        cue = make_cue(1, 0, 1000, ["short text"])
        assert split_cue(cue) == [cue]

    def test_word_timestamp_realignment(self):
        text = "the quick brown foxes jumped over the lazy world again and again tonight"
        cue = make_cue(3, 10_000, 16_000, [text])
        words = [
            word("the", 0, 100), word("quick", 100, 400), word("brown", 400, 700),
            word("foxes", 700, 1000), word("jumped", 1000, 1300), word("over", 1300, 1450),
            word("the", 1450, 1500), word("lazy", 1500, 1600), word("world", 1600, 1800),
            word("again", 1800, 2500), word("and", 2500, 3000), word("again", 3000, 3500),
            word("tonight", 3500, 5900),
        ]
        parts = split_cue(cue, words)
        assert len(parts) == 2
        assert parts[0].lines[0].endswith("world")
        assert parts[0].end_ms == 10_000 + 1800
        assert parts[1].start_ms == 10_000 + 1800
        assert parts[1].end_ms == 16_000

    def test_proportional_fallback_without_transcript(self):
        cue = make_cue(1, 0, 9000, ["x" * 30 + " " + "y" * 30 + " " + "z" * 28])
        parts = split_cue(cue, [])
        assert len(parts) == 3
        assert parts[0].start_ms == 0 and parts[-1].end_ms == 9000
        for a, b in zip(parts, parts[1:]):
            assert a.end_ms == b.start_ms

    def test_long_word_hard_split(self):
        cue = make_cue(1, 0, 5000, ["a" * 120])
        parts = split_cue(cue)
        assert all(len(p.lines[0]) <= 50 for p in parts)
        assert "".join(p.lines[0].replace(" ", "") for p in parts) == "a" * 120

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.text(alphabet="abcdefg", min_size=1, max_size=12), min_size=1,
                    max_size=40),
           st.integers(min_value=0, max_value=100_000),
           st.integers(min_value=2_000, max_value=120_000))
    def test_split_properties(self, words_list, start, duration):
        cue = make_cue(1, start, start + duration, [" ".join(words_list)])
        parts = split_cue(cue)
        # text preserved
        assert " ".join(" ".join(p.lines) for p in parts) == " ".join(cue.lines)
        # CPL bound
        for p in parts:
            assert all(len(line) <= 50 for line in p.lines)
        # exact tiling
        assert parts[0].start_ms == cue.start_ms
        assert parts[-1].end_ms == cue.end_ms
        for a, b in zip(parts, parts[1:]):
            assert a.end_ms == b.start_ms
            assert a.start_ms < a.end_ms


class TestRunLanguagePass:
    def build(self, tmp_path):
        cues = (
            make_cue(1, 0, 2000, ["We are baking a cake today."]),
            make_cue(2, 2000, 4000, ["the desert was delicious"]),
            make_cue(3, 4000, 10_000, ["ab " * 17]),
        )
        doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=cues)
        assets = tmp_path / "assets"
        for cue in cues:
            write_transcript(assets, cue.id, [
                {"text": t, "start_ms": 100 * i, "end_ms": 100 * i + 90, "confidence": 1.0}
                for i, t in enumerate(cue.text.split())])
            write_events(assets, cue.id, [{"label": "Speech", "score": 0.9}])
        clips = {c.id: silence_clip(c.id, c.duration_ms) for c in cues}
        return doc, assets, clips

    def test_clean_doc_one_segmentation(self, tmp_path):
        doc, assets, clips = self.build(tmp_path)
        llm = MockLlm(mock_table_for_doc(doc))
        issues, skips = run_language_pass(
            doc, llm, AssetAsr(assets), AssetEvents(assets), clips)
        assert [i.kind for i in issues] == [IssueKind.SEGMENTATION]
        assert skips == []

    def test_llm_failure_skips_not_aborts(self, tmp_path):
        doc, assets, clips = self.build(tmp_path)
        issues, skips = run_language_pass(
            doc, MockLlm({}), AssetAsr(assets), AssetEvents(assets), clips)
        assert [i.kind for i in issues] == [IssueKind.SEGMENTATION]
        assert {(s.cue_id, s.detector) for s in skips} == {
            (c.id, d) for c in doc.cues for d in ("spelling", "harmful")}

    def test_detector_toggles(self, tmp_path):
        doc, assets, clips = self.build(tmp_path)
        llm = MockLlm(mock_table_for_doc(doc))
        options = LangOptions(spelling=False, harmful=False, timesync=False,
                              nonword=False, segmentation=False)
        issues, skips = run_language_pass(
            doc, llm, AssetAsr(assets), AssetEvents(assets), clips, options)
        assert issues == [] and skips == []

    def test_deterministic_and_parallel_equivalent(self, tmp_path):
        doc, assets, clips = self.build(tmp_path)
        llm = MockLlm(mock_table_for_doc(doc))
        runs = [run_language_pass(doc, llm, AssetAsr(assets), AssetEvents(assets),
                                  clips, LangOptions(parallelism=p))
                for p in (1, 1, 4)]
        assert runs[0] == runs[1] == runs[2]
