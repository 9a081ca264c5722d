import json

from vsat.lang_issues import build_harm_request, build_spell_detect_request, build_spell_fix_request
from vsat.model_backends import prompt_key
from vsat.subtitle_core import Cue


def make_cue(i, start, end, lines, **kw):
    return Cue(id=i, start_ms=start, end_ms=end, lines=tuple(lines), **kw)


def mock_table_for_doc(doc, spell_findings=None, harm_spans=None, spell_fixes=None,
                       context_window=3):
    """Build a complete mock-LLM table covering every cue of a document.

    ``spell_findings``/``harm_spans`` map cue_id -> response payload for the
    planted cues; everything else answers empty.  ``spell_fixes`` maps
    (cue_id, word) -> candidates list.
    """
    spell_findings = spell_findings or {}
    harm_spans = harm_spans or {}
    spell_fixes = spell_fixes or {}
    table = {}
    for i, cue in enumerate(doc.cues):
        context = doc.cues[max(0, i - context_window):i]
        detect_req = build_spell_detect_request(cue, context, context_window)
        findings = spell_findings.get(cue.id, [])
        table[prompt_key(detect_req)] = {"findings": findings}
        for f in findings:
            fix_req = build_spell_fix_request(cue, f["word"], f["rationale"])
            candidates = spell_fixes.get((cue.id, f["word"]), [])
            table[prompt_key(fix_req)] = {"candidates": candidates}
        harm_req = build_harm_request(cue)
        table[prompt_key(harm_req)] = {"spans": harm_spans.get(cue.id, [])}
    return table


def write_transcript(assets_root, cue_id, words):
    d = assets_root / str(cue_id)
    d.mkdir(parents=True, exist_ok=True)
    d.joinpath("transcript.json").write_text(json.dumps(words))


def write_events(assets_root, cue_id, events):
    d = assets_root / str(cue_id)
    d.mkdir(parents=True, exist_ok=True)
    d.joinpath("events.json").write_text(json.dumps(events))
