import json
import re

import pytest
from hypothesis import given, strategies as st

from odx.catalog import DRUG_NDC
from odx.claims import CodeSystem, ValidationError
from odx.cohort import build_task_set
from odx.serialize import (
    ALL_FIELDS,
    DRUG_NAME,
    PRIMARY_DX,
    SECONDARY_DX,
    THERA_CLASS,
    CodeDictionary,
    FeatureKey,
    FieldMask,
    PromptFormat,
    default_dictionary,
    read_prompts,
    render_prompt,
    summarize_history,
    write_prompts,
)
from odx.tokens import estimate_tokens

from conftest import dx, enc, patient, px, rx

DD, DC = PromptFormat.DETAILED_DESCRIPTIVE, PromptFormat.DETAILED_CODE
SD, SC = PromptFormat.SUMMARIZED_DESCRIPTIVE, PromptFormat.SUMMARIZED_CODE
MASKS = [FieldMask(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1) if a or b or c]


def _instance(encounters, scripts=(), window=7):
    # controls align on their last encounter; add one after the history of interest
    last = max(e.date for e in encounters)
    tail = enc("ZZ", (last - encounters[0].date).days + 2 + (encounters[0].date - enc("x", 0).date).days)
    return build_task_set([patient("A", list(encounters) + [tail], scripts)], window)[0]


def test_field_label_descriptive():
    inst = _instance([enc("1", 0, [dx("N189")]), enc("2", 3, [dx("I10")])])
    body = render_prompt(inst, DD).body
    assert '"diagnosis code"' in body and "DIAG_CD" not in body
    assert "Chronic kidney disease, unspecified" in body
    assert '"DIAG_CD"' in render_prompt(inst, DC).body


def test_visits_included_no_truncation():
    inst = _instance([enc(str(i), i, [dx("I10")]) for i in range(3)])
    assert render_prompt(inst, DD, 30).visits_included == 3
    assert render_prompt(inst, DD, 2).visits_included == 2


def test_instruction_mentions_window():
    inst = _instance([enc("1", 0, [dx("I10")])], window=30)
    doc = render_prompt(inst, SC)
    assert "within the next 30 days" in doc.instruction
    assert "overdose_risk" in doc.instruction
    assert doc.token_estimate == estimate_tokens(doc.instruction + doc.body)


def test_custom_template_dir(tmp_path):
    (tmp_path / "summarized_code.txt").write_text("Window {window_days} days.\n")
    inst = _instance([enc("1", 0, [dx("I10")])])
    assert render_prompt(inst, SC, templates_dir=tmp_path).instruction == "Window 7 days."
    with pytest.raises(FileNotFoundError):
        render_prompt(inst, DD, templates_dir=tmp_path)


def test_all_disabled_mask():
    with pytest.raises(ValidationError):
        FieldMask(False, False, False)
    with pytest.raises(ValidationError):
        FieldMask.parse("dx,foo")
    assert FieldMask.parse("all") == ALL_FIELDS
    assert FieldMask.parse("rx, dx").name == "dx,rx"


def test_max_visits_positive():
    inst = _instance([enc("1", 0, [dx("I10")])])
    with pytest.raises(ValidationError):
        render_prompt(inst, DD, 0)


def test_summarize_counts():
    inst = _instance([enc("1", 0, [dx("I10"), dx("N189")]), enc("2", 5, [dx("E119"), dx("N189")])],
                     [rx(1), rx(2, "X", "Y", "1 MG", "ORAL")])
    counts = summarize_history(inst)
    n189 = sum(n for k, n in counts.items() if k.value == "ICD10-DX:N189")
    assert n189 == 2
    assert counts[FeatureKey(PRIMARY_DX, "ICD10-DX:I10")] == 1
    assert counts[FeatureKey(PRIMARY_DX, "ICD10-DX:E119")] == 1
    assert counts[FeatureKey(SECONDARY_DX, "ICD10-DX:N189")] == 2  # items sort within a visit
    assert counts[FeatureKey(DRUG_NAME, "Sertraline")] == 1
    assert counts[FeatureKey(THERA_CLASS, "Y|1 MG|ORAL")] == 1
    assert list(counts) == sorted(counts)
    no_rx = summarize_history(inst, mask=FieldMask(True, True, False))
    assert not any(k.feature_type in (DRUG_NAME, THERA_CLASS) for k in no_rx)


def test_prescription_span():
    # fills before the first included visit are dropped with it
    inst = _instance([enc(str(i), 10 * i, [dx("I10")]) for i in range(5)], [rx(5), rx(25), rx(35)])
    d = json.loads(render_prompt(inst, DC, 2).body)
    assert [p["FILLDATE"] for p in d["PRESCRIPTIONS"]] == ["2021-02-05"]
    d = json.loads(render_prompt(inst, DC, 30).body)
    assert len(d["PRESCRIPTIONS"]) == 3


def test_dictionary_fallback():
    d = CodeDictionary({"ICD10-DX": {"I10": "Hypertension"}}, {"DIAG_CD": "dx"})
    assert d.describe(CodeSystem.ICD10_DX, "I10") == "Hypertension"
    assert d.describe(CodeSystem.ICD10_DX, "ZZZ9") == "ZZZ9"
    assert d.label("PROC_CD") == "PROC_CD"
    assert d.encode(CodeSystem.ICD10_DX, "Hypertension") == "I10"
    inst = _instance([enc("1", 0, [dx("I10"), dx("Q999")])])
    body = render_prompt(inst, DD, dictionary=d).body
    assert '"dx": ["Hypertension", "Q999"]' in body


def test_dictionary_file(tmp_path):
    path = tmp_path / "dict.json"
    path.write_text(json.dumps({"codes": {"CPT": {"99213": "office visit"}}, "fields": {}}))
    assert CodeDictionary.load(path).describe("CPT", "99213") == "office visit"


def test_code_formats_print_codes():
    inst = _instance([enc("1", 0, [dx("I10")])], [rx(0, "OXYCODONE HCL", "Analgesics – Opioid", "5 MG", "ORAL")])
    body = render_prompt(inst, DC).body
    assert DRUG_NDC["OXYCODONE HCL"] in body and '"THERCLS": "060"' in body
    assert "OXYCODONE" in render_prompt(inst, DD).body


def test_prompts_round_trip(tmp_path, small_instances):
    docs = [render_prompt(i, f, 10) for i in small_instances[:5] for f in PromptFormat]
    write_prompts(docs, tmp_path / "p.jsonl")
    assert read_prompts(tmp_path / "p.jsonl") == docs
    line = json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])
    assert {"instance_id", "format", "window_days", "token_estimate", "prompt_text"} <= set(line)


# --- properties over generated instances ------------------------------------------------

instance_idx = st.integers(0, 59)


@given(instance_idx, st.sampled_from(list(PromptFormat)), st.integers(1, 45), st.sampled_from(MASKS))
def test_render_deterministic(small_instances, i, fmt, n, mask):
    inst = small_instances[i % len(small_instances)]
    a = render_prompt(inst, fmt, n, mask)
    assert a == render_prompt(inst, fmt, n, mask)
    assert a.visits_included <= n


@given(instance_idx, st.integers(1, 45))
def test_truncation_keeps_latest(small_instances, i, n):
    inst = small_instances[i % len(small_instances)]
    body = json.loads(render_prompt(inst, DC, n).body)
    want = sorted(inst.history.encounters, key=lambda e: (e.date, e.encounter_id))[-n:]
    got = body["ENCOUNTERS"]
    assert [v["SVCDATE"] for v in got] == [e.date.isoformat() for e in want]
    assert [v["DIAG_CD"] for v in got] == [[d.code for d in e.diagnoses] for e in want]


def _tokens_present(inst, body, fmt):
    d = default_dictionary()
    desc = fmt in (DD, SD)
    out = {"dx": set(), "proc": set(), "rx": set()}
    for e in inst.history.encounters:
        for it in e.diagnoses:
            out["dx"].add(d.describe(it.system, it.code) if desc else it.code)
        for it in e.procedures:
            out["proc"].add(d.describe(it.system, it.code) if desc else it.code)
    for r in inst.history.prescriptions:
        out["rx"].add(r.drug_name if desc else d.encode(CodeSystem.NDC_NAME, r.drug_name))

    def present(s):
        return re.search(r"(?<![\w.])" + re.escape(s) + r"(?![\w.])", body) is not None

    return {k: any(present(s) for s in v) for k, v in out.items()}


@given(instance_idx, st.sampled_from(list(PromptFormat)), st.sampled_from(MASKS))
def test_mask_soundness(small_instances, i, fmt, mask):
    inst = small_instances[i % len(small_instances)]
    body = render_prompt(inst, fmt, 30, mask).body
    seen = _tokens_present(inst, body, fmt)
    for name, on in (("dx", mask.diagnoses), ("proc", mask.procedures), ("rx", mask.prescriptions)):
        if not on:
            assert not seen[name], name


def _shape(obj):
    if isinstance(obj, dict):
        return [("{}", _shape(v)) for v in obj.values()]
    if isinstance(obj, list):
        return ["[]", len(obj), [_shape(v) for v in obj]]
    return "leaf"


@given(instance_idx, st.integers(1, 40), st.sampled_from(MASKS))
def test_code_and_descriptive_share_structure(small_instances, i, n, mask):
    inst = small_instances[i % len(small_instances)]
    a = json.loads(render_prompt(inst, DD, n, mask).body)
    b = json.loads(render_prompt(inst, DC, n, mask).body)
    assert _shape(a) == _shape(b)


def test_code_format_is_shorter(small_instances):
    for inst in small_instances:
        assert render_prompt(inst, DC).token_estimate < render_prompt(inst, DD).token_estimate


# --- token estimator ---------------------------------------------------------------

def test_estimate_empty():
    assert estimate_tokens("") == 0
    assert estimate_tokens("a") == 1


@given(st.text(max_size=200), st.text(max_size=200))
def test_estimate_concat_monotone(a, b):
    assert estimate_tokens(a + b) >= max(estimate_tokens(a), estimate_tokens(b))


@given(st.text(max_size=300))
def test_estimate_prefix_monotone(s):
    values = [estimate_tokens(s[:k]) for k in range(0, len(s) + 1, 7)] + [estimate_tokens(s)]
    assert values == sorted(values)


PARAGRAPH = (
    "The clinic reviewed forty-two charts during the spring audit and found that most follow-up "
    "appointments were booked within two weeks of discharge. Staff noted that patients taking several "
    "medications often missed refills, so the pharmacy began calling them three days before each due date. "
    "Early results suggest fewer emergency visits, although the sample is small and the trend may change. More data arrive in June."
)


def _reference_encoding():
    tiktoken = pytest.importorskip("tiktoken")
    for name in ("cl100k_base_offline", "cl100k_base"):
        try:
            return tiktoken.get_encoding(name)
        except Exception:  # noqa: BLE001 - missing plugin or no network for the blob
            continue
    pytest.skip("no offline BPE reference available")


def test_estimate_close_to_reference_on_prose():
    enc_ = _reference_encoding()
    text = PARAGRAPH[:400]
    assert len(text) == 400
    ref = len(enc_.encode(text))
    assert abs(estimate_tokens(text) - ref) <= 0.2 * ref


def test_estimate_close_to_reference_on_prompts(small_instances):
    enc_ = _reference_encoding()
    for fmt in PromptFormat:
        docs = [render_prompt(i, fmt) for i in small_instances[:20]]
        est = sum(d.token_estimate for d in docs)
        ref = sum(len(enc_.encode(d.instruction + d.body)) for d in docs)
        assert abs(est - ref) <= 0.2 * ref, fmt
