import csv
import itertools
import random

import pytest
from hypothesis import given, strategies as st

from odx.claims import (
    CodedItem,
    CodeSystem,
    IngestReport,
    Prescription,
    ValidationError,
    is_exposure_diagnosis,
    is_exposure_prescription,
    is_overdose_diagnosis,
    normalize_code,
    parse_claims_tables,
    read_claims_directory,
)

ICD10, ICD9 = CodeSystem.ICD10_DX, CodeSystem.ICD9_DX


@pytest.mark.parametrize("raw,system,want", [
    ("T40.2X5A", ICD10, "T402X5A"),
    ("t402x5a", ICD10, "T402X5A"),
    ("304.0", ICD9, "3040"),
    ("  e11.9 ", ICD10, "E119"),
    ("99213", CodeSystem.CPT, "99213"),
    ("a1.b", CodeSystem.CPT, "A1.B"),  # dots only stripped for ICD
])
def test_normalize_code(raw, system, want):
    assert normalize_code(raw, system) == want


@pytest.mark.parametrize("raw", ["", "   ", None])
def test_normalize_code_rejects_empty(raw):
    with pytest.raises(ValidationError):
        normalize_code(raw, ICD10)


@given(st.text(alphabet="abcXYZ0129. -", min_size=1, max_size=12).filter(lambda s: s.strip()),
       st.sampled_from(list(CodeSystem)))
def test_normalize_is_idempotent(raw, system):
    try:
        once = normalize_code(raw, system)
    except ValidationError:
        assert system.is_icd and not raw.strip().replace(".", "")
        return
    assert normalize_code(once, system) == once


@pytest.mark.parametrize("code,system,want", [
    ("T402X1A", ICD10, True),
    ("T402X5A", ICD10, False),
    ("T402X6A", ICD10, False),
    ("T510X1", ICD10, False),
    ("T360X1A", ICD10, True),
    ("T509", ICD10, True),       # too short for an intent character
    ("T35", ICD10, False),
    ("96501", ICD9, True),
    ("E8501", ICD9, True),
    ("E8510", ICD9, False),
    ("9670", ICD9, False),
])
def test_overdose_rule_examples(code, system, want):
    assert is_overdose_diagnosis(CodedItem(system, code)) is want


def test_overdose_rule_ignores_non_diagnosis_systems():
    assert not is_overdose_diagnosis(CodedItem(CodeSystem.CPT, "T402X1A"))
    assert not is_exposure_diagnosis(CodedItem(CodeSystem.ICD9_PCS, "3040"))


@pytest.mark.parametrize("code,system,want", [
    ("F1123", ICD10, True),
    ("F1410", ICD10, True),
    ("F15929", ICD10, True),
    ("F12", ICD10, False),
    ("E119", ICD10, False),
    ("30400", ICD9, True),
    ("30580", ICD9, True),
    ("3041", ICD9, False),
])
def test_exposure_rule_examples(code, system, want):
    assert is_exposure_diagnosis(CodedItem(system, code)) is want


@pytest.mark.parametrize("cls,want", [
    ("Analgesics – Opioid", True),
    ("Analgesics - Opioid", True),
    ("  Analgesics   –  Opioid ", True),
    ("ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents", True),
    ("Antihyperlipidemic Drugs, NEC", False),
    ("Analgesics – Opioid Combinations", False),
])
def test_exposure_prescription(cls, want):
    assert is_exposure_prescription(Prescription(None, "x", cls)) is want


# --- ingestion ----------------------------------------------------------------------

def _fixture_tables():
    enc = [
        {"ENROLID": "P1", "ENCOUNTERID": "E1", "SVCDATE": "2021-01-05"},
        {"ENROLID": "P1", "ENCOUNTERID": "E2", "SVCDATE": "2021-01-02"},
        {"ENROLID": "P2", "ENCOUNTERID": "E1", "SVCDATE": "2021-03-01"},
        {"ENROLID": "P3", "ENCOUNTERID": "E9", "SVCDATE": "2021-02-30"},  # malformed
        {"ENROLID": "P3", "ENCOUNTERID": "E1", "SVCDATE": "2021-04-01"},
        {"ENROLID": "P3", "ENCOUNTERID": "E2", "SVCDATE": "2021-04-01"},
        {"ENROLID": "P3", "ENCOUNTERID": "E3", "SVCDATE": "2021-05-01"},
    ]
    dxr = [
        {"ENROLID": "P1", "ENCOUNTERID": "E1", "DIAG_CD": "N18.9", "DIAG_SYS": "ICD10-DX"},
        {"ENROLID": "P1", "ENCOUNTERID": "E1", "DIAG_CD": "E11.9", "DIAG_SYS": "ICD10-DX"},
        {"ENROLID": "P2", "ENCOUNTERID": "E1", "DIAG_CD": "F1123", "DIAG_SYS": "ICD10-DX"},
        {"ENROLID": "P2", "ENCOUNTERID": "E7", "DIAG_CD": "I10", "DIAG_SYS": "ICD10-DX"},  # dangling
        {"ENROLID": "P3", "ENCOUNTERID": "E3", "DIAG_CD": "I10", "DIAG_SYS": "ICD10-DX"},
    ]
    pxr = [
        {"ENROLID": "P1", "ENCOUNTERID": "E1", "PROC_CD": "99213", "PROC_SYS": "CPT"},
        {"ENROLID": "P3", "ENCOUNTERID": "E9", "PROC_CD": "99213", "PROC_SYS": "CPT"},  # parent rejected
    ]
    rxr = [
        {"ENROLID": "P1", "FILLDATE": "2021-01-03", "DRUGNAME": "Oxycodone", "THERCLS": "Analgesics – Opioid",
         "STRENGTH": "5 MG", "ROUTE": "ORAL"},
        {"ENROLID": "P3", "FILLDATE": "2021-04-02", "DRUGNAME": "Sertraline", "THERCLS": "x",
         "STRENGTH": "", "ROUTE": ""},
        {"ENROLID": "P3", "FILLDATE": "2021-03-02", "DRUGNAME": "Sertraline", "THERCLS": "x",
         "STRENGTH": "", "ROUTE": ""},
        {"ENROLID": "P2", "FILLDATE": "yesterday", "DRUGNAME": "A", "THERCLS": "x", "STRENGTH": "", "ROUTE": ""},
    ]
    demo = [{"ENROLID": p, "AGE": "40", "SEX": "M"} for p in ("P1", "P2", "P3")]
    return dxr, pxr, enc, rxr, demo


def test_fixture_counts_and_join():
    report = IngestReport()
    dxr, pxr, enc, rxr, demo = _fixture_tables()
    pts = {p.enrol_id: p for p in parse_claims_tables(dxr, pxr, enc, rxr, demo, report)}
    # counts derived by hand from the rows above
    assert {k: len(p.encounters) for k, p in pts.items()} == {"P1": 2, "P2": 1, "P3": 3}
    assert {k: len(p.prescriptions) for k, p in pts.items()} == {"P1": 1, "P2": 0, "P3": 2}
    e1 = next(e for e in pts["P1"].encounters if e.encounter_id == "E1")
    assert [d.code for d in e1.diagnoses] == ["E119", "N189"]
    assert [p.code for p in e1.procedures] == ["99213"]
    assert [e.encounter_id for e in pts["P1"].encounters] == ["E2", "E1"]
    assert [e.encounter_id for e in pts["P3"].encounters] == ["E1", "E2", "E3"]  # same-day tie by id
    assert [r.fill_date.isoformat() for r in pts["P3"].prescriptions] == ["2021-03-02", "2021-04-02"]
    reasons = sorted((r.table, r.reason) for r in report.rejections)
    assert reasons == [
        ("diagnosis", "dangling encounter id"),
        ("encounter", "malformed date"),
        ("prescription", "malformed date"),
        ("procedure", "dangling encounter id"),
    ]


def test_empty_prescription_table():
    dxr, pxr, enc, _, demo = _fixture_tables()
    pts = parse_claims_tables(dxr, pxr, enc, [], demo)
    assert all(p.prescriptions == () for p in pts)


@given(st.randoms(use_true_random=False))
def test_parse_invariant_under_row_permutation(rnd):
    tables = _fixture_tables()
    base = parse_claims_tables(*tables)
    shuffled = []
    for t in tables:
        t = list(t)
        rnd.shuffle(t)
        shuffled.append(t)
    assert parse_claims_tables(*shuffled) == base


def test_encounters_sorted(small_population):
    for p in small_population.patients:
        dates = [e.date for e in p.encounters]
        assert dates == sorted(dates)


def test_read_directory_missing_column(tmp_path):
    for name, header in [("encounter.csv", "ENROLID,ENCOUNTERID"), ("diagnosis.csv", "ENROLID,ENCOUNTERID,DIAG_CD,DIAG_SYS"),
                         ("procedure.csv", "ENROLID,ENCOUNTERID,PROC_CD,PROC_SYS"),
                         ("demographics.csv", "ENROLID,AGE,SEX")]:
        (tmp_path / name).write_text(header + "\n")
    with pytest.raises(ValidationError, match="missing columns"):
        read_claims_directory(tmp_path)


# --- exhaustive oracle -------------------------------------------------------------

ICD9_OD = ("965", "968", "969", "970", "E850", "E853", "E854", "E858")
ICD9_EXPOSURE = ("3040", "3042", "3044", "3047", "3055", "3056", "3057", "3058")


def exhaustive_corpus(seed=0):
    """(CodedItem, overdose?, exposure?) with truth written out table-style."""
    rng = random.Random(seed)
    rows = []
    for stem in range(30, 56):
        for sub, placeholder in itertools.product("0123456789", ("X", "0")):
            for intent in "123456":
                for ext in ("", "A", "D", "S"):
                    code = f"T{stem:02d}{sub}{placeholder}{intent}{ext}"
                    truth = 36 <= stem <= 50 and intent not in ("5", "6")
                    rows.append((CodedItem(ICD10, code), truth, False))
        rows.append((CodedItem(ICD10, f"T{stem:02d}"), 36 <= stem <= 50, False))
    for prefix in ICD9_OD + ICD9_EXPOSURE + ("966", "E851", "3041", "3050"):
        for _ in range(20):
            code = prefix + "".join(rng.choice("0123456789") for _ in range(rng.randint(0, 2)))
            rows.append((CodedItem(ICD9, code), prefix in ICD9_OD, prefix in ICD9_EXPOSURE))
    for letter_code in ("F11", "F14", "F15", "F10", "F12", "F16"):
        for tail in ("10", "20", "23", "929", ""):
            rows.append((CodedItem(ICD10, letter_code + tail), False, letter_code in ("F11", "F14", "F15")))
    return rows


def test_code_rules_match_oracle():
    rows = exhaustive_corpus()
    assert len(rows) > 5000
    bad = [(it.code, want_od, want_ex) for it, want_od, want_ex in rows
           if is_overdose_diagnosis(it) != want_od or is_exposure_diagnosis(it) != want_ex]
    assert bad == []
