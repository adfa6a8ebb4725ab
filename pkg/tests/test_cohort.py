from datetime import date, timedelta

import pytest
from hypothesis import given, strategies as st

from odx.claims import CodeSystem, PatientRecord, ValidationError, is_overdose_diagnosis
from odx.cohort import (
    NO_OVERDOSE,
    OVERDOSE,
    CohortLabel,
    PredictionWindow,
    TaskSetSummary,
    align_case,
    align_control,
    build_task_set,
    check_eligibility,
    classify_cohort,
    read_instances,
    write_instances,
)

from conftest import D0, dx, enc, patient, px, rx

OPIOID = "Analgesics – Opioid"


def _filler(n, start=0, step=30):
    return [enc(f"F{i:02d}", start + i * step, [dx("I10")]) for i in range(n)]


# --- eligibility -----------------------------------------------------------------

def test_eligible_basic():
    # age 40, span 400 days, 6 events
    p = patient("A", [enc("1", 0, [dx("I10")]), enc("2", 400, [dx("E119"), dx("N189")], [px("99213")])],
                [rx(10), rx(20)])
    assert p.n_events() == 6
    assert check_eligibility(p)


def test_underage():
    p = patient("A", [enc("1", 0, [dx("I10")] * 1), enc("2", 400, [dx("E119")])], [rx(1), rx(2), rx(3)], age=17)
    assert not check_eligibility(p)


def test_span_boundary_inclusive():
    events = [enc("1", 0, [dx("I10"), dx("E119")]), enc("2", 365, [dx("I10"), dx("E119"), dx("N189")])]
    assert check_eligibility(patient("A", events))
    events[1] = enc("2", 364, [dx("I10"), dx("E119"), dx("N189")])
    assert not check_eligibility(patient("A", events))


def test_too_few_events():
    assert not check_eligibility(patient("A", [enc("1", 0, [dx("I10")]), enc("2", 500, [dx("I10")])]))


def test_prescription_extends_span():
    p = patient("A", [enc("1", 0, [dx("I10"), dx("E119")])], [rx(200), rx(365), rx(100)])
    assert check_eligibility(p)


# --- classification ------------------------------------------------------------------

def test_classify_examples():
    assert classify_cohort(patient("A", [enc("1", 0, [dx("T402X1A")])])) is CohortLabel.CASE
    adverse = patient("B", [enc("1", 0, [dx("T402X5A")])], [rx(3, "Oxycodone", OPIOID)])
    assert classify_cohort(adverse) is CohortLabel.CONTROL_EXPOSED
    assert classify_cohort(patient("C", [enc("1", 0, [dx("F1120")])])) is CohortLabel.CONTROL_EXPOSED
    assert classify_cohort(patient("D", [enc("1", 0, [dx("I10")])], [rx(1)])) is CohortLabel.CONTROL_NONEXPOSED


@given(st.permutations(range(6)))
def test_classify_order_invariant(perm):
    encs = [enc(str(i), i, [dx(code)]) for i, code in enumerate(["I10", "E119", "F1120", "N189", "T402X6A", "Z23"])]
    shuffled = [encs[i] for i in perm]
    assert classify_cohort(patient("A", shuffled)) is CohortLabel.CONTROL_EXPOSED


# --- alignment -------------------------------------------------------------------------

def _case(gap, od_day=600):
    return patient("K", _filler(5) + [enc("P", od_day - gap, [dx("E119")]), enc("OD", od_day, [dx("T402X1A")])],
                   [rx(od_day - gap), rx(od_day - 1)])


def test_align_case_example():
    # overdose 2022-07-30, previous encounter 2022-07-25
    od, prev = date(2022, 7, 30), date(2022, 7, 25)
    p = patient("K", [enc("1", 0, [dx("I10")]), enc("2", (prev - D0).days, [dx("I10")]),
                      enc("3", (od - D0).days, [dx("T402X1A")])])
    inst = align_case(p, 7)
    assert inst.cutoff_date == prev and inst.label == OVERDOSE and inst.cohort is CohortLabel.CASE
    assert all(e.date <= prev for e in inst.history.encounters)


def test_align_case_boundary_and_outside():
    assert align_case(_case(7), 7) is not None
    assert align_case(_case(8), 7) is None
    assert align_case(_case(10), 7) is None
    assert align_case(_case(10), 30) is not None


def test_align_case_truncates_prescriptions():
    inst = align_case(_case(5), 7)
    assert all(r.fill_date <= inst.cutoff_date for r in inst.history.prescriptions)
    assert len(inst.history.prescriptions) == 1


def test_align_case_without_predecessor():
    assert align_case(patient("K", [enc("OD", 0, [dx("T402X1A")])]), 7) is None


def test_align_case_uses_first_overdose():
    p = patient("K", _filler(3) + [enc("a", 200, [dx("I10")]), enc("b", 203, [dx("T402X1A")]),
                                   enc("c", 400, [dx("I10")]), enc("d", 401, [dx("T401X1A")])])
    assert align_case(p, 7).cutoff_date == D0 + timedelta(days=200)


def test_same_day_predecessor_not_used():
    # an encounter on the overdose day is not a predecessor; the cutoff comes from an earlier day
    p = patient("K", _filler(3) + [enc("a", 300, [dx("I10")]), enc("b", 305, [dx("E119")]),
                                   enc("c", 305, [dx("T402X1A")])])
    inst = align_case(p, 7)
    assert inst.cutoff_date == D0 + timedelta(days=300)
    assert not any(is_overdose_diagnosis(d) for e in inst.history.encounters for d in e.diagnoses)


def test_align_control_examples():
    last, prev = date(2022, 9, 10), date(2022, 9, 4)
    p = patient("C", [enc("1", 0, [dx("I10")]), enc("2", (prev - D0).days, [dx("I10")]),
                      enc("3", (last - D0).days, [dx("I10")])])
    inst = align_control(p, 7)
    assert inst.cutoff_date == prev and inst.label == NO_OVERDOSE
    assert inst.cohort is CohortLabel.CONTROL_NONEXPOSED
    far = patient("C", [enc("1", 0, [dx("I10")]), enc("2", 100, [dx("I10")]), enc("3", 120, [dx("I10")])])
    assert align_control(far, 7) is None
    assert align_control(far, 30).cutoff_date == D0 + timedelta(days=100)
    assert align_control(patient("C", [enc("1", 0)]), 7) is None


def test_window_validation():
    with pytest.raises(ValidationError):
        PredictionWindow(0)


# --- task sets -------------------------------------------------------------------------------

def _fixture_population(case_gaps=(3, 3, 3)):
    pts = [_case(g) for g in case_gaps]
    pts = [PatientRecord(f"K{i}", p.demographics, p.encounters, p.prescriptions) for i, p in enumerate(pts)]
    for i in range(3):
        pts.append(patient(f"C{i}", _filler(6) + [enc("L", 153, [dx("I10")])]))
    return pts


def test_build_task_set_counts():
    assert len(build_task_set(_fixture_population(), 7)) == 6
    summary = TaskSetSummary(7)
    out = build_task_set(_fixture_population((3, 3, 20)), 7, summary)
    assert len(out) == 5
    assert summary.dropped == {"Case": 1} and summary.dropped_ids == ["K2"]
    assert [i.enrol_id for i in out] == sorted(i.enrol_id for i in out)
    assert summary.to_dict()["n_case"] == 2 and summary.to_dict()["n_control"] == 3


def test_instances_round_trip(tmp_path, small_instances):
    write_instances(small_instances, tmp_path / "i.jsonl")
    assert read_instances(tmp_path / "i.jsonl") == small_instances


def _oracle_label(p, cutoff, window):
    """Scan the untruncated record directly."""
    od_dates = [e.date for e in p.encounters
                if any((d.system is CodeSystem.ICD10_DX and d.code[:1] == "T" and 36 <= int(d.code[1:3]) <= 50
                        and (len(d.code) < 6 or d.code[5] not in "56"))
                       or (d.system is CodeSystem.ICD9_DX and d.code.startswith(
                           ("965", "968", "969", "970", "E850", "E853", "E854", "E858")))
                       for d in e.diagnoses)]
    if not od_dates:
        return NO_OVERDOSE
    first = min(od_dates)
    assert cutoff < first <= cutoff + timedelta(days=window)
    return OVERDOSE


@given(st.integers(0, 59), st.sampled_from([7, 30]))
def test_leakage_and_label_oracle(small_population, idx, window):
    p = small_population.patients[idx]
    inst = build_task_set([p], window)
    if not inst:
        return
    inst = inst[0]
    assert max(inst.history.event_dates()) <= inst.cutoff_date
    assert _oracle_label(p, inst.cutoff_date, window) == inst.label


@given(st.integers(0, 59))
def test_window_monotone(small_population, idx):
    p = small_population.patients[idx]
    if classify_cohort(p) is CohortLabel.CASE and align_case(p, 7) is not None:
        assert align_case(p, 30) is not None


def test_generated_cases_never_dropped(default_test_instances):
    assert sum(i.cohort is CohortLabel.CASE for i in default_test_instances) == 300
