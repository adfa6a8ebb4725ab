import os
from datetime import date, timedelta

import pytest
from hypothesis import HealthCheck, settings

from odx.claims import CodedItem, CodeSystem, Demographics, Encounter, PatientRecord, Prescription
from odx.cohort import build_task_set
from odx.synthgen import GeneratorConfig, generate_population

settings.register_profile("odx", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "odx"))

D0 = date(2021, 1, 1)


def dx(code, system=CodeSystem.ICD10_DX):
    return CodedItem(system, code)


def px(code, system=CodeSystem.CPT):
    return CodedItem(system, code)


def enc(eid, day, dxs=(), pxs=()):
    """Encounter ``day`` days after D0."""
    return Encounter(eid, D0 + timedelta(days=day), tuple(dxs), tuple(pxs))


def rx(day, drug="Sertraline", cls="Psychother, Antidepressants", strength="50 MG", route="ORAL"):
    return Prescription(D0 + timedelta(days=day), drug, cls, strength, route)


def patient(pid, encounters, scripts=(), age=40, sex="F"):
    return PatientRecord(pid, Demographics(age, sex), tuple(encounters), tuple(scripts))


@pytest.fixture(scope="session")
def small_population():
    return generate_population(GeneratorConfig(seed=3, n_case=20, n_control=40), "train")


@pytest.fixture(scope="session")
def small_instances(small_population):
    return build_task_set(small_population.patients, 7, split="train")


@pytest.fixture(scope="session")
def default_test_population():
    return generate_population(GeneratorConfig(), "test")


@pytest.fixture(scope="session")
def default_test_instances(default_test_population):
    return build_task_set(default_test_population.patients, 7, split="test")


@pytest.fixture(scope="session")
def default_train_instances():
    return build_task_set(generate_population(GeneratorConfig(), "train").patients, 7, split="train")


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
