"""Code pools used by the synthetic generator, with their descriptions.

Pool weights only loosely follow published top-10 frequencies for overdose
cases and controls; they shape the synthetic population and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass

from .claims import CodeSystem

DX10 = CodeSystem.ICD10_DX
DX9 = CodeSystem.ICD9_DX
CPT = CodeSystem.CPT


@dataclass(frozen=True)
class CodeEntry:
    system: CodeSystem
    code: str
    description: str
    weight: float = 1.0


@dataclass(frozen=True)
class DrugEntry:
    drug_name: str
    therapeutic_class: str
    strength: str
    route: str
    weight: float = 1.0


OPIOID_CLASS = "Analgesics – Opioid"
STIMULANT_CLASS = "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents"

BACKGROUND_DX = (
    CodeEntry(DX10, "I10", "Essential (primary) hypertension", 6.0),
    CodeEntry(DX10, "Z20822", "Contact with and (suspected) exposure to COVID-19", 3.0),
    CodeEntry(DX10, "Z23", "Encounter for immunization", 3.0),
    CodeEntry(DX10, "E785", "Hyperlipidemia, unspecified", 3.5),
    CodeEntry(DX10, "E782", "Mixed hyperlipidemia", 2.0),
    CodeEntry(DX10, "Z0000", "Encounter for general adult medical examination without abnormal findings", 2.5),
    CodeEntry(DX10, "Z79899", "Other long term (current) drug therapy", 2.5),
    CodeEntry(DX10, "E119", "Type 2 diabetes mellitus without complications", 2.0),
    CodeEntry(DX10, "E559", "Vitamin D deficiency, unspecified", 1.5),
    CodeEntry(DX10, "Z1231", "Encounter for screening mammogram for malignant neoplasm of breast", 1.5),
    CodeEntry(DX10, "R0602", "Shortness of breath", 1.5),
    CodeEntry(DX10, "N189", "Chronic kidney disease, unspecified", 1.0),
    CodeEntry(DX10, "J069", "Acute upper respiratory infection, unspecified", 1.5),
    CodeEntry(DX10, "K219", "Gastro-esophageal reflux disease without esophagitis", 1.5),
    CodeEntry(DX10, "M5450", "Low back pain, unspecified", 1.5),
    CodeEntry(DX10, "R519", "Headache, unspecified", 1.0),
    CodeEntry(DX10, "E039", "Hypothyroidism, unspecified", 1.0),
    CodeEntry(DX10, "J45909", "Unspecified asthma, uncomplicated", 1.0),
    CodeEntry(DX10, "M1990", "Unspecified osteoarthritis, unspecified site", 1.0),
    CodeEntry(DX10, "R109", "Unspecified abdominal pain", 1.0),
    CodeEntry(DX10, "Z6841", "Body mass index [BMI] 40.0-44.9, adult", 0.5),
    CodeEntry(DX10, "E669", "Obesity, unspecified", 1.0),
)

# drawn more often by case patients as the planted signal grows
MARKER_DX = (
    CodeEntry(DX10, "F419", "Anxiety disorder, unspecified", 3.0),
    CodeEntry(DX10, "F411", "Generalized anxiety disorder", 2.5),
    CodeEntry(DX10, "F329", "Major depressive disorder, single episode, unspecified", 2.5),
    CodeEntry(DX10, "F4310", "Post-traumatic stress disorder, unspecified", 1.0),
    CodeEntry(DX10, "G8929", "Other chronic pain", 1.5),
    CodeEntry(DX10, "F17210", "Nicotine dependence, cigarettes, uncomplicated", 1.5),
    CodeEntry(DX10, "F1020", "Alcohol dependence, uncomplicated", 1.0),
    CodeEntry(DX10, "F319", "Bipolar disorder, unspecified", 1.0),
)

EXPOSURE_DX = (
    CodeEntry(DX10, "F1120", "Opioid dependence, uncomplicated", 3.0),
    CodeEntry(DX10, "F1110", "Opioid abuse, uncomplicated", 1.5),
    CodeEntry(DX10, "F1420", "Cocaine dependence, uncomplicated", 1.0),
    CodeEntry(DX10, "F1520", "Other stimulant dependence, uncomplicated", 1.0),
    CodeEntry(DX9, "30400", "Opioid type dependence, unspecified", 0.5),
    CodeEntry(DX9, "30420", "Cocaine dependence, unspecified", 0.3),
)

OVERDOSE_DX = (
    CodeEntry(DX10, "T401X1A", "Poisoning by heroin, accidental (unintentional), initial encounter", 2.0),
    CodeEntry(DX10, "T402X1A", "Poisoning by other opioids, accidental (unintentional), initial encounter", 3.0),
    CodeEntry(DX10, "T404X1A", "Poisoning by other synthetic narcotics, accidental (unintentional), initial encounter", 2.5),
    CodeEntry(DX10, "T405X1A", "Poisoning by cocaine, accidental (unintentional), initial encounter", 1.0),
    CodeEntry(DX10, "T424X1A", "Poisoning by benzodiazepines, accidental (unintentional), initial encounter", 1.0),
    CodeEntry(DX10, "T43621A", "Poisoning by amphetamines, accidental (unintentional), initial encounter", 0.8),
    CodeEntry(DX10, "T402X2A", "Poisoning by other opioids, intentional self-harm, initial encounter", 0.5),
    CodeEntry(DX9, "96509", "Poisoning by other opiates and related narcotics", 0.3),
    CodeEntry(DX9, "E8502", "Accidental poisoning by other opiates and related narcotics", 0.2),
)

# adverse effect / underdosing: poisoning-range stems that must not count as overdose
NON_OVERDOSE_T_DX = (
    CodeEntry(DX10, "T402X5A", "Adverse effect of other opioids, initial encounter", 2.0),
    CodeEntry(DX10, "T424X5A", "Adverse effect of benzodiazepines, initial encounter", 1.0),
    CodeEntry(DX10, "T402X6A", "Underdosing of other opioids, initial encounter", 1.0),
    CodeEntry(DX10, "T383X6A", "Underdosing of insulin and oral hypoglycemic drugs, initial encounter", 1.0),
)

BACKGROUND_PX = (
    CodeEntry(CPT, "99213", "Office or other outpatient visit, established patient, low complexity", 6.0),
    CodeEntry(CPT, "99214", "Office or other outpatient visit, established patient, moderate complexity", 4.0),
    CodeEntry(CPT, "99203", "Office or other outpatient visit, new patient, low complexity", 1.0),
    CodeEntry(CPT, "36415", "Collection of venous blood by venipuncture", 3.0),
    CodeEntry(CPT, "80053", "Comprehensive metabolic panel", 2.0),
    CodeEntry(CPT, "85025", "Complete blood count with automated differential", 2.0),
    CodeEntry(CPT, "80061", "Lipid panel", 1.5),
    CodeEntry(CPT, "90471", "Immunization administration", 1.5),
    CodeEntry(CPT, "93000", "Electrocardiogram, routine, with interpretation and report", 1.0),
    CodeEntry(CPT, "71046", "Radiologic examination, chest; 2 views", 1.0),
    CodeEntry(CPT, "97110", "Therapeutic exercise, each 15 minutes", 1.0),
    CodeEntry(CPT, "83036", "Hemoglobin A1c", 1.0),
)

MARKER_PX = (
    CodeEntry(CPT, "90834", "Psychotherapy, 45 minutes with patient", 2.0),
    CodeEntry(CPT, "90791", "Psychiatric diagnostic evaluation", 1.0),
    CodeEntry(CPT, "80307", "Drug test(s), presumptive, by instrument chemistry analyzers", 1.5),
    CodeEntry(CPT, "96127", "Brief emotional/behavioral assessment", 1.0),
    CodeEntry(CPT, "99284", "Emergency department visit, moderate to high severity", 1.0),
)

OVERDOSE_PX = (
    CodeEntry(CPT, "99285", "Emergency department visit, high severity", 1.0),
)

BACKGROUND_RX = (
    DrugEntry("ATORVASTATIN CALCIUM", "Antihyperlipidemic Drugs, NEC", "20 MG", "ORAL", 4.0),
    DrugEntry("LISINOPRIL", "Cardiac, ACE Inhibitors", "10 MG", "ORAL", 3.0),
    DrugEntry("METOPROLOL SUCCINATE", "Cardiac, Beta Blockers", "50 MG", "ORAL", 2.5),
    DrugEntry("PREDNISONE", "Adrenals & Comb, NEC", "10 MG", "ORAL", 2.5),
    DrugEntry("AMOXICILLIN", "Antibiot, Penicillins", "500 MG", "ORAL", 2.5),
    DrugEntry("IBUPROFEN", "Analg/Antipyr, Nonsteroid/Antiinflam", "800 MG", "ORAL", 2.0),
    DrugEntry("INFLUENZA VACCINE", "Vaccines, NEC", "0.5 ML", "INTRAMUSCULAR", 2.0),
    DrugEntry("OMEPRAZOLE", "Gastrointestinal Drugs Misc, NEC", "20 MG", "ORAL", 2.0),
    DrugEntry("ALBUTEROL SULFATE", "Sympathomimetic Agents, NEC", "90 MCG", "INHALATION", 1.5),
    DrugEntry("METFORMIN HCL", "Antidiabetic Agents, Misc", "500 MG", "ORAL", 2.0),
    DrugEntry("LEVOTHYROXINE SODIUM", "Thyroid Hormones", "50 MCG", "ORAL", 1.5),
    DrugEntry("AMLODIPINE BESYLATE", "Cardiac, Calcium Channel Blockers", "5 MG", "ORAL", 2.0),
)

MARKER_RX = (
    DrugEntry("SERTRALINE HCL", "Psychother, Antidepressants", "50 MG", "ORAL", 2.5),
    DrugEntry("ESCITALOPRAM OXALATE", "Psychother, Antidepressants", "10 MG", "ORAL", 2.0),
    DrugEntry("TRAZODONE HCL", "Psychother, Antidepressants", "50 MG", "ORAL", 2.0),
    DrugEntry("ALPRAZOLAM", "Anxiolytic/Sedative/Hypnotic NEC", "0.5 MG", "ORAL", 1.5),
    DrugEntry("CLONAZEPAM", "Anxiolytic/Sedative/Hypnotic NEC", "1 MG", "ORAL", 1.0),
    DrugEntry("ONDANSETRON HCL", "Antiemetics, NEC", "4 MG", "ORAL", 1.5),
    DrugEntry("GABAPENTIN", "Anticonvulsants, Misc", "300 MG", "ORAL", 2.0),
)

EXPOSURE_RX = (
    DrugEntry("OXYCODONE HCL", OPIOID_CLASS, "5 MG", "ORAL", 3.0),
    DrugEntry("HYDROCODONE BITARTRATE/ACETAMINOPHEN", OPIOID_CLASS, "5-325 MG", "ORAL", 3.0),
    DrugEntry("TRAMADOL HCL", OPIOID_CLASS, "50 MG", "ORAL", 2.0),
    DrugEntry("DEXTROAMPHETAMINE-AMPHETAMINE", STIMULANT_CLASS, "20 MG", "ORAL", 1.5),
    DrugEntry("METHYLPHENIDATE HCL", STIMULANT_CLASS, "10 MG", "ORAL", 1.0),
    DrugEntry("PHENTERMINE HCL", STIMULANT_CLASS, "37.5 MG", "ORAL", 0.5),
)

# numeric class codes and package codes standing in for the claims-side
# identifiers; the code-style prompts print these instead of the names
THERA_CLASS_CODES = {
    "Adrenals & Comb, NEC": "033",
    "Analg/Antipyr, Nonsteroid/Antiinflam": "058",
    OPIOID_CLASS: "060",
    "Anticonvulsants, Misc": "064",
    "Antiemetics, NEC": "068",
    "Antibiot, Penicillins": "008",
    "Antidiabetic Agents, Misc": "172",
    "Antihyperlipidemic Drugs, NEC": "044",
    "Anxiolytic/Sedative/Hypnotic NEC": "074",
    "Cardiac, ACE Inhibitors": "041",
    "Cardiac, Beta Blockers": "042",
    "Cardiac, Calcium Channel Blockers": "045",
    STIMULANT_CLASS: "078",
    "Gastrointestinal Drugs Misc, NEC": "131",
    "Psychother, Antidepressants": "069",
    "Sympathomimetic Agents, NEC": "112",
    "Thyroid Hormones": "177",
    "Vaccines, NEC": "092",
}

DRUG_NDC = {
    "ALBUTEROL SULFATE": "00173068220",
    "ALPRAZOLAM": "00228202910",
    "AMLODIPINE BESYLATE": "00093716798",
    "AMOXICILLIN": "00093310905",
    "ATORVASTATIN CALCIUM": "00378395077",
    "CLONAZEPAM": "00228300450",
    "DEXTROAMPHETAMINE-AMPHETAMINE": "00555077302",
    "ESCITALOPRAM OXALATE": "00093585101",
    "GABAPENTIN": "00228263650",
    "HYDROCODONE BITARTRATE/ACETAMINOPHEN": "00406012305",
    "IBUPROFEN": "00904585461",
    "INFLUENZA VACCINE": "49281042150",
    "LEVOTHYROXINE SODIUM": "00378180001",
    "LISINOPRIL": "00172375880",
    "METFORMIN HCL": "00093104801",
    "METHYLPHENIDATE HCL": "00406143501",
    "METOPROLOL SUCCINATE": "00378459701",
    "OMEPRAZOLE": "00093521198",
    "ONDANSETRON HCL": "00093005405",
    "OXYCODONE HCL": "00406055262",
    "PHENTERMINE HCL": "00093001901",
    "PREDNISONE": "00054001825",
    "SERTRALINE HCL": "16714061201",
    "TRAMADOL HCL": "00093005801",
    "TRAZODONE HCL": "50111056101",
}

ALL_CODE_POOLS = (
    BACKGROUND_DX,
    MARKER_DX,
    EXPOSURE_DX,
    OVERDOSE_DX,
    NON_OVERDOSE_T_DX,
    BACKGROUND_PX,
    MARKER_PX,
    OVERDOSE_PX,
)

FIELD_LABELS = {
    "ENROLID": "enrollee id",
    "DEMOGRAPHICS": "demographics",
    "AGE": "age",
    "SEX": "sex",
    "ENCOUNTERID": "encounter id",
    "SVCDATE": "service date",
    "DIAG_CD": "diagnosis code",
    "PROC_CD": "procedure code",
    "FILLDATE": "fill date",
    "DRUGNAME": "drug name",
    "NDCNUM": "drug name",
    "THERCLS": "therapeutic class",
    "STRENGTH": "strength",
    "ROUTE": "route of administration",
    "ENCOUNTERS": "encounters",
    "PRESCRIPTIONS": "prescriptions",
}


def dictionary_payload() -> dict:
    """JSON-ready code dictionary covering every catalog code."""
    codes: dict[str, dict[str, str]] = {}
    for pool in ALL_CODE_POOLS:
        for entry in pool:
            codes.setdefault(entry.system.value, {})[entry.code] = entry.description
    codes[CodeSystem.THERA_CLASS.value] = {v: k for k, v in THERA_CLASS_CODES.items()}
    codes[CodeSystem.NDC_NAME.value] = {v: k for k, v in DRUG_NDC.items()}
    return {
        "codes": {k: dict(sorted(v.items())) for k, v in sorted(codes.items())},
        "fields": dict(FIELD_LABELS),
    }


MARKER_STRINGS = frozenset(
    [e.code for e in MARKER_DX + MARKER_PX]
    + [e.description for e in MARKER_DX + MARKER_PX]
    + [d.drug_name for d in MARKER_RX]
)
MARKER_DX_STRINGS = frozenset([e.code for e in MARKER_DX] + [e.description for e in MARKER_DX])
