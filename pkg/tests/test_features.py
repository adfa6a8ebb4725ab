from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from odx.claims import ValidationError
from odx.cohort import build_task_set
from odx.features import (
    FeatureVector,
    SplitLeakError,
    Vocabulary,
    build_vocabulary,
    read_vectors,
    to_matrix,
    vectorize,
    write_vectors,
)
from odx.serialize import PRIMARY_DX, FeatureKey, FieldMask, summarize_history

from conftest import dx, enc, patient, rx

N189 = FeatureKey(PRIMARY_DX, "ICD10-DX:N189")


def _inst(n_with, n_without=0, dup=False):
    visits = [enc(f"A{i:03d}", i, [dx("N189")] * (2 if dup else 1)) for i in range(n_with)]
    visits += [enc(f"B{i:03d}", n_with + i, [dx("I10")]) for i in range(n_without)]
    visits.append(enc("ZZZ", n_with + n_without + 1, [dx("I10")]))
    return build_task_set([patient("A", visits)], 7, split="train")[0]


def test_support_boundary():
    assert N189 in build_vocabulary([_inst(50)], 50, max_visits=100)
    assert N189 not in build_vocabulary([_inst(49, 5)], 50, max_visits=100)


def test_support_counts_visits_not_occurrences():
    assert N189 not in build_vocabulary([_inst(30, dup=True)], 50, max_visits=100)
    assert N189 in build_vocabulary([_inst(30, dup=True)], 30, max_visits=100)


def test_empty_training_set():
    with pytest.raises(ValidationError):
        build_vocabulary([])


def test_rejects_other_splits(small_instances):
    from dataclasses import replace
    leaked = list(small_instances) + [replace(small_instances[0], split="test")]
    with pytest.raises(SplitLeakError):
        build_vocabulary(leaked, 5)


def test_vocabulary_sorted_and_persisted(tmp_path, small_instances):
    v = build_vocabulary(small_instances, 5)
    assert v.keys == sorted(v.keys) and len(v) > 10
    v.save(tmp_path / "v.json")
    w = Vocabulary.load(tmp_path / "v.json")
    assert w.keys == v.keys and w.digest() == v.digest()


def _independent_support(instances, max_visits=30):
    # written against the raw history, not the shared key helpers
    support = Counter()
    for inst in instances:
        encs = inst.history.encounters[-max_visits:]
        lo = encs[0].date
        for e in encs:
            keys = set()
            for i, d in enumerate(e.diagnoses):
                keys.add(("primary-dx" if i == 0 else "secondary-dx", f"{d.system.value}:{d.code}"))
            keys |= {("procedure", f"{p.system.value}:{p.code}") for p in e.procedures}
            support.update(keys)
        for r in inst.history.prescriptions:
            if lo <= r.fill_date <= inst.cutoff_date:
                support[("drug-name", r.drug_name)] += 1
                support[("thera-class-strength-route", f"{r.therapeutic_class}|{r.strength}|{r.route}")] += 1
    return support


def test_default_vocabulary_golden(default_train_instances):
    v = build_vocabulary(default_train_instances)
    oracle = sorted(k for k, n in _independent_support(default_train_instances).items() if n >= 50)
    assert [tuple(k) for k in v.keys] == oracle
    assert len(v) == 124
    assert build_vocabulary(default_train_instances, shards=7).keys == v.keys


@given(st.randoms(use_true_random=False))
def test_vocabulary_order_invariant(small_instances, rnd):
    shuffled = list(small_instances)
    rnd.shuffle(shuffled)
    assert build_vocabulary(shuffled, 5).keys == build_vocabulary(small_instances, 5).keys


def test_vectorize_counts():
    inst = _inst(3, 2)
    vocab = Vocabulary([N189, FeatureKey(PRIMARY_DX, "ICD10-DX:I10")], 1)
    assert vectorize(inst, vocab).counts == {0: 3, 1: 2}  # the tail visit is past the cutoff
    oov = Vocabulary([FeatureKey(PRIMARY_DX, "ICD10-DX:Q999")], 1)
    assert vectorize(inst, oov).counts == {}


@given(st.integers(0, 59), st.integers(1, 40), st.sampled_from(
    [FieldMask(1, 1, 1), FieldMask(1, 0, 0), FieldMask(0, 1, 1), FieldMask(0, 0, 1)]))
def test_vectorize_agrees_with_summary(small_instances, i, n, mask):
    vocab = build_vocabulary(small_instances, 5)
    inst = small_instances[i % len(small_instances)]
    summary = summarize_history(inst, n, mask)
    vec = vectorize(inst, vocab, n, mask)
    assert vec.counts == {vocab.index[k]: c for k, c in summary.items() if k in vocab}
    assert vec.total() <= sum(summary.values())


def test_vectors_round_trip(tmp_path, small_instances):
    vocab = build_vocabulary(small_instances, 5)
    rows = [(i.instance_id, vectorize(i, vocab)) for i in small_instances]
    write_vectors(rows, tmp_path / "v.txt")
    assert read_vectors(tmp_path / "v.txt", len(vocab)) == rows
    X = to_matrix([r[1] for r in rows])
    assert X.shape == (len(rows), len(vocab))
    assert np.array_equal(X[0], rows[0][1].dense())


def test_feature_vector_validation():
    with pytest.raises(ValidationError):
        FeatureVector({3: 1}, 3)
    with pytest.raises(ValidationError):
        FeatureVector({0: 0}, 3)
    with pytest.raises(ValidationError):
        to_matrix([FeatureVector({}, 2), FeatureVector({}, 3)])
