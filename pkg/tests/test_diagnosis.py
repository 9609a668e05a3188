import random

import pytest

from tutorkit import engine
from tutorkit import events as ev
from tutorkit.diagnosis import (
    AttemptRepo,
    finish_attempt,
    open_diagnosis,
    record_selection,
    replay_selections,
    score_diagnosis,
    toggle_selection,
)
from tutorkit.engine import SessionRepo, apply_decision, start_or_resume
from tutorkit.errors import AttemptFinished, DiagnosisLocked, NotFinished, NotFound, UnknownQuestion

from conftest import make_activity, make_diagnosis, make_module, make_pack, make_question


@pytest.fixture()
def pack():
    questions = [
        make_question("q1", n_options=3, multi=False, correct={"a"}),
        make_question("q2", n_options=4, multi=True, correct={"a", "c"}),
    ]
    return make_pack([
        make_module(
            "M1",
            activities=[make_activity("A1", stage_eids=[["e1"]])],
            diagnosis=make_diagnosis("D1", questions=questions),
        )
    ])


@pytest.fixture()
def attempts(db):
    return AttemptRepo(db)


def complete_module(pack, sessions, store):
    activity = pack.modules[0].activities[0]
    state = start_or_resume("u1", "A1", pack, sessions, store)
    sessions.save(apply_decision(state, {"e1"}, engine.COMPLETE_ACTIVITY, activity))


def diagnosis_of(pack):
    return pack.modules[0].diagnosis


# --- gating ------------------------------------------------------------------

def test_locked_until_module_complete(pack, sessions, attempts, store):
    with pytest.raises(DiagnosisLocked):
        open_diagnosis("u1", "D1", pack, sessions, attempts, store)


def test_open_after_unlock(pack, sessions, attempts, store):
    complete_module(pack, sessions, store)
    state = open_diagnosis("u1", "D1", pack, sessions, attempts, store)
    assert state.cursor == 0
    assert state.selections == {}
    assert not state.finished


def test_unknown_diagnosis(pack, sessions, attempts, store):
    with pytest.raises(NotFound):
        open_diagnosis("u1", "D9", pack, sessions, attempts, store)


def test_reopen_resumes_attempt(pack, sessions, attempts, store):
    complete_module(pack, sessions, store)
    state = open_diagnosis("u1", "D1", pack, sessions, attempts, store)
    record_selection(state, "q1", "a", True, diagnosis_of(pack), attempts, store)
    again = open_diagnosis("u1", "D1", pack, sessions, attempts, store)
    assert again.attempt_id == state.attempt_id
    assert again.selections == {"q1": {"a"}}


def test_retake_gets_new_attempt_id(pack, sessions, attempts, store):
    complete_module(pack, sessions, store)
    first = open_diagnosis("u1", "D1", pack, sessions, attempts, store)
    finish_attempt(first, attempts, store)
    second = open_diagnosis("u1", "D1", pack, sessions, attempts, store)
    assert second.attempt_id != first.attempt_id
    assert not second.finished


# --- selection semantics ---------------------------------------------------------

def opened(pack, sessions, attempts, store):
    complete_module(pack, sessions, store)
    return open_diagnosis("u1", "D1", pack, sessions, attempts, store)


def test_single_select_replaces(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    record_selection(state, "q1", "a", True, diagnosis_of(pack), attempts, store)
    record_selection(state, "q1", "b", True, diagnosis_of(pack), attempts, store)
    assert state.selections["q1"] == {"b"}
    assert len(store.attempt_history("u1", "q1")) == 2


def test_multi_select_accumulates(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    record_selection(state, "q2", "a", True, diagnosis_of(pack), attempts, store)
    record_selection(state, "q2", "c", True, diagnosis_of(pack), attempts, store)
    assert state.selections["q2"] == {"a", "c"}


def test_noop_deselect_still_recorded(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    record_selection(state, "q2", "b", False, diagnosis_of(pack), attempts, store)
    assert state.selections["q2"] == set()
    assert len(store.attempt_history("u1", "q2")) == 1


def test_unknown_question_and_option(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    with pytest.raises(UnknownQuestion):
        record_selection(state, "q9", "a", True, diagnosis_of(pack), attempts, store)
    with pytest.raises(UnknownQuestion):
        record_selection(state, "q1", "z", True, diagnosis_of(pack), attempts, store)


def test_no_changes_after_finish(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    finish_attempt(state, attempts, store)
    with pytest.raises(AttemptFinished):
        record_selection(state, "q1", "a", True, diagnosis_of(pack), attempts, store)
    with pytest.raises(AttemptFinished):
        finish_attempt(state, attempts, store)


# --- scoring ----------------------------------------------------------------------

def test_scoring_requires_finish(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    with pytest.raises(NotFinished):
        score_diagnosis(state, diagnosis_of(pack))


def test_exact_match_scoring(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    record_selection(state, "q1", "a", True, diagnosis_of(pack), attempts, store)
    for option in ("a", "c"):
        record_selection(state, "q2", option, True, diagnosis_of(pack), attempts, store)
    finish_attempt(state, attempts, store)
    score = score_diagnosis(state, diagnosis_of(pack))
    assert score.per_question == {"q1": True, "q2": True}
    assert score.total_correct == 2


def test_superset_selection_is_incorrect(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    for option in ("a", "c", "d"):
        record_selection(state, "q2", option, True, diagnosis_of(pack), attempts, store)
    finish_attempt(state, attempts, store)
    assert score_diagnosis(state, diagnosis_of(pack)).per_question["q2"] is False


def test_blank_answers_score_zero(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    finish_attempt(state, attempts, store)
    assert score_diagnosis(state, diagnosis_of(pack)).total_correct == 0


def test_score_invariant_under_question_order(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    record_selection(state, "q2", "a", True, diagnosis_of(pack), attempts, store)
    record_selection(state, "q1", "a", True, diagnosis_of(pack), attempts, store)
    record_selection(state, "q2", "c", True, diagnosis_of(pack), attempts, store)
    finish_attempt(state, attempts, store)
    assert score_diagnosis(state, diagnosis_of(pack)).total_correct == 2


# --- replay fold --------------------------------------------------------------------

def test_replay_matches_live_selections(pack, sessions, attempts, store):
    state = opened(pack, sessions, attempts, store)
    rng = random.Random(7)
    diagnosis = diagnosis_of(pack)
    for _ in range(100):
        question = rng.choice(diagnosis.questions)
        option = rng.choice(question.option_ids())
        record_selection(state, question.id, option, rng.random() < 0.6, diagnosis, attempts, store)
    records = list(store.export_stream())
    replayed = replay_selections(records, diagnosis, state.attempt_id)
    for question in diagnosis.questions:
        assert replayed.get(question.id, set()) == state.selections.get(question.id, set())


def test_toggle_semantics_unit():
    assert toggle_selection(set(), "a", True, False) == {"a"}
    assert toggle_selection({"a"}, "b", True, False) == {"b"}
    assert toggle_selection({"a"}, "a", False, False) == set()
    assert toggle_selection({"a"}, "b", True, True) == {"a", "b"}
    assert toggle_selection({"a", "b"}, "a", False, True) == {"b"}
    assert toggle_selection(set(), "a", False, True) == set()
