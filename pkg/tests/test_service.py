import json
import threading

import pytest
from fastapi.testclient import TestClient

from tutorkit import events as ev
from tutorkit.auth import AuthService
from tutorkit.errors import BadCredentials, UserExists
from tutorkit.events import EventStore
from tutorkit.gateway import LlmResponse, ScriptedGateway
from tutorkit.pipeline import PipelineConfig
from tutorkit.service import create_app
from tutorkit.storage import Database

SCRIPT = [
    {"role": "filter", "match": "why", "response": "QUESTION"},
    {"role": "filter", "match": "", "response": "ANSWER"},
    {"role": "judge", "match": "unit-rate please", "response": "COVERED: unit-rate"},
    {"role": "judge", "match": "steeper-faster please", "response": "COVERED: steeper-faster"},
    {"role": "judge", "match": "rate-equation please", "response": "COVERED: rate-equation"},
    {"role": "judge", "match": "fill_table submission", "response": "COVERED: none"},
    {"role": "judge", "match": "", "response": "COVERED: none"},
    {"role": "responder", "match": "", "response": "Nice thinking - keep going."},
]


@pytest.fixture()
def client(sample_pack_dir):
    app = create_app(
        pack_dir=sample_pack_dir,
        db=Database(":memory:"),
        gateway=ScriptedGateway.from_doc(SCRIPT),
        config=PipelineConfig(n_judges=1),
        admin_token="root-token",
    )
    with TestClient(app) as test_client:
        yield test_client


def register_and_login(client, username="t1", password="pw") -> dict:
    response = client.post("/api/v1/auth/register", json={"username": username, "password": password})
    assert response.status_code == 201
    response = client.post("/api/v1/auth/login", json={"username": username, "password": password})
    assert response.status_code == 200
    return {"Authorization": f"Bearer {response.json()['token']}"}


# --- auth -------------------------------------------------------------------------

def test_register_then_login_issues_token(client):
    headers = register_and_login(client)
    assert client.get("/api/v1/progress", headers=headers).status_code == 200


def test_wrong_password_is_401(client):
    client.post("/api/v1/auth/register", json={"username": "t1", "password": "pw"})
    response = client.post("/api/v1/auth/login", json={"username": "t1", "password": "nope"})
    assert response.status_code == 401


def test_duplicate_register_is_409(client):
    client.post("/api/v1/auth/register", json={"username": "t1", "password": "pw"})
    response = client.post("/api/v1/auth/register", json={"username": "t1", "password": "other"})
    assert response.status_code == 409


def test_unauthenticated_is_401(client):
    assert client.get("/api/v1/progress").status_code == 401
    assert client.post("/api/v1/activity/CKSM1-1/message", json={"text": "hi"}).status_code == 401


def test_auth_events_logged(db, store):
    auth = AuthService(db, store)
    auth.register("t1", "pw")
    auth.login("t1", "pw")
    with pytest.raises(BadCredentials):
        auth.login("t1", "wrong")
    with pytest.raises(UserExists):
        auth.register("t1", "pw")
    actions = [r.payload["action"] for r in store.export_stream()]
    assert actions == ["register", "login", "login_failed"]


def test_token_expiry(db, store, monkeypatch):
    auth = AuthService(db, store)
    auth.register("t1", "pw")
    token = auth.login("t1", "pw")
    assert auth.resolve(token.token) == "t1"
    monkeypatch.setattr("tutorkit.auth.time.time_ns", lambda: (token.expires_ts + 1) * 1_000_000)
    assert auth.resolve(token.token) is None


# --- progress and state ----------------------------------------------------------------

def test_fresh_progress_all_not_attempted(client):
    headers = register_and_login(client)
    doc = client.get("/api/v1/progress", headers=headers).json()
    assert all(a["status"] == "NotAttempted" for a in doc["activities"])
    assert all(not m["diagnosis_unlocked"] for m in doc["modules"])


def test_pack_outline_has_titles_but_no_answers(client):
    headers = register_and_login(client)
    assert client.get("/api/v1/pack/outline").status_code == 401
    doc = client.get("/api/v1/pack/outline", headers=headers).json()
    ck = next(m for m in doc["modules"] if m["id"] == "CKSM1")
    assert ck["domain"] == "CK"
    assert ck["diagnosis_id"] == "CKSM1-D"
    assert {"id": "CKSM1-1", "title": "Speed as a unit rate"} in ck["activities"]
    body = json.dumps(doc)
    assert "rubric" not in body and "correct_option_ids" not in body


def test_start_returns_question(client):
    headers = register_and_login(client)
    doc = client.post("/api/v1/activity/CKSM1-1/start", headers=headers).json()
    assert doc["state"]["stage_index"] == 0
    assert "Ana" in doc["question_text"]
    assert doc["image_refs"] == ["two_walkers.svg"]


def test_state_of_unstarted_activity_is_404(client):
    headers = register_and_login(client)
    assert client.get("/api/v1/activity/CKSM1-1/state", headers=headers).status_code == 404


def test_unknown_activity_is_404(client):
    headers = register_and_login(client)
    assert client.post("/api/v1/activity/NOPE/message", json={"text": "hi"}, headers=headers).status_code == 404


def test_locked_diagnosis_start_is_423(client):
    headers = register_and_login(client)
    assert client.post("/api/v1/activity/CKSM1-D/start", headers=headers).status_code == 423


# --- messages ------------------------------------------------------------------------------

def test_message_happy_path(client):
    headers = register_and_login(client)
    response = client.post(
        "/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers
    )
    assert response.status_code == 200
    doc = response.json()
    assert doc["reply"] == "Nice thinking - keep going."
    assert doc["decision"]["action"] == "AdvanceExpectation"
    assert doc["state"]["expectation_status"]["unit-rate"] == "Met"
    assert len(doc["event_ids"]) >= 3


def test_side_question_leaves_state(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/start", headers=headers)
    response = client.post(
        "/api/v1/activity/CKSM1-1/message", json={"text": "why does the ratio stay fixed?"}, headers=headers
    )
    assert response.json()["decision"]["action"] == "AnswerSideQuestion"
    state = client.get("/api/v1/activity/CKSM1-1/state", headers=headers).json()
    assert set(state["expectation_status"].values()) == {"Unmet"}


def drive_to_completion(client, headers, activity_id="CKSM1-1"):
    for text in ("unit-rate please", "steeper-faster please", "rate-equation please"):
        response = client.post(
            f"/api/v1/activity/{activity_id}/message", json={"text": text}, headers=headers
        )
        assert response.status_code == 200
    return response


def test_completion_flow_and_review_mode(client):
    headers = register_and_login(client)
    final = drive_to_completion(client, headers)
    doc = final.json()
    assert doc["decision"]["action"] == "CompleteActivity"
    assert doc["state"]["lifecycle"] == "Completed"
    assert "summary" in doc["state"]

    review = client.post("/api/v1/activity/CKSM1-1/message", json={"text": "one more thing"}, headers=headers)
    assert review.status_code == 200
    review_doc = review.json()
    assert review_doc["decision"]["action"] == "AcknowledgeAndStay"
    assert review_doc["state"]["lifecycle"] == "Completed"

    progress = client.get("/api/v1/progress", headers=headers).json()
    status = {a["activity_id"]: a["status"] for a in progress["activities"]}
    assert status["CKSM1-1"] == "Completed"


def test_gateway_failure_returns_502(sample_pack_dir):
    app = create_app(
        pack_dir=sample_pack_dir,
        db=Database(":memory:"),
        gateway=ScriptedGateway.from_doc([{"role": "filter", "match": "", "error": True}]),
        config=PipelineConfig(n_judges=1),
    )
    with TestClient(app) as client:
        headers = register_and_login(client)
        response = client.post("/api/v1/activity/CKSM1-1/message", json={"text": "hi"}, headers=headers)
        assert response.status_code == 502


def test_empty_message_is_422(client):
    headers = register_and_login(client)
    assert client.post("/api/v1/activity/CKSM1-1/message", json={"text": ""}, headers=headers).status_code == 422


class BlockingGateway:
    """Parks the first filter call on a barrier so two requests overlap."""

    def __init__(self, inner):
        self.inner = inner
        self.barrier = threading.Barrier(2, timeout=10)
        self.blocked_once = False
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            first = not self.blocked_once
            self.blocked_once = True
        if first:
            self.barrier.wait()  # released once the second request got its 409
        return self.inner.complete(request)


def test_concurrent_double_post_yields_one_200_one_409(sample_pack_dir):
    gateway = BlockingGateway(ScriptedGateway.from_doc(SCRIPT))
    app = create_app(
        pack_dir=sample_pack_dir,
        db=Database(":memory:"),
        gateway=gateway,
        config=PipelineConfig(n_judges=1),
    )
    with TestClient(app) as client:
        headers = register_and_login(client)
        client.post("/api/v1/activity/CKSM1-1/start", headers=headers)

        codes = []

        def post():
            response = client.post(
                "/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers
            )
            codes.append(response.status_code)
            if response.status_code == 409:
                gateway.barrier.wait()

        threads = [threading.Thread(target=post) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(codes) == [200, 409]


# --- tool events ---------------------------------------------------------------------------

def test_tool_event_runs_judged_turn(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-2/start", headers=headers)
    payload = {"tool_id": "fill_table", "data": {"cells": [[2, 3], [4, 6]]}}
    response = client.post("/api/v1/activity/CKSM1-2/tool-event", json=payload, headers=headers)
    assert response.status_code == 200
    doc = response.json()
    assert doc["decision"]["action"] in ("SendHint", "AdvanceExpectation")
    # the judge saw the serialized table in the last user turn
    app_store: EventStore = client.app.state.store
    turns = [r for r in app_store.export_stream() if r.kind == ev.USER_MESSAGE]
    assert "(2, 3)" in turns[-1].payload["text"]
    assert turns[-1].payload["attached_tool_result"]["tool_id"] == "fill_table"


def test_unknown_tool_is_422(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/start", headers=headers)
    response = client.post(
        "/api/v1/activity/CKSM1-1/tool-event", json={"tool_id": "abacus", "data": {}}, headers=headers
    )
    assert response.status_code == 422


def test_notebook_save_bypasses_judges(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/start", headers=headers)
    response = client.post(
        "/api/v1/activity/CKSM1-1/tool-event",
        json={"tool_id": "notebook", "data": {"text": "my insight"}},
        headers=headers,
    )
    assert response.status_code == 200
    app_store: EventStore = client.app.state.store
    records = list(app_store.export_stream())
    assert records[-1].kind == ev.TOOL_EVENT
    assert records[-1].payload["action"] == "save"
    assert all(r.component != "Judger" for r in records)


def test_notebook_shared_across_activities(client):
    headers = register_and_login(client)
    assert client.get("/api/v1/notebook", headers=headers).json() == {"text": ""}
    assert client.put("/api/v1/notebook", json={"text": "remember ratios"}, headers=headers).status_code == 204
    assert client.get("/api/v1/notebook", headers=headers).json() == {"text": "remember ratios"}
    # also visible when saved from inside an activity
    client.post("/api/v1/activity/CKSM1-1/start", headers=headers)
    client.post(
        "/api/v1/activity/CKSM1-1/tool-event",
        json={"tool_id": "notebook", "data": {"text": "updated note"}},
        headers=headers,
    )
    assert client.get("/api/v1/notebook", headers=headers).json() == {"text": "updated note"}


# --- dialogue -----------------------------------------------------------------------------

def test_dialogue_replay_matches_transcript(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    doc = client.get("/api/v1/activity/CKSM1-1/dialogue", headers=headers).json()
    speakers = [e["speaker"] for e in doc["entries"]]
    assert speakers[0] == "user"
    assert "system" in speakers
    assert all("event_id" in e for e in doc["entries"])
    responder = [e for e in doc["entries"] if e.get("component") == "Responder"]
    assert responder and responder[0]["text"] == "Nice thinking - keep going."


# --- feedback ---------------------------------------------------------------------------------

def test_feedback_round_trip(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    doc = client.get("/api/v1/activity/CKSM1-1/dialogue", headers=headers).json()
    bubble = next(e for e in doc["entries"] if e["speaker"] == "system")
    response = client.post(
        "/api/v1/feedback",
        json={"target_event_id": bubble["event_id"], "vote": "up", "note": "clear"},
        headers=headers,
    )
    assert response.status_code == 204

    admin = {"Authorization": "Bearer root-token"}
    stats = client.get("/api/v1/admin/feedback-stats", headers=admin).json()
    assert stats["total"]["positive"] == 1

    # re-vote down: stats count one Down
    client.post(
        "/api/v1/feedback", json={"target_event_id": bubble["event_id"], "vote": "down"}, headers=headers
    )
    stats = client.get("/api/v1/admin/feedback-stats", headers=admin).json()
    assert stats["total"]["positive"] == 0
    assert stats["total"]["negative"] == 1


def test_feedback_on_user_message_rejected(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    doc = client.get("/api/v1/activity/CKSM1-1/dialogue", headers=headers).json()
    user_bubble = next(e for e in doc["entries"] if e["speaker"] == "user")
    response = client.post(
        "/api/v1/feedback", json={"target_event_id": user_bubble["event_id"], "vote": "up"}, headers=headers
    )
    assert response.status_code == 422


def test_feedback_on_missing_target_is_404(client):
    headers = register_and_login(client)
    response = client.post("/api/v1/feedback", json={"target_event_id": 99999, "vote": "up"}, headers=headers)
    assert response.status_code == 404


def test_bad_vote_is_422(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    response = client.post("/api/v1/feedback", json={"target_event_id": 1, "vote": "meh"}, headers=headers)
    assert response.status_code == 422


# --- diagnosis endpoints -------------------------------------------------------------------------

def complete_module_one(client, headers):
    drive_to_completion(client, headers, "CKSM1-1")
    for text in ("constant-ratio please", "scaling-test please", "ratio-vs-difference please"):
        client.post("/api/v1/activity/CKSM1-2/message", json={"text": text}, headers=headers)


@pytest.fixture()
def module_client(sample_pack_dir):
    script = SCRIPT + [
        {"role": "judge", "match": "constant-ratio please", "response": "COVERED: constant-ratio"},
        {"role": "judge", "match": "scaling-test please", "response": "COVERED: scaling-test"},
        {"role": "judge", "match": "ratio-vs-difference please", "response": "COVERED: ratio-vs-difference"},
    ]
    # specific judge rules must precede the catch-all
    script.sort(key=lambda rule: (rule["role"] == "judge" and rule["match"] == ""))
    app = create_app(
        pack_dir=sample_pack_dir,
        db=Database(":memory:"),
        gateway=ScriptedGateway.from_doc(script),
        config=PipelineConfig(n_judges=1),
        admin_token="root-token",
    )
    with TestClient(app) as test_client:
        yield test_client


def test_diagnosis_locked_then_unlocked_flow(module_client):
    client = module_client
    headers = register_and_login(client)
    assert client.post("/api/v1/diagnosis/CKSM1-D/open", headers=headers).status_code == 423

    complete_module_one(client, headers)
    progress = client.get("/api/v1/progress", headers=headers).json()
    assert next(m for m in progress["modules"] if m["module_id"] == "CKSM1")["diagnosis_unlocked"]

    doc = client.post("/api/v1/diagnosis/CKSM1-D/open", headers=headers).json()
    assert doc["attempt"]["cursor"] == 0
    assert all("correct_option_ids" not in q for q in doc["questions"])

    client.post(
        "/api/v1/diagnosis/CKSM1-D/select",
        json={"question_id": "CKSM1-D-q1", "option_id": "a", "selected": True},
        headers=headers,
    )
    client.post(
        "/api/v1/diagnosis/CKSM1-D/select",
        json={"question_id": "CKSM1-D-q1", "option_id": "b", "selected": True},
        headers=headers,
    )
    client.post(
        "/api/v1/diagnosis/CKSM1-D/select",
        json={"question_id": "CKSM1-D-q2", "option_id": "b", "selected": True},
        headers=headers,
    )
    finish = client.post("/api/v1/diagnosis/CKSM1-D/finish", headers=headers).json()
    assert finish["score"]["per_question"] == {"CKSM1-D-q1": True, "CKSM1-D-q2": True, "CKSM1-D-q3": False}
    assert finish["score"]["total_correct"] == 2


# --- admin export ----------------------------------------------------------------------------------

def test_export_requires_admin(client):
    headers = register_and_login(client)
    assert client.get("/api/v1/admin/export", headers=headers).status_code == 403
    assert client.get("/api/v1/admin/feedback-stats", headers=headers).status_code == 403


def test_export_streams_ndjson(client):
    headers = register_and_login(client)
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    admin = {"Authorization": "Bearer root-token"}
    response = client.get("/api/v1/admin/export", headers=admin)
    assert response.status_code == 200
    lines = [line for line in response.text.splitlines() if line]
    store: EventStore = client.app.state.store
    assert len(lines) == store.count()
    filtered = client.get("/api/v1/admin/export", params={"kinds": "UserMessage"}, headers=admin)
    assert all('"kind":"UserMessage"' in line for line in filtered.text.splitlines() if line)


def test_assets_served(client):
    response = client.get("/assets/two_walkers.svg")
    assert response.status_code == 200
    assert "svg" in response.text


def test_mutating_2xx_appends_events(client):
    headers = register_and_login(client)
    store: EventStore = client.app.state.store
    before = store.count()
    client.post("/api/v1/activity/CKSM1-1/message", json={"text": "unit-rate please"}, headers=headers)
    after = store.count()
    assert after > before
