import json

import pytest
from fastapi.testclient import TestClient

from slidedx.service import create_app
from tests.conftest import case_script, load_case, make_engine


@pytest.fixture
def client_for(workspace, corpus, toolkits):
    def build(case_id, auth_token=None):
        case = load_case(workspace, case_id)
        script = case_script(workspace, case)
        engine = make_engine(corpus, toolkits, script)
        app = create_app(engine, auth_token=auth_token)
        return TestClient(app), case

    return build


def create_session(client, case, mode="interactive", auto=True):
    response = client.post("/api/sessions", json={
        "case_info": case["case_info"], "slide_id": case["slide_id"],
        "mode": mode, "seed": 7, "auto_advance": auto})
    assert response.status_code == 200
    return response.json()


def test_interactive_flow_to_final(client_for):
    client, case = client_for("ccrcc-grade3")
    created = create_session(client, case)
    sid = created["session_id"]
    assert created["status"] == "awaiting_exams"

    state = client.get(f"/api/sessions/{sid}").json()
    assert state["pending_exams"] == [
        "Immunohistochemical staining PAX8", "Immunohistochemical staining CD10",
        "Immunohistochemical staining CK7", "Immunohistochemical staining CK20"]
    assert state["differential"][0] == "Clear cell renal cell carcinoma (ccRCC)"

    submitted = client.post(f"/api/sessions/{sid}/exams", json={
        "answers": {"PAX8": "Positive", "CD10": "Positive",
                    "CK7": "Negative", "CK20": "Negative"}})
    assert submitted.status_code == 200
    assert submitted.json()["status"] == "done"

    state = client.get(f"/api/sessions/{sid}").json()
    assert state["final_diagnosis"] == \
        "Clear cell renal cell carcinoma (ccRCC), nuclear grade 3"
    human = [e for e in state["exam_results"] if e["source"] == "human"]
    assert len(human) == 1 and "PAX8: Positive" in human[0]["text"]


def test_oracle_mode_runs_to_done(client_for):
    client, case = client_for("gastric-invasion")
    created = create_session(client, case, mode="oracle")
    assert created["status"] == "done"
    state = client.get(f"/api/sessions/{created['session_id']}").json()
    assert state["final_diagnosis"] == "Gastric adenocarcinoma"


def test_unknown_session_404(client_for):
    client, _ = client_for("ccrcc-grade3")
    assert client.get("/api/sessions/nope").status_code == 404
    assert client.post("/api/sessions/nope/advance").status_code == 404


def test_submit_on_non_pending_session_409(client_for):
    client, case = client_for("gastric-invasion")
    created = create_session(client, case, mode="oracle")
    response = client.post(f"/api/sessions/{created['session_id']}/exams",
                           json={"answers": {"CK7": "positive"}})
    assert response.status_code == 409


def test_empty_submission_rejected(client_for):
    client, case = client_for("ccrcc-grade3")
    created = create_session(client, case)
    response = client.post(f"/api/sessions/{created['session_id']}/exams",
                           json={"answers": {}})
    assert response.status_code == 422


def test_event_stream_replays_turns(client_for):
    client, case = client_for("gastric-invasion")
    created = create_session(client, case, mode="oracle")
    sid = created["session_id"]
    events = []
    with client.stream("GET", f"/api/sessions/{sid}/events") as response:
        assert response.status_code == 200
        current = {}
        for line in response.iter_lines():
            if line.startswith("event: "):
                current = {"event": line[len("event: "):]}
            elif line.startswith("data: "):
                current["data"] = json.loads(line[len("data: "):])
                events.append(current)
            if current.get("event") == "final" and "data" in current:
                break
    kinds = [e["event"] for e in events]
    assert kinds.count("turn") == 2
    assert kinds[-1] == "final"
    final = events[-1]["data"]
    assert final["final_diagnosis"] == "Gastric adenocarcinoma"
    turn_payloads = [e["data"] for e in events if e["event"] == "turn"]
    assert turn_payloads[0]["parsed"]["diff_list"][0] == "Gastric adenocarcinoma"


def test_auth_token_enforced(client_for):
    client, case = client_for("ccrcc-grade3")
    client_auth, case = client_for("ccrcc-grade3", auth_token="secret")
    denied = client_auth.post("/api/sessions", json={
        "case_info": case["case_info"], "slide_id": case["slide_id"]})
    assert denied.status_code == 401
    allowed = client_auth.post("/api/sessions", json={
        "case_info": case["case_info"], "slide_id": case["slide_id"]},
        headers={"Authorization": "Bearer secret"})
    assert allowed.status_code == 200


def test_submit_lock_across_rounds(client_for):
    # the thymic fixture awaits exams twice; the first tokened submitter
    # holds the lock for the second round
    client, case = client_for("thymic-biopsy")
    created = create_session(client, case)
    sid = created["session_id"]
    assert created["status"] == "awaiting_exams"

    first = client.post(f"/api/sessions/{sid}/exams",
                        json={"answers": {"Immunohistochemistry": "see report"}},
                        headers={"x-submit-token": "console-a"})
    assert first.status_code == 200
    assert first.json()["status"] == "awaiting_exams"  # re-entry round

    stolen = client.post(f"/api/sessions/{sid}/exams",
                         json={"answers": {"CD5": "positive"}},
                         headers={"x-submit-token": "console-b"})
    assert stolen.status_code == 423

    second = client.post(f"/api/sessions/{sid}/exams",
                         json={"answers": {"CD5": "positive", "EMA": "positive",
                                           "D2-40": "negative", "WT1": "negative"}},
                         headers={"x-submit-token": "console-a"})
    assert second.status_code == 200
    assert second.json()["status"] == "done"


def test_state_is_projection_of_session_log(client_for, tmp_path, workspace,
                                            corpus, toolkits):
    # every diagnostic string served by the API appears verbatim in the log
    case = load_case(workspace, "ccrcc-grade3")
    script = case_script(workspace, case)
    engine = make_engine(corpus, toolkits, script, log_dir=tmp_path)
    client = TestClient(create_app(engine))
    created = create_session(client, case, mode="oracle")
    state = client.get(f"/api/sessions/{created['session_id']}").json()
    log_text = (tmp_path / f"{created['session_id']}.jsonl").read_text()
    log_lines = [json.loads(l) for l in log_text.splitlines()]
    logged_raw = {l["raw_response"] for l in log_lines if l["type"] == "turn"}
    for turn in state["turns"]:
        assert turn["raw_response"] in logged_raw
    final_lines = [l for l in log_lines if l["type"] == "final"]
    assert final_lines[-1]["final_diagnosis"] == state["final_diagnosis"]
