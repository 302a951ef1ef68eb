import httpx
import pytest

from slidedx.backends import (
    BackendEndpoint,
    BackendRequest,
    HttpBackend,
    MockModelServer,
    Script,
    ScriptedBackend,
    scripted_backends,
)
from slidedx.errors import BackendRejected, BackendUnavailable, ConfigError
from slidedx.parsing import parse_response


def make_script():
    return Script([
        {"role": "reasoner", "response": "turn one"},
        {"role": "reasoner", "response": "turn two"},
        {"role": "interpreter", "response": "findings"},
        {"role": "exam_oracle", "table": {"PAX8": "Positive", "CD10": "Positive"}},
    ])


def test_scripted_order_per_role():
    script = make_script()
    reasoner = ScriptedBackend("reasoner", script)
    interp = ScriptedBackend("interpreter", script)
    assert reasoner.complete(BackendRequest("reasoner", "p1")) == "turn one"
    assert interp.complete(BackendRequest("interpreter", "p")) == "findings"
    assert reasoner.complete(BackendRequest("reasoner", "p2")) == "turn two"


def test_scripted_exhaustion_is_409():
    script = Script([{"role": "reasoner", "response": "only"}])
    backend = ScriptedBackend("reasoner", script)
    backend.complete(BackendRequest("reasoner", "p"))
    with pytest.raises(BackendRejected) as err:
        backend.complete(BackendRequest("reasoner", "p"))
    assert err.value.status == 409


def test_scripted_request_log_matches_consumption():
    script = make_script()
    backends = scripted_backends(script)
    backends["reasoner"].complete(BackendRequest("reasoner", "a"))
    backends["reasoner"].complete(BackendRequest("reasoner", "b"))
    assert len(script.requests["reasoner"]) == script.consumed["reasoner"] == 2
    assert script.requests["reasoner"][0]["prompt"] == "a"


def test_exam_oracle_table_rendering():
    script = make_script()
    backend = ScriptedBackend("exam_oracle", script)
    request = BackendRequest("exam_oracle", "please",
                             metadata={"exams": ["Immunohistochemical staining PAX8",
                                                 "CD10", "CK7"]})
    text = backend.complete(request)
    assert "Immunohistochemical staining PAX8: Positive" in text
    assert "CD10: Positive" in text
    assert "CK7: no result available" in text


def test_request_validation():
    with pytest.raises(ConfigError):
        BackendRequest("interpreter", "p", mode="icl")
    with pytest.raises(ConfigError):
        BackendRequest("interpreter", "p", mode="general", references=("r",))
    with pytest.raises(ConfigError):
        BackendEndpoint("nope", "http://x")


def test_http_round_trip_and_transport_transparency():
    fixture_text = ("<think>scripted</think><answer>\\boxed{Gastric adenocarcinoma}"
                    "</answer>")
    script = Script([{"role": "reasoner", "response": fixture_text}])
    with MockModelServer(script) as server:
        backend = HttpBackend(BackendEndpoint("reasoner", server.url, timeout=5))
        text = backend.complete(BackendRequest("reasoner", "prompt"))
    assert text == fixture_text
    assert parse_response(text) == parse_response(fixture_text)
    assert script.requests["reasoner"][0]["prompt"] == "prompt"


def test_http_409_beyond_script_end():
    script = Script([])
    with MockModelServer(script) as server:
        backend = HttpBackend(BackendEndpoint("reasoner", server.url, timeout=5))
        with pytest.raises(BackendRejected) as err:
            backend.complete(BackendRequest("reasoner", "p"))
    assert err.value.status == 409
    assert "exhausted" in err.value.body


def test_http_unknown_path_rejected():
    script = Script([])
    with MockModelServer(script) as server:
        response = httpx.post(f"{server.url}/v1/not-a-role", json={}, timeout=5)
    assert response.status_code == 404


def test_retry_budget_accounting(monkeypatch):
    attempts = []

    def failing_post(url, **kwargs):
        attempts.append(url)
        raise httpx.ConnectError("down")

    monkeypatch.setattr(httpx, "post", failing_post)
    endpoint = BackendEndpoint("reasoner", "http://127.0.0.1:1", timeout=1,
                               retries=2, backoff=0.0)
    backend = HttpBackend(endpoint, sleep=lambda _: None)
    with pytest.raises(BackendUnavailable):
        backend.complete(BackendRequest("reasoner", "p"))
    assert len(attempts) == 3  # 1 + retry budget


def test_non_2xx_preserves_body(monkeypatch):
    def post_400(url, **kwargs):
        return httpx.Response(400, text="bad payload shape",
                              request=httpx.Request("POST", url))

    monkeypatch.setattr(httpx, "post", post_400)
    backend = HttpBackend(BackendEndpoint("reasoner", "http://127.0.0.1:1", timeout=1))
    with pytest.raises(BackendRejected) as err:
        backend.complete(BackendRequest("reasoner", "p"))
    assert err.value.status == 400 and err.value.body == "bad payload shape"


def test_script_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text('[{"role": "reasoner", "response": "hi"}]')
    script = Script.from_file(path)
    assert script.pop("reasoner", {"prompt": "x"}) == "hi"
