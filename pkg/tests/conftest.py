import json

import pytest

from slidedx.backends import Script, scripted_backends
from slidedx.highlight import ToolkitStore
from slidedx.session import CounterClock, Engine
from slidedx.store import ingest_corpus
from slidedx.synthetic import build_demo_workspace


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    return build_demo_workspace(tmp_path_factory.mktemp("workspace"))


@pytest.fixture(scope="session")
def corpus(workspace):
    return ingest_corpus(workspace / "corpus")


@pytest.fixture(scope="session")
def toolkits(workspace):
    return ToolkitStore(workspace / "toolkits")


def load_case(workspace, case_id):
    return json.loads((workspace / "cases" / f"{case_id}.json").read_text())


def case_script(workspace, case):
    return Script.from_file(workspace / case["script"])


def make_engine(corpus, toolkits, script, log_dir=None, clock=None):
    return Engine(corpus, toolkits, scripted_backends(script),
                  clock=clock or CounterClock(), log_dir=log_dir)


@pytest.fixture
def engine_for(workspace, corpus, toolkits):
    """Factory: (case_id, log_dir=None) -> (engine, case dict, script)."""

    def build(case_id, log_dir=None):
        case = load_case(workspace, case_id)
        script = case_script(workspace, case)
        return make_engine(corpus, toolkits, script, log_dir), case, script

    return build
