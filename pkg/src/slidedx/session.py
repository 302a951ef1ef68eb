"""Multi-turn diagnostic state machine.

A session moves through exploration (initial differential and action
plan), execution (evidence rounds: tool-driven slide re-observation and
external examination results), and a concluding decision step that either
finishes with a boxed diagnosis, loops back into another evidence round
when the reasoner narrows the differential instead, or gives up as
inconclusive at the round bound.

Sessions are strictly sequential; the engine holds only read-only shared
state (corpus, toolkit cache), so many sessions may run concurrently.
"""
from __future__ import annotations

import itertools
import json
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .backends import MODE_GENERAL, MODE_ICL, BackendRequest
from .errors import (
    BackendRejected,
    BackendUnavailable,
    EmptyHighlightError,
    EngineError,
    NotFoundError,
    NoTumorError,
    SessionError,
)
from .highlight import (
    DEFAULT_PLANS,
    SelectionPlan,
    Toolkit,
    ToolkitStore,
    gleason_area_map,
    localize_entities,
    run_selection_plan,
    similarity_matrix,
)
from .parsing import ParsedResponse, parse_response
from .prompts import (
    render_definitive,
    render_exploratory,
    render_interpreter_general,
    render_interpreter_icl,
    render_one_pass,
)
from .store import Corpus

EXPLORATION = "exploration"
EXECUTION = "execution"
EXPLOITATION = "exploitation"
REENTRY = "exploration-reentry"
DONE = "done"
ABORTED = "aborted"
ONE_PASS = "op"

LOG_VERSION = 1


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> str: ...


# ---------------------------------------------------------------------------
# tool registry


@dataclass(frozen=True)
class ToolSpec:
    """How one named tool maps onto highlighter machinery."""

    name: str
    label: str
    group: str                      # renal | prostate | invasion | other
    toolkit: str
    selection: str                  # plan | per_category_topk | area_map
    plan: str | None = None
    k: int = 5
    levels: tuple[str, ...] = ()
    interpreter_mode: str = MODE_ICL
    icl_reference_count: int = 10
    aggregator: str = "presence"    # presence | grade | invasion | gleason | text
    category_label: str | None = None


class ToolRegistry:
    def __init__(self, specs: Sequence[ToolSpec]):
        self._specs = {spec.name: spec for spec in specs}

    def get(self, name: str) -> ToolSpec | None:
        return self._specs.get(name)

    def names(self) -> list[str]:
        return list(self._specs)

    def roster(self) -> list[tuple[str, str, str]]:
        return [(s.name, s.label, s.group) for s in self._specs.values()]

    @classmethod
    def default(cls) -> "ToolRegistry":
        return cls([
            ToolSpec("tool-ccRCC", "renal clear cell observation tool", "renal",
                     toolkit="rcc-ccRCC", selection="plan", plan="subtype",
                     aggregator="presence", category_label="ccRCC"),
            ToolSpec("tool-chRCC", "renal chromophobe cell observation tool", "renal",
                     toolkit="rcc-chRCC", selection="plan", plan="subtype",
                     aggregator="presence", category_label="chRCC"),
            ToolSpec("tool-pRCC", "renal papillary cell observation tool", "renal",
                     toolkit="rcc-pRCC", selection="plan", plan="subtype",
                     aggregator="presence", category_label="pRCC"),
            ToolSpec("tool-Nuclear", "Furhman nuclear grade observation tool", "renal",
                     toolkit="nuclear-grade", selection="per_category_topk",
                     k=5, levels=("20x",), aggregator="grade",
                     category_label="Nuclear grade"),
            ToolSpec("tool-Gleason", "Gleason score evaluation tool", "prostate",
                     toolkit="gleason", selection="area_map", levels=("20x",),
                     interpreter_mode=MODE_GENERAL, aggregator="gleason",
                     category_label="Gleason score"),
            ToolSpec("tool-invasion", "invasion detection tool", "invasion",
                     toolkit="invasion", selection="per_category_topk",
                     k=5, levels=("5x", "10x"), aggregator="invasion",
                     category_label="Invasion"),
        ])


# ---------------------------------------------------------------------------
# session state


@dataclass(frozen=True)
class SessionConfig:
    seed: int = 0
    max_rounds: int = 3
    screening_toolkit: str = "pancancer"
    screening_plan: str = "pancancer"
    further_look: bool = True
    further_test: bool = True
    icl_count: int | None = None        # overrides each tool's reference count
    oracle_fallback: bool = True
    rescreen_on_reentry: bool = False


@dataclass
class TurnRecord:
    index: int
    stage: str
    prompt: str
    raw_response: str
    parsed: ParsedResponse
    backend: str
    timestamp: str
    rois: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "stage": self.stage,
            "prompt": self.prompt,
            "raw_response": self.raw_response,
            "parsed": self.parsed.to_dict(),
            "backend": self.backend,
            "timestamp": self.timestamp,
            "rois": self.rois,
        }


@dataclass
class DiagnosticSession:
    session_id: str
    case_info: str
    slide_id: str
    config: SessionConfig
    stage: str = EXPLORATION
    stage_history: list[str] = field(default_factory=list)
    turns: list[TurnRecord] = field(default_factory=list)
    differential: list[str] = field(default_factory=list)
    pending_exams: list[str] = field(default_factory=list)
    pending_tools: list[str] = field(default_factory=list)
    observations: list[dict] = field(default_factory=list)
    exam_results: list[dict] = field(default_factory=list)
    screening: dict | None = None
    unregistered_tools: list[str] = field(default_factory=list)
    rounds: int = 0
    final_diagnosis: str | None = None
    inconclusive: bool = False
    abort_cause: str | None = None
    submitted_answers: dict[str, str] = field(default_factory=dict)
    rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def generator(self) -> np.random.Generator:
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        return self.rng

    @property
    def finished(self) -> bool:
        return self.stage in (DONE, ABORTED)

    @property
    def has_pending(self) -> bool:
        return bool(self.pending_tools or self.pending_exams)

    def evidence_size(self) -> int:
        return len(self.observations) + len(self.exam_results)

    def to_state(self) -> dict:
        return {
            "session_id": self.session_id,
            "slide_id": self.slide_id,
            "case_info": self.case_info,
            "stage": self.stage,
            "stage_history": list(self.stage_history),
            "differential": list(self.differential),
            "pending_exams": list(self.pending_exams),
            "pending_tools": list(self.pending_tools),
            "observations": [dict(o) for o in self.observations],
            "exam_results": [dict(e) for e in self.exam_results],
            "screening": dict(self.screening) if self.screening else None,
            "rounds": self.rounds,
            "final_diagnosis": self.final_diagnosis,
            "inconclusive": self.inconclusive,
            "abort_cause": self.abort_cause,
            "turns": [t.to_dict() for t in self.turns],
        }


def system_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


class CounterClock:
    """Deterministic clock for replayable test-profile runs."""

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            return f"T{next(self._counter)}"


class SessionLog:
    """Append-only JSONL transcript, one file per session."""

    def __init__(self, directory: str | Path, session_id: str):
        self.path = Path(directory) / f"{session_id}.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def append(self, record: Mapping) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# engine


class Engine:
    """Shared orchestration over a corpus, toolkits, and model backends."""

    def __init__(self, corpus: Corpus, toolkits: ToolkitStore,
                 backends: Mapping[str, Backend],
                 registry: ToolRegistry | None = None,
                 plans: Mapping[str, SelectionPlan] | None = None,
                 clock: Callable[[], str] = system_clock,
                 log_dir: str | Path | None = None):
        self.corpus = corpus
        self.toolkits = toolkits
        self.backends = backends
        self.registry = registry or ToolRegistry.default()
        self.plans = dict(plans or DEFAULT_PLANS)
        self.clock = clock
        self.log_dir = Path(log_dir) if log_dir else None
        self._logs: dict[str, SessionLog] = {}

    # -- plumbing ------------------------------------------------------------

    def _log(self, session: DiagnosticSession, record: dict) -> None:
        if self.log_dir is None:
            return
        log = self._logs.get(session.session_id)
        if log is None:
            log = self._logs[session.session_id] = SessionLog(self.log_dir,
                                                              session.session_id)
        log.append(record)

    def log_path(self, session_id: str) -> Path | None:
        log = self._logs.get(session_id)
        return log.path if log else None

    def _call(self, role: str, request: BackendRequest) -> str:
        backend = self.backends.get(role)
        if backend is None:
            raise BackendUnavailable(f"no backend configured for role {role!r}")
        return backend.complete(request)

    def _record_turn(self, session: DiagnosticSession, stage: str, prompt: str,
                     raw: str, parsed: ParsedResponse,
                     rois: Sequence[str] = ()) -> TurnRecord:
        turn = TurnRecord(len(session.turns), stage, prompt, raw, parsed,
                          "reasoner", self.clock(), list(rois))
        session.turns.append(turn)
        self._log(session, {"type": "turn", **turn.to_dict()})
        return turn

    def _finish(self, session: DiagnosticSession, boxed: str | None,
                inconclusive: bool) -> None:
        session.final_diagnosis = boxed
        session.inconclusive = inconclusive
        session.stage = DONE
        session.stage_history.append(DONE)
        self._log(session, {
            "type": "final",
            "final_diagnosis": boxed,
            "inconclusive": inconclusive,
            "stage_history": list(session.stage_history),
            "rounds": session.rounds,
            "timestamp": self.clock(),
        })

    def _abort(self, session: DiagnosticSession, cause: str) -> None:
        session.abort_cause = cause
        session.stage = ABORTED
        session.stage_history.append(ABORTED)
        self._log(session, {"type": "aborted", "cause": cause,
                            "timestamp": self.clock()})

    def _adopt_plan_lists(self, session: DiagnosticSession,
                          parsed: ParsedResponse) -> None:
        if parsed.diff_list:
            session.differential = list(parsed.diff_list)
        session.pending_exams = list(dict.fromkeys(parsed.exam_list or []))
        session.pending_tools = list(dict.fromkeys(parsed.tool_list or []))

    # -- screening -----------------------------------------------------------

    def _screen(self, session: DiagnosticSession,
                rng: np.random.Generator) -> tuple[list[str], str | None]:
        """Generic-abnormality grounding plus the general interpreter call.
        Returns (roi refs, findings text or None on empty highlight)."""
        toolkit = self.toolkits.get(session.config.screening_toolkit)
        plan = self.plans[session.config.screening_plan]
        try:
            selection = run_selection_plan(self.corpus, session.slide_id, toolkit,
                                           plan, rng)
        except EmptyHighlightError:
            session.screening = {"rois": [], "finding": "no suspicious region found"}
            self._log(session, {"type": "screening", "rois": [],
                                "text": "no suspicious region found",
                                "timestamp": self.clock()})
            return [], None
        refs = selection.refs(session.slide_id)
        request = BackendRequest(
            "interpreter", render_interpreter_general(session.case_info),
            mode=MODE_GENERAL, images=tuple(refs),
            metadata={"tool": "screening", "plan": plan.name})
        findings = self._call("interpreter", request)
        session.screening = {"rois": refs, "finding": findings}
        self._log(session, {"type": "screening", "rois": refs, "text": findings,
                            "timestamp": self.clock()})
        return refs, findings

    def _case_block(self, session: DiagnosticSession) -> str:
        screening = session.screening or {}
        finding = screening.get("finding")
        if finding and finding != "no suspicious region found":
            return f"{session.case_info}\n\n{finding}"
        if screening.get("rois") == []:
            return session.case_info + "\n\nSlide screening: no suspicious region found."
        return session.case_info

    # -- public operations ----------------------------------------------------

    def start_session(self, case_info: str, slide_id: str,
                      config: SessionConfig | None = None,
                      session_id: str | None = None) -> DiagnosticSession:
        """Initial screening pipeline plus the exploratory reasoner turn."""
        config = config or SessionConfig()
        session = DiagnosticSession(
            session_id or f"{slide_id}-seed{config.seed}",
            case_info, slide_id, config)
        session.stage_history.append(EXPLORATION)
        self._log(session, {
            "type": "session", "v": LOG_VERSION, "session_id": session.session_id,
            "slide_id": slide_id, "case_info": case_info, "seed": config.seed,
            "max_rounds": config.max_rounds, "screening_plan": config.screening_plan,
            "timestamp": self.clock(),
        })
        try:
            refs, _ = self._screen(session, session.generator())
            prompt = render_exploratory(self._case_block(session),
                                        self.registry.roster())
            raw = self._call("reasoner", BackendRequest("reasoner", prompt))
        except (BackendUnavailable, BackendRejected, NotFoundError) as exc:
            self._abort(session, str(exc))
            return session
        parsed = parse_response(raw)
        self._record_turn(session, EXPLORATION, prompt, raw, parsed, refs)
        self._adopt_plan_lists(session, parsed)
        if parsed.boxed:
            self._finish(session, parsed.boxed, inconclusive=False)
        return session

    # -- evidence round --------------------------------------------------------

    def _interpret_icl(self, session: DiagnosticSession, spec: ToolSpec,
                       category: str, refs: Sequence[str],
                       support_ids: Sequence[str]) -> str:
        count = session.config.icl_count
        count = spec.icl_reference_count if count is None else count
        references = tuple(support_ids[:count])
        if count == 0 or not references:
            request = BackendRequest(
                "interpreter", render_interpreter_general(session.case_info),
                mode=MODE_GENERAL, images=tuple(refs),
                metadata={"tool": spec.name, "category": category})
        else:
            request = BackendRequest(
                "interpreter", render_interpreter_icl(),
                mode=MODE_ICL, images=tuple(refs), references=references,
                metadata={"tool": spec.name, "category": category})
        return self._call("interpreter", request)

    @staticmethod
    def _is_yes(reply: str) -> bool:
        return reply.strip().casefold().startswith("yes")

    def _run_plan_tool(self, session: DiagnosticSession, spec: ToolSpec,
                       toolkit: Toolkit) -> tuple[str, list[str]]:
        plan = self.plans[spec.plan]
        try:
            selection = run_selection_plan(self.corpus, session.slide_id, toolkit,
                                           plan, session.generator())
        except EmptyHighlightError:
            return f"{spec.category_label or spec.name}: no suspicious region found", []
        refs = selection.refs(session.slide_id)
        category = spec.category_label or toolkit.categories[0]
        support = toolkit.support_ids_for_category(category)
        reply = self._interpret_icl(session, spec, category, refs, support)
        verdict = "positive" if self._is_yes(reply) else "negative"
        return f"{category}: {verdict}", refs

    def _run_topk_tool(self, session: DiagnosticSession, spec: ToolSpec,
                       toolkit: Toolkit) -> tuple[str, list[str]]:
        per_category: dict[str, list[str]] = {}
        for level in spec.levels or toolkit.levels():
            coords, emb = self.corpus.fetch_arrays(session.slide_id, level)
            level_tk = toolkit.at_level(level)
            sim = similarity_matrix(emb, level_tk)
            located = localize_entities(sim, level_tk, spec.k, coords, level)
            for proto in level_tk.prototypes:
                refs = located[proto.description].refs(session.slide_id)
                per_category.setdefault(proto.category, []).extend(refs)
        verdicts: dict[str, bool] = {}
        all_refs: list[str] = []
        for category in toolkit.categories:
            refs = per_category.get(category, [])
            if not refs:
                continue
            all_refs.extend(refs)
            support = toolkit.support_ids_for_category(category)
            reply = self._interpret_icl(session, spec, category, refs, support)
            verdicts[category] = self._is_yes(reply)
        return self._aggregate(spec, verdicts), all_refs

    @staticmethod
    def _aggregate(spec: ToolSpec, verdicts: Mapping[str, bool]) -> str:
        label = spec.category_label or spec.name
        if spec.aggregator == "grade":
            best = None
            for category, yes in verdicts.items():
                if not yes:
                    continue
                digits = re.findall(r"\d+", category)
                if digits:
                    value = int(digits[-1])
                    best = value if best is None else max(best, value)
            return f"{label}: {best}" if best is not None else f"{label}: indeterminate"
        if spec.aggregator == "invasion":
            detected = any(yes for category, yes in verdicts.items()
                           if "with invasion" in category.casefold())
            return f"{label}: {'detected' if detected else 'not detected'}"
        positives = [c for c, yes in verdicts.items() if yes]
        return f"{label}: {'positive' if positives else 'negative'}"

    def _run_area_tool(self, session: DiagnosticSession, spec: ToolSpec,
                       toolkit: Toolkit) -> tuple[str, list[str]]:
        level = (spec.levels or ("20x",))[0]
        _, emb = self.corpus.fetch_arrays(session.slide_id, level)
        level_tk = toolkit.at_level(level)
        sim = similarity_matrix(emb, level_tk)
        area = self.corpus.pitch(session.slide_id, level) or 1
        try:
            result = gleason_area_map(sim, level_tk, area_per_patch=float(area * area))
        except NoTumorError:
            return f"{spec.category_label or spec.name}: no tumor pattern detected", []
        patterns = ", ".join(
            f"{p}={result.counts.get(p, 0)} patches" for p in ("G3", "G4", "G5"))
        label = spec.category_label or spec.name
        return f"{label}: {result.score} ({patterns})", []

    def execute_evidence_round(self, session: DiagnosticSession,
                               exam_input: Mapping[str, str] | None = None) -> DiagnosticSession:
        """Run every pending tool through the highlighter + interpreter and
        resolve pending exams from human input or the exam oracle."""
        if session.finished:
            raise SessionError("session already finished")
        session.stage = EXECUTION
        session.stage_history.append(EXECUTION)
        config = session.config

        tools = list(session.pending_tools)
        session.pending_tools = []
        if config.further_look:
            for name in tools:
                spec = self.registry.get(name)
                if spec is None:
                    session.unregistered_tools.append(name)
                    self._log(session, {"type": "tool_skipped", "tool": name,
                                        "timestamp": self.clock()})
                    continue
                try:
                    toolkit = self.toolkits.get(spec.toolkit)
                    if spec.selection == "plan":
                        text, rois = self._run_plan_tool(session, spec, toolkit)
                    elif spec.selection == "area_map":
                        text, rois = self._run_area_tool(session, spec, toolkit)
                    else:
                        text, rois = self._run_topk_tool(session, spec, toolkit)
                except (BackendUnavailable, BackendRejected) as exc:
                    self._abort(session, f"interpreter failed for {name}: {exc}")
                    return session
                except EngineError as exc:
                    # Tool does not apply to this slide (missing level, empty
                    # highlight, ...): record and continue.
                    text, rois = f"{name}: observation unavailable ({exc})", []
                item = {"tool": name, "text": text, "rois": rois}
                session.observations.append(item)
                self._log(session, {"type": "observation", **item,
                                    "timestamp": self.clock()})

        exams = list(session.pending_exams)
        session.pending_exams = []
        if exams and config.further_test:
            answered: set[str] = set()
            if exam_input:
                lines = []
                for exam in exams:
                    for key, value in exam_input.items():
                        if key.casefold() in exam.casefold() or key == exam:
                            lines.append(f"{key}: {value}")
                            answered.add(exam)
                            break
                extra = [f"{k}: {v}" for k, v in exam_input.items()
                         if not any(f"{k}:" in line for line in lines)]
                lines.extend(extra)
                if lines:
                    item = {"source": "human", "text": "\n".join(lines)}
                    session.exam_results.append(item)
                    self._log(session, {"type": "exam", **item,
                                        "timestamp": self.clock()})
            remaining = [e for e in exams if e not in answered]
            if remaining and (not exam_input or config.oracle_fallback):
                try:
                    text = self._call("exam_oracle", BackendRequest(
                        "exam_oracle",
                        "Provide results for the requested examinations.\n"
                        f"Case: {session.case_info}\nExaminations: {', '.join(remaining)}",
                        metadata={"exams": remaining, "case_info": session.case_info}))
                    source = "oracle" if not exam_input else "oracle-fallback"
                    item = {"source": source, "text": text}
                except (BackendUnavailable, BackendRejected) as exc:
                    item = {"source": "unavailable",
                            "text": f"results unavailable for: {', '.join(remaining)} ({exc})"}
                session.exam_results.append(item)
                self._log(session, {"type": "exam", **item, "timestamp": self.clock()})
            elif remaining and exam_input:
                item = {"source": "unanswered",
                        "text": f"no result provided for: {', '.join(remaining)}"}
                session.exam_results.append(item)
                self._log(session, {"type": "exam", **item, "timestamp": self.clock()})

        session.rounds += 1
        return session

    # -- decision step ----------------------------------------------------------

    def _evidence_texts(self, session: DiagnosticSession) -> tuple[str, str]:
        exam_text = "\n".join(e["text"] for e in session.exam_results) or "None provided."
        obs_text = "\n".join(o["text"] for o in session.observations) or "None."
        return exam_text, obs_text

    def conclude_or_iterate(self, session: DiagnosticSession) -> DiagnosticSession:
        """Definitive reasoning over the collected evidence. A malformed
        reply earns exactly one retry with the same prompt."""
        if session.finished:
            raise SessionError("session already finished")
        exam_text, obs_text = self._evidence_texts(session)
        history = f"Case Information:\n{self._case_block(session)}\n"
        if session.turns:
            history += f"\nPrevious answer:\n{session.turns[-1].raw_response}\n"
        prompt = history + "\n" + render_definitive(exam_text, obs_text)

        parsed = None
        for _ in range(2):
            try:
                raw = self._call("reasoner", BackendRequest("reasoner", prompt))
            except (BackendUnavailable, BackendRejected) as exc:
                self._abort(session, str(exc))
                return session
            parsed = parse_response(raw)
            stage = EXPLOITATION
            if parsed.format_errors == 0 and parsed.boxed is None \
                    and parsed.diff_list is not None:
                stage = REENTRY
            self._record_turn(session, stage, prompt, raw, parsed)
            if parsed.format_errors == 0:
                break
        assert parsed is not None

        if parsed.format_errors:
            self._finish(session, None, inconclusive=True)
            return session
        if parsed.boxed:
            if parsed.diff_list:
                session.differential = list(parsed.diff_list)
            self._finish(session, parsed.boxed, inconclusive=False)
            return session

        # Narrowed differential: iterate when budget and new requests allow.
        self._adopt_plan_lists(session, parsed)
        if session.has_pending and session.rounds < session.config.max_rounds:
            session.stage = EXPLORATION
            session.stage_history.append(REENTRY)
            if session.config.rescreen_on_reentry:
                try:
                    self._screen(session, session.generator())
                except (BackendUnavailable, BackendRejected) as exc:
                    self._abort(session, str(exc))
            return session
        self._finish(session, None, inconclusive=True)
        return session

    # -- drivers -----------------------------------------------------------------

    def run_case(self, case_info: str, slide_id: str,
                 config: SessionConfig | None = None,
                 session_id: str | None = None,
                 exam_provider: Callable[[Sequence[str]], Mapping[str, str] | None] | None
                 = None) -> DiagnosticSession:
        """Drive a session to completion (oracle/batch mode)."""
        session = self.start_session(case_info, slide_id, config, session_id)
        guard = 2 * session.config.max_rounds + 4
        while not session.finished and guard:
            guard -= 1
            if session.has_pending:
                answers = None
                if exam_provider and session.pending_exams:
                    answers = exam_provider(list(session.pending_exams))
                self.execute_evidence_round(session, answers)
                if session.finished:
                    break
            self.conclude_or_iterate(session)
        if not session.finished:
            self._abort(session, "round guard exceeded")
        return session

    def run_one_pass(self, case_info: str, slide_id: str,
                     config: SessionConfig | None = None,
                     session_id: str | None = None) -> DiagnosticSession:
        """Single-turn protocol: screening evidence, then an immediate
        final-diagnosis demand."""
        config = config or SessionConfig()
        session = DiagnosticSession(
            session_id or f"{slide_id}-op-seed{config.seed}",
            case_info, slide_id, config)
        session.stage_history.append(ONE_PASS)
        self._log(session, {
            "type": "session", "v": LOG_VERSION, "session_id": session.session_id,
            "slide_id": slide_id, "case_info": case_info, "seed": config.seed,
            "protocol": "op", "timestamp": self.clock(),
        })
        try:
            refs, _ = self._screen(session, session.generator())
            prompt = render_one_pass(self._case_block(session))
            raw = self._call("reasoner", BackendRequest("reasoner", prompt))
        except (BackendUnavailable, BackendRejected, NotFoundError) as exc:
            self._abort(session, str(exc))
            return session
        parsed = parse_response(raw)
        self._record_turn(session, ONE_PASS, prompt, raw, parsed, refs)
        if parsed.diff_list:
            session.differential = list(parsed.diff_list)
        self._finish(session, parsed.boxed, inconclusive=parsed.boxed is None)
        return session
