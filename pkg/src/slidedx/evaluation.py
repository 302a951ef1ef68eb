"""Batch evaluation: protocols, metrics, and ablation grids.

Cases are independent and may run in parallel; aggregation is
order-independent. Diagnosis strings are compared through the same
normalization tables the reward judge uses, so the two consumers can
never disagree about what counts as a match.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .backends import Script, scripted_backends
from .errors import ConfigError, ContractError, EmptyEvalError, EngineError
from .highlight import ToolkitStore
from .reward import JudgeTables
from .session import CounterClock, DiagnosticSession, Engine, SessionConfig
from .store import Corpus

PROTOCOLS = ("op", "es")

PEMR_PATTERNS: dict[str, list[str]] = {
    "nuclear": ["nuclear grad", "tool-nuclear", "fuhrman", "furhman", "isup"],
    "gleason": ["gleason", "tool-gleason"],
    "invasion": ["invasion", "tool-invasion", "lymphovascular", "perineural"],
}


@dataclass
class CaseFixture:
    case_id: str
    case_info: str
    slide_id: str
    truth: str
    protocol: str = "es"
    grade_truth: Mapping | None = None        # {"scheme": ..., "value": n}
    gleason_truth: Mapping | None = None      # {"primary": p, "secondary": s}
    invasion_truth: bool | None = None
    script_path: Path | None = None
    exam_answers: Mapping[str, str] | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "CaseFixture":
        path = Path(path)
        doc = json.loads(path.read_text())
        truth = doc.get("truth") or {}
        if doc.get("protocol", "es") not in PROTOCOLS:
            raise ConfigError(f"{path.name}: unknown protocol {doc.get('protocol')!r}")
        script = doc.get("script")
        return cls(
            case_id=doc["case_id"],
            case_info=doc["case_info"],
            slide_id=doc["slide_id"],
            truth=truth.get("diagnosis", ""),
            protocol=doc.get("protocol", "es"),
            grade_truth=truth.get("grade"),
            gleason_truth=truth.get("gleason"),
            invasion_truth=truth.get("invasion"),
            script_path=(path.parent.parent / script) if script else None,
            exam_answers=doc.get("exam_answers"),
        )


def load_cases(directory: str | Path) -> list[CaseFixture]:
    directory = Path(directory)
    cases = [CaseFixture.from_file(p) for p in sorted(directory.glob("*.json"))]
    if not cases:
        raise EmptyEvalError(f"no case files under {directory}")
    return cases


@dataclass
class CaseOutcome:
    case: CaseFixture
    session: DiagnosticSession | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.session is not None


# ---------------------------------------------------------------------------
# metrics


def confusion_counts(predictions: Sequence[str], truths: Sequence[str],
                     classes: Sequence[str],
                     same: Callable[[str, str], bool]) -> dict[str, tuple[int, int]]:
    """Per-class (correct, total) pairs under a match predicate."""
    out = {c: [0, 0] for c in classes}
    for pred, truth in zip(predictions, truths):
        key = next((c for c in classes if same(truth, c)), None)
        if key is None:
            raise ContractError(f"truth {truth!r} not covered by classes")
        out[key][1] += 1
        if pred is not None and same(pred, truth):
            out[key][0] += 1
    return {c: (v[0], v[1]) for c, v in out.items()}


def balanced_accuracy(predictions: Sequence[str], truths: Sequence[str],
                      classes: Sequence[str] | None = None,
                      same: Callable[[str, str], bool] | None = None
                      ) -> tuple[float, dict[str, float], list[str]]:
    """Mean of per-class recalls; zero-instance classes are excluded and
    returned for flagging. Returns (bacc, per-class recalls, excluded)."""
    if not predictions or len(predictions) != len(truths):
        raise EmptyEvalError("empty or mismatched prediction/truth lists")
    same = same or (lambda a, b: a == b)
    if classes is None:
        classes = []
        for t in truths:
            if not any(same(t, c) for c in classes):
                classes.append(t)
    counts = confusion_counts(predictions, truths, classes, same)
    recalls = {c: correct / total for c, (correct, total) in counts.items() if total}
    excluded = [c for c, (_, total) in counts.items() if not total]
    if not recalls:
        raise EmptyEvalError("no class has any instance")
    return sum(recalls.values()) / len(recalls), recalls, excluded


def accuracy(predictions: Sequence[str], truths: Sequence[str],
             same: Callable[[str, str], bool] | None = None) -> float:
    if not predictions or len(predictions) != len(truths):
        raise EmptyEvalError("empty or mismatched prediction/truth lists")
    same = same or (lambda a, b: a == b)
    hits = sum(1 for p, t in zip(predictions, truths) if p is not None and same(p, t))
    return hits / len(predictions)


def pemr(transcripts: Sequence[str], patterns: Sequence[str]) -> float:
    """Fraction of transcripts whose pre-evidence text matches any pattern."""
    if not patterns:
        raise ConfigError("pemr requires at least one pattern")
    if not transcripts:
        return 0.0
    compiled = [re.compile(p, re.IGNORECASE) for p in patterns]
    hits = sum(1 for text in transcripts if any(p.search(text) for p in compiled))
    return hits / len(transcripts)


def gleason_accuracy(pred: tuple[int, int] | None,
                     truth: tuple[int, int]) -> tuple[bool, bool]:
    """(primary hit, ordered combined hit); 3+4 differs from 4+3."""
    for pattern in truth + (pred or ()):
        if pattern not in (3, 4, 5):
            raise ContractError(f"Gleason pattern {pattern} outside 3..5")
    if pred is None:
        return False, False
    return pred[0] == truth[0], pred == truth


def invasion_prf(predictions: Sequence[bool], truths: Sequence[bool]
                 ) -> tuple[float, float, float, list[str]]:
    """Precision, recall, F1 with the zero-denominator -> 0 convention."""
    if not predictions or len(predictions) != len(truths):
        raise EmptyEvalError("empty or mismatched prediction/truth lists")
    tp = sum(1 for p, t in zip(predictions, truths) if p and t)
    fp = sum(1 for p, t in zip(predictions, truths) if p and not t)
    fn = sum(1 for p, t in zip(predictions, truths) if not p and t)
    flags = []
    if tp + fp == 0:
        flags.append("no positive predictions; precision set to 0")
    if tp + fn == 0:
        flags.append("no positive truths; recall set to 0")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return precision, recall, f1, flags


def grade_to_band(scheme_value: int) -> str:
    """Nuclear grades collapse to low (1-2) vs high (3-4)."""
    return "low" if scheme_value <= 2 else "high"


# ---------------------------------------------------------------------------
# harness


class Harness:
    """Runs fixtures through the engine with scripted or live backends."""

    def __init__(self, corpus: Corpus, toolkits: ToolkitStore,
                 tables: JudgeTables | None = None,
                 live_backends: Mapping | None = None,
                 log_dir: str | Path | None = None,
                 parallelism: int = 1):
        self.corpus = corpus
        self.toolkits = toolkits
        self.tables = tables or JudgeTables.default()
        self.live_backends = live_backends
        self.log_dir = Path(log_dir) if log_dir else None
        self.parallelism = max(1, parallelism)

    def _engine_for(self, case: CaseFixture) -> Engine:
        if case.script_path is not None:
            backends = scripted_backends(Script.from_file(case.script_path))
        elif self.live_backends is not None:
            backends = self.live_backends
        else:
            raise ConfigError(f"case {case.case_id}: no script and no live backends")
        return Engine(self.corpus, self.toolkits, backends, clock=CounterClock(),
                      log_dir=self.log_dir)

    def run_case(self, case: CaseFixture, protocol: str | None = None,
                 config: SessionConfig | None = None) -> CaseOutcome:
        protocol = protocol or case.protocol
        config = config or SessionConfig(seed=0)
        try:
            engine = self._engine_for(case)
            if protocol == "op":
                session = engine.run_one_pass(case.case_info, case.slide_id,
                                              config, session_id=case.case_id)
            else:
                provider = None
                if case.exam_answers:
                    answers = dict(case.exam_answers)
                    provider = lambda pending: answers
                session = engine.run_case(case.case_info, case.slide_id, config,
                                          session_id=case.case_id,
                                          exam_provider=provider)
            return CaseOutcome(case, session)
        except EngineError as exc:
            return CaseOutcome(case, None, error=str(exc))

    def run_protocol(self, cases: Sequence[CaseFixture], protocol: str,
                     config: SessionConfig | None = None) -> list[CaseOutcome]:
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}")
        if self.parallelism == 1:
            outcomes = [self.run_case(c, protocol, config) for c in cases]
        else:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                outcomes = list(pool.map(
                    lambda c: self.run_case(c, protocol, config), cases))
        return sorted(outcomes, key=lambda o: o.case.case_id)


# ---------------------------------------------------------------------------
# report assembly


def _pre_evidence_text(session: DiagnosticSession) -> str:
    parts = []
    for turn in session.turns:
        if turn.stage in ("exploration", "op"):
            parts.append(turn.parsed.think or "")
            parts.append(turn.parsed.answer or "")
    return "\n".join(parts)


def _gleason_pred(session: DiagnosticSession) -> tuple[int, int] | None:
    for item in session.observations:
        match = re.search(r"Gleason score: (\d)\+(\d)", item["text"])
        if match:
            return int(match.group(1)), int(match.group(2))
    if session.final_diagnosis:
        match = re.search(r"[Gg]leason score (\d)\s*\+\s*(\d)", session.final_diagnosis)
        if match:
            return int(match.group(1)), int(match.group(2))
    return None


def _grade_pred(session: DiagnosticSession) -> int | None:
    for item in session.observations:
        match = re.search(r"Nuclear grade: (\d)", item["text"])
        if match:
            return int(match.group(1))
    return None


def _invasion_pred(session: DiagnosticSession) -> bool:
    return any("Invasion: detected" in item["text"] for item in session.observations)


@dataclass
class MetricsReport:
    protocol: str
    n_cases: int
    n_failed: int
    failed_case_ids: list[str]
    balanced_accuracy: float | None = None
    accuracy: float | None = None
    per_class_recall: dict[str, float] = field(default_factory=dict)
    excluded_classes: list[str] = field(default_factory=list)
    initial_bacc: float | None = None
    ddx_bacc: float | None = None
    ddx_length: float | None = None
    final_bacc: float | None = None
    pemr_rates: dict[str, float] = field(default_factory=dict)
    grade_accuracy: float | None = None
    gleason_primary_accuracy: float | None = None
    gleason_combined_accuracy: float | None = None
    invasion_precision: float | None = None
    invasion_recall: float | None = None
    invasion_f1: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def build_report(outcomes: Sequence[CaseOutcome], protocol: str,
                 tables: JudgeTables | None = None,
                 pemr_patterns: Mapping[str, Sequence[str]] | None = None) -> MetricsReport:
    tables = tables or JudgeTables.default()
    pemr_patterns = pemr_patterns or PEMR_PATTERNS
    same = tables.matches

    ok = [o for o in outcomes if o.ok]
    failed = [o.case.case_id for o in outcomes if not o.ok]
    report = MetricsReport(protocol=protocol, n_cases=len(outcomes),
                           n_failed=len(failed), failed_case_ids=failed)
    if not ok:
        report.flags.append("no successful cases")
        return report

    truths = [o.case.truth for o in ok]
    classes: list[str] = []
    for t in truths:
        if not any(same(t, c) for c in classes):
            classes.append(t)

    finals = [o.session.final_diagnosis for o in ok]
    report.accuracy = accuracy(finals, truths, same)
    report.balanced_accuracy, report.per_class_recall, report.excluded_classes = \
        balanced_accuracy(finals, truths, classes, same)

    if protocol == "es":
        initials, ddx_hits, lengths = [], [], []
        for o in ok:
            diff = o.session.turns[0].parsed.diff_list if o.session.turns else None
            initials.append(diff[0] if diff else None)
            ddx_hits.append(bool(diff) and
                            tables.match_position(diff, o.case.truth) is not None)
            if diff:
                lengths.append(len(diff))
        report.initial_bacc, _, _ = balanced_accuracy(initials, truths, classes, same)
        hit_preds = [t if hit else None for t, hit in zip(truths, ddx_hits)]
        report.ddx_bacc, _, _ = balanced_accuracy(hit_preds, truths, classes, same)
        report.ddx_length = sum(lengths) / len(lengths) if lengths else None
        report.final_bacc = report.balanced_accuracy

    texts = [_pre_evidence_text(o.session) for o in ok]
    report.pemr_rates = {task: pemr(texts, patterns)
                         for task, patterns in pemr_patterns.items()}

    graded = [(o, _grade_pred(o.session)) for o in ok if o.case.grade_truth]
    if graded:
        hits = sum(1 for o, pred in graded
                   if pred is not None and
                   grade_to_band(pred) == grade_to_band(int(o.case.grade_truth["value"])))
        report.grade_accuracy = hits / len(graded)

    gleasons = [(o, _gleason_pred(o.session)) for o in ok if o.case.gleason_truth]
    if gleasons:
        results = [gleason_accuracy(pred, (int(o.case.gleason_truth["primary"]),
                                           int(o.case.gleason_truth["secondary"])))
                   for o, pred in gleasons]
        report.gleason_primary_accuracy = sum(p for p, _ in results) / len(results)
        report.gleason_combined_accuracy = sum(c for _, c in results) / len(results)

    invasive = [(o, _invasion_pred(o.session)) for o in ok
                if o.case.invasion_truth is not None]
    if invasive:
        preds = [p for _, p in invasive]
        truths_b = [bool(o.case.invasion_truth) for o, _ in invasive]
        p, r, f1, flags = invasion_prf(preds, truths_b)
        report.invasion_precision, report.invasion_recall, report.invasion_f1 = p, r, f1
        report.flags.extend(flags)
    return report


# ---------------------------------------------------------------------------
# ablations

ABLATION_AXES = ("evidence_sources", "roi_plan", "icl_count")


@dataclass
class AblationRow:
    cell: dict
    report: MetricsReport

    def to_dict(self) -> dict:
        return {"cell": self.cell, "report": self.report.to_dict()}


def evidence_grid() -> list[dict]:
    return [{"further_look": a, "further_test": b}
            for a, b in ((False, False), (True, False), (False, True), (True, True))]


def run_ablation(axis: str, grid: Sequence | None, cases: Sequence[CaseFixture],
                 harness: Harness, base_config: SessionConfig | None = None
                 ) -> list[AblationRow]:
    """One protocol run per grid cell with the toggled configuration."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    base = base_config or SessionConfig(seed=0)

    cells: list[tuple[dict, SessionConfig]] = []
    if axis == "evidence_sources":
        for cell in (grid or evidence_grid()):
            if not {"further_look", "further_test"} <= set(cell):
                raise ConfigError(f"evidence cell {cell!r} missing toggles")
            cfg = SessionConfig(**{**base.__dict__, **cell})
            cells.append((dict(cell), cfg))
    elif axis == "icl_count":
        for count in (grid or (0, 1, 5, 10)):
            count = int(count)
            if count < 0:
                raise ConfigError("icl_count must be >= 0")
            cfg = SessionConfig(**{**base.__dict__, "icl_count": count})
            cells.append(({"icl_count": count}, cfg))
    else:  # roi_plan
        for cell in (grid or ({"k_top": 1, "k_random": 2}, {"k_top": 3, "k_random": 2},
                              {"k_top": 6, "k_random": 2})):
            k_top = int(cell.get("k_top", 3))
            k_random = int(cell.get("k_random", 2))
            if k_top < 0 or k_random < 0:
                raise ConfigError(f"invalid RoI cell {cell!r}")
            cells.append(({"k_top": k_top, "k_random": k_random}, base))

    rows = []
    for cell, cfg in cells:
        if axis == "roi_plan":
            outcomes = _run_with_plan(harness, cases, cfg, cell)
        else:
            outcomes = harness.run_protocol(cases, "es", cfg)
        rows.append(AblationRow(cell, build_report(outcomes, "es", harness.tables)))
    return rows


def _run_with_plan(harness: Harness, cases: Sequence[CaseFixture],
                   config: SessionConfig, cell: dict) -> list[CaseOutcome]:
    from .highlight import DEFAULT_PLANS

    plan = DEFAULT_PLANS["pancancer"].scaled(cell["k_top"], cell["k_random"])
    outcomes = []
    for case in cases:
        try:
            engine = harness._engine_for(case)
            engine.plans["pancancer"] = plan
            provider = None
            if case.exam_answers:
                answers = dict(case.exam_answers)
                provider = lambda pending: answers
            session = engine.run_case(case.case_info, case.slide_id, config,
                                      session_id=case.case_id, exam_provider=provider)
            outcomes.append(CaseOutcome(case, session))
        except EngineError as exc:
            outcomes.append(CaseOutcome(case, None, error=str(exc)))
    return sorted(outcomes, key=lambda o: o.case.case_id)
