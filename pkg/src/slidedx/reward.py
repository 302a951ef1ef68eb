"""Verifiable reward over parsed diagnostic transcripts.

Scoring is branch-exact: any format error zeroes every component and costs
``format_penalty`` per error; otherwise the total is the rank-sensitive
diagnostic term plus examination-consistency and tool-call terms, minus a
hacking penalty when degenerate diagnosis lists are detected.

The judge that feeds the reward is an interface with a deterministic
rule-table implementation (default) so every number here is reproducible;
a remote judge can be swapped in over the backend wire protocol.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, ContractError
from .parsing import ParsedResponse

DIFFERENTIATES = "differentiates"
NEUTRAL = "neutral"
PROBLEMATIC = "problematic"
EXAM_QUALITIES = (DIFFERENTIATES, NEUTRAL, PROBLEMATIC)


@dataclass(frozen=True)
class RewardConfig:
    format_penalty: float = 0.5
    hacking_penalty: float = 0.3
    consistency_bonus: float = 0.1
    tool_bonus: float = 0.1
    alpha: float = 0.5

    def __post_init__(self):
        for name in ("format_penalty", "hacking_penalty", "consistency_bonus", "tool_bonus"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")


@dataclass(frozen=True)
class JudgeVerdict:
    match_position: int | None      # 1-based rank of the truth in the list
    exam_quality: str = NEUTRAL
    hacking: bool = False

    def __post_init__(self):
        if self.exam_quality not in EXAM_QUALITIES:
            raise ContractError(f"unknown exam quality {self.exam_quality!r}")


@dataclass(frozen=True)
class RewardBreakdown:
    diagnostic: float
    consistency: float
    tool: float
    hacking: bool
    format_errors: int
    total: float

    def to_dict(self) -> dict:
        return {
            "diagnostic": self.diagnostic,
            "consistency": self.consistency,
            "tool": self.tool,
            "hacking": self.hacking,
            "format_errors": self.format_errors,
            "total": self.total,
        }


def rank_weights(length: int, alpha: float) -> list[float]:
    """Softmax-over-rank weights exp(-i/alpha) normalized over i = 1..length."""
    if alpha <= 0:
        raise ContractError("alpha must be > 0")
    terms = [math.exp(-(i + 1) / alpha) for i in range(length)]
    total = math.fsum(terms)
    return [t / total for t in terms]


def diagnostic_reward(diagnoses: Sequence[str], match_position: int | None,
                      alpha: float) -> float:
    """Rank-sensitive reward: the matched rank's share of the softmax mass."""
    if match_position is None:
        return 0.0
    if not diagnoses:
        raise ContractError("match position given for an empty diagnosis list")
    if not 1 <= match_position <= len(diagnoses):
        raise ContractError(
            f"match position {match_position} outside 1..{len(diagnoses)}")
    return rank_weights(len(diagnoses), alpha)[match_position - 1]


def consistency_reward(exam_quality: str, bonus: float) -> float:
    if exam_quality == DIFFERENTIATES:
        return bonus
    if exam_quality == NEUTRAL:
        return 0.0
    if exam_quality == PROBLEMATIC:
        return -bonus
    raise ContractError(f"unknown exam quality {exam_quality!r}")


# ---------------------------------------------------------------------------
# tool-call rules


@dataclass(frozen=True)
class ToolRule:
    diagnosis: re.Pattern
    context: re.Pattern | None
    requires: tuple[str, ...]
    allows: tuple[str, ...]


@dataclass
class RuleSet:
    rules: list[ToolRule]
    known_tools: frozenset[str]
    always_allowed: frozenset[str]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RuleSet":
        rules = [
            ToolRule(
                re.compile(entry["diagnosis"], re.IGNORECASE),
                re.compile(entry["context"], re.IGNORECASE) if entry.get("context") else None,
                tuple(entry.get("requires", [])),
                tuple(entry.get("allows", [])),
            )
            for entry in doc.get("rules", [])
        ]
        return cls(rules, frozenset(doc.get("known_tools", [])),
                   frozenset(doc.get("always_allowed", [])))

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleSet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "RuleSet":
        return cls.from_dict(_load_packaged("tool_rules.json"))

    def requirements(self, top_diagnosis: str | None,
                     context_text: str = "",
                     tables: "JudgeTables | None" = None) -> tuple[set[str], set[str]]:
        """(required tools, allowed tools) for the ranked-first diagnosis."""
        required: set[str] = set()
        allowed: set[str] = set(self.always_allowed)
        if top_diagnosis is None:
            return required, allowed
        candidates = {top_diagnosis.casefold()}
        if tables is not None:
            candidates |= tables.canonical_forms(top_diagnosis)
        for rule in self.rules:
            if not any(rule.diagnosis.search(c) for c in candidates):
                continue
            if rule.context is not None and not rule.context.search(context_text or ""):
                continue
            required.update(rule.requires)
            allowed.update(rule.requires)
            allowed.update(rule.allows)
        return required, allowed


def toolcall_reward(called: Sequence[str], diagnoses: Sequence[str],
                    rules: RuleSet, bonus: float,
                    context_text: str = "",
                    tables: "JudgeTables | None" = None) -> float:
    """+bonus when every required tool was called and nothing inapplicable;
    -bonus on any falsely called (inapplicable or unknown) tool; 0 when no
    tool was warranted and none was called."""
    top = diagnoses[0] if diagnoses else None
    required, allowed = rules.requirements(top, context_text, tables)
    called = [c.strip() for c in called if c.strip()]
    falsely = [c for c in called if c not in rules.known_tools or c not in allowed]
    if falsely:
        return -bonus
    if required and required.issubset(called):
        return bonus
    return 0.0


def total_reward(parsed: ParsedResponse, verdict: JudgeVerdict,
                 cfg: RewardConfig, rules: RuleSet | None = None,
                 context_text: str = "",
                 tables: "JudgeTables | None" = None) -> RewardBreakdown:
    """Assemble the full breakdown for one parsed transcript."""
    if parsed.format_errors:
        return RewardBreakdown(0.0, 0.0, 0.0, False, parsed.format_errors,
                               -cfg.format_penalty * parsed.format_errors)
    diagnoses = parsed.diagnoses
    r_d = diagnostic_reward(diagnoses, verdict.match_position, cfg.alpha)
    r_e = consistency_reward(verdict.exam_quality, cfg.consistency_bonus)
    r_t = toolcall_reward(parsed.tool_list or [], diagnoses,
                          rules or RuleSet.default(), cfg.tool_bonus,
                          context_text, tables)
    total = r_d + r_e + r_t - (cfg.hacking_penalty if verdict.hacking else 0.0)
    return RewardBreakdown(r_d, r_e, r_t, verdict.hacking, 0, total)


# ---------------------------------------------------------------------------
# rule-based judge


def _load_packaged(name: str) -> dict:
    return json.loads(resources.files("slidedx.rules").joinpath(name).read_text())


@dataclass
class JudgeTables:
    """Deterministic stand-in for a model judge: synonym normalization,
    exclusion pairs, vague-diagnosis blacklist, and exam keyword rules."""

    synonyms: dict[str, str]
    strip_patterns: list[re.Pattern]
    exclusion_pairs: list[tuple[re.Pattern, re.Pattern]]
    vague: frozenset[str]
    exam_rules: list[tuple[re.Pattern, re.Pattern]]
    exam_problematic: list[tuple[re.Pattern, re.Pattern]]

    @classmethod
    def _build(cls, synonyms_doc: Mapping, exclusions_doc: Mapping,
               vague_doc: Mapping, exams_doc: Mapping) -> "JudgeTables":
        return cls(
            synonyms={k.casefold(): v.casefold()
                      for k, v in synonyms_doc.get("synonyms", {}).items()},
            strip_patterns=[re.compile(p, re.IGNORECASE)
                            for p in synonyms_doc.get("strip_patterns", [])],
            exclusion_pairs=[(re.compile(a, re.IGNORECASE), re.compile(b, re.IGNORECASE))
                             for a, b in exclusions_doc.get("pairs", [])],
            vague=frozenset(v.casefold() for v in vague_doc.get("entries", [])),
            exam_rules=[(re.compile(r["exam"], re.IGNORECASE),
                         re.compile(r["supports"], re.IGNORECASE))
                        for r in exams_doc.get("rules", [])],
            exam_problematic=[(re.compile(r["exam"], re.IGNORECASE),
                               re.compile(r["unless"], re.IGNORECASE))
                              for r in exams_doc.get("problematic", [])],
        )

    @classmethod
    def default(cls) -> "JudgeTables":
        return cls._build(_load_packaged("synonyms.json"),
                          _load_packaged("exclusions.json"),
                          _load_packaged("vague.json"),
                          _load_packaged("exams.json"))

    @classmethod
    def from_dir(cls, directory: str | Path) -> "JudgeTables":
        directory = Path(directory)

        def load(name):
            path = directory / name
            if path.is_file():
                return json.loads(path.read_text())
            return _load_packaged(name)

        return cls._build(load("synonyms.json"), load("exclusions.json"),
                          load("vague.json"), load("exams.json"))

    def _norm(self, text: str) -> str:
        text = re.sub(r"\s+", " ", text.casefold()).strip()
        return text.rstrip(" .,;")

    def canonical_forms(self, diagnosis: str) -> frozenset[str]:
        """Every comparable spelling of a diagnosis string: the normalized
        string, qualifier-stripped variants, the parenthetical-free variant,
        each parenthetical alone, all mapped through the synonym table."""
        forms: set[str] = set()
        base = self._norm(diagnosis)
        if base:
            forms.add(base)
        stripped = base
        for pattern in self.strip_patterns:
            stripped = pattern.sub("", stripped).strip()
        if stripped:
            forms.add(self._norm(stripped))
        for source in list(forms):
            without = self._norm(re.sub(r"\([^)]*\)", " ", source))
            if without:
                forms.add(without)
            for inner in re.findall(r"\(([^)]*)\)", source):
                inner = self._norm(inner)
                if inner:
                    forms.add(inner)
        # Composite entries like "thymic carcinoma / thymoma" match either part.
        for source in list(forms):
            if "/" in source:
                forms.update(self._norm(part) for part in source.split("/"))
        return frozenset(self.synonyms.get(f, f) for f in forms if f)

    def matches(self, a: str, b: str) -> bool:
        return bool(self.canonical_forms(a) & self.canonical_forms(b))

    def match_position(self, diagnoses: Sequence[str], truth: str) -> int | None:
        truth_forms = self.canonical_forms(truth)
        for i, candidate in enumerate(diagnoses):
            if self.canonical_forms(candidate) & truth_forms:
                return i + 1
        return None

    def is_hacking(self, diagnoses: Sequence[str]) -> bool:
        forms = [self.canonical_forms(d) for d in diagnoses]
        for i in range(len(forms)):
            for j in range(i + 1, len(forms)):
                if forms[i] & forms[j]:
                    return True  # duplicated / degenerate entries
        texts = [" ; ".join(sorted(f)) for f in forms]
        for pat_a, pat_b in self.exclusion_pairs:
            if any(pat_a.search(t) for t in texts) and any(pat_b.search(t) for t in texts):
                return True
        for form_set in forms:
            if form_set & self.vague:
                return True
        return False

    def exam_quality(self, exams: Sequence[str] | None,
                     diagnoses: Sequence[str]) -> str:
        """Three-way call on the requested examinations; a best-effort
        keyword table, not a clinical authority."""
        if not exams:
            return NEUTRAL
        diag_text = " ; ".join(sorted(set().union(
            *[self.canonical_forms(d) for d in diagnoses]))) if diagnoses else ""
        for exam in exams:
            for exam_pat, unless_pat in self.exam_problematic:
                if exam_pat.search(exam) and not unless_pat.search(diag_text):
                    return PROBLEMATIC
        best_coverage = 0
        for exam in exams:
            for exam_pat, supports_pat in self.exam_rules:
                if not exam_pat.search(exam):
                    continue
                covered = sum(
                    1 for d in diagnoses
                    if any(supports_pat.search(f) for f in self.canonical_forms(d)))
                best_coverage = max(best_coverage, covered)
        if best_coverage >= 2 or (best_coverage >= 1 and len(diagnoses) <= 1):
            return DIFFERENTIATES
        return NEUTRAL


def rule_based_judge(diagnoses: Sequence[str], truth: str,
                     tables: JudgeTables | None = None,
                     exams: Sequence[str] | None = None) -> JudgeVerdict:
    """Deterministic verdict: first synonym-normalized match position,
    hacking via exclusion/vague/duplicate tables, exam quality via the
    keyword table."""
    tables = tables or JudgeTables.default()
    return JudgeVerdict(
        match_position=tables.match_position(diagnoses, truth),
        exam_quality=tables.exam_quality(exams, diagnoses),
        hacking=tables.is_hacking(diagnoses),
    )


class RuleJudge:
    """Default judge implementation: fully deterministic rule tables."""

    def __init__(self, tables: JudgeTables | None = None):
        self.tables = tables or JudgeTables.default()

    def verdict(self, diagnoses: Sequence[str], truth: str,
                exams: Sequence[str] | None = None) -> JudgeVerdict:
        return rule_based_judge(diagnoses, truth, self.tables, exams)


class RemoteJudge:
    """Judge behind the backend wire protocol (role ``judge``).

    The serving side must answer with a JSON object
    ``{"match_position": int|null, "exam_quality": str, "hacking": bool}``.
    Requests carry independent context only, so one instance is safe for
    concurrent sessions.
    """

    PROMPT = (
        "You are grading a differential diagnosis against a ground truth.\n"
        "Reply with a single JSON object with keys match_position "
        "(1-based index of the entry matching the truth, or null), "
        "exam_quality (one of differentiates/neutral/problematic), and "
        "hacking (true for conflicting, duplicated, or overly vague lists).\n"
        "Ground truth: {truth}\nDiagnoses: {diagnoses}\nExaminations: {exams}"
    )

    def __init__(self, backend):
        self.backend = backend

    def verdict(self, diagnoses: Sequence[str], truth: str,
                exams: Sequence[str] | None = None) -> JudgeVerdict:
        from .backends import BackendRequest

        prompt = self.PROMPT.format(truth=truth, diagnoses=json.dumps(list(diagnoses)),
                                    exams=json.dumps(list(exams or [])))
        reply = self.backend.complete(BackendRequest(
            "judge", prompt,
            metadata={"truth": truth, "diagnoses": list(diagnoses),
                      "exams": list(exams or [])}))
        try:
            doc = json.loads(reply)
            position = doc.get("match_position")
            return JudgeVerdict(
                match_position=int(position) if position is not None else None,
                exam_quality=doc.get("exam_quality", NEUTRAL),
                hacking=bool(doc.get("hacking", False)),
            )
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ContractError(f"judge reply is not a valid verdict: {exc}") from exc


def score_transcript(raw: str, truth: str, cfg: RewardConfig,
                     rules: RuleSet | None = None,
                     tables: JudgeTables | None = None,
                     context_text: str = "") -> RewardBreakdown:
    """Parse + judge + score one raw transcript against a ground truth."""
    from .parsing import parse_response

    tables = tables or JudgeTables.default()
    parsed = parse_response(raw)
    verdict = rule_based_judge(parsed.diagnoses, truth, tables, parsed.exam_list)
    return total_reward(parsed, verdict, cfg, rules, context_text, tables)
