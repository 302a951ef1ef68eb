"""Structured-output parsing for reasoner replies.

The reply grammar is one ``<think>...</think>`` block followed by one
``<answer>...</answer>`` block; inside the answer, list markers
``\\DiffList{...}``, ``\\ExamList{...}``, ``\\ToolCallList{...}`` and the
final form ``\\boxed{...}``. Parsing is total: malformed input never
raises, it is encoded in ``format_errors`` and absent fields.

``format_errors`` counts two independent error classes:

* tag structure - zero or multiple think/answer pairs, or malformed
  nesting/order;
* answer presentation - no answer block, or an answer containing neither
  a well-formed ``\\DiffList`` nor a well-formed ``\\boxed``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

_THINK_OPEN = re.compile(r"<think>")
_THINK_CLOSE = re.compile(r"</think>")
_ANSWER_OPEN = re.compile(r"<answer>")
_ANSWER_CLOSE = re.compile(r"</answer>")

DIFF_MARKER = "\\DiffList{"
EXAM_MARKER = "\\ExamList{"
TOOL_MARKER = "\\ToolCallList{"
BOXED_MARKER = "\\boxed{"


@dataclass
class ParsedResponse:
    """Structured view of one reasoner reply.

    List fields are ``None`` when the marker is absent and ``[]`` when the
    marker is present with empty braces (tracked separately so empty exam
    requests can be flagged).
    """

    think: str | None = None
    answer: str | None = None
    diff_list: list[str] | None = None
    exam_list: list[str] | None = None
    tool_list: list[str] | None = None
    boxed: str | None = None
    format_errors: int = 0

    @property
    def diagnoses(self) -> list[str]:
        """Ordered diagnosis list: the differential, else the boxed answer."""
        if self.diff_list:
            return list(self.diff_list)
        if self.boxed:
            return [self.boxed]
        return []

    def to_dict(self) -> dict:
        return {
            "think": self.think,
            "answer": self.answer,
            "diff_list": self.diff_list,
            "exam_list": self.exam_list,
            "tool_list": self.tool_list,
            "boxed": self.boxed,
            "format_errors": self.format_errors,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParsedResponse":
        return cls(**{k: doc.get(k) for k in
                      ("think", "answer", "diff_list", "exam_list", "tool_list",
                       "boxed", "format_errors")})


def _find_spans(pattern_open: re.Pattern, pattern_close: re.Pattern,
                text: str) -> tuple[list[int], list[int]]:
    return ([m.start() for m in pattern_open.finditer(text)],
            [m.start() for m in pattern_close.finditer(text)])


def _extract_braced(text: str, marker: str) -> str | None:
    """Content of the first balanced ``marker ... }`` span, or None."""
    start = text.find(marker)
    if start < 0:
        return None
    depth = 1
    i = start + len(marker)
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start + len(marker):i]
        i += 1
    return None


def split_items(content: str) -> list[str]:
    """Split a list body on top-level commas.

    Commas inside parentheses or nested braces never split; items are
    trimmed and empty items dropped.
    """
    items: list[str] = []
    buf: list[str] = []
    paren = 0
    brace = 0
    for ch in content:
        if ch == "(":
            paren += 1
        elif ch == ")" and paren > 0:
            paren -= 1
        elif ch == "{":
            brace += 1
        elif ch == "}" and brace > 0:
            brace -= 1
        elif ch == "," and paren == 0 and brace == 0:
            item = "".join(buf).strip()
            if item:
                items.append(item)
            buf = []
            continue
        buf.append(ch)
    tail = "".join(buf).strip()
    if tail:
        items.append(tail)
    return items


def parse_response(raw: str) -> ParsedResponse:
    """Parse an arbitrary reply; never raises."""
    if not isinstance(raw, str):
        raw = str(raw)
    parsed = ParsedResponse()

    t_open, t_close = _find_spans(_THINK_OPEN, _THINK_CLOSE, raw)
    a_open, a_close = _find_spans(_ANSWER_OPEN, _ANSWER_CLOSE, raw)
    tags_ok = (
        len(t_open) == 1 and len(t_close) == 1 and
        len(a_open) == 1 and len(a_close) == 1 and
        t_open[0] < t_close[0] < a_open[0] < a_close[0]
    )

    # Best-effort extraction even when the structure is wrong.
    if t_open and t_close:
        close = next((c for c in t_close if c > t_open[0]), None)
        if close is not None:
            parsed.think = raw[t_open[0] + len("<think>"):close].strip()
    if a_open and a_close:
        close = next((c for c in a_close if c > a_open[0]), None)
        if close is not None:
            parsed.answer = raw[a_open[0] + len("<answer>"):close].strip()

    if parsed.answer is not None:
        diff = _extract_braced(parsed.answer, DIFF_MARKER)
        exam = _extract_braced(parsed.answer, EXAM_MARKER)
        tool = _extract_braced(parsed.answer, TOOL_MARKER)
        boxed = _extract_braced(parsed.answer, BOXED_MARKER)
        if diff is not None:
            parsed.diff_list = split_items(diff)
        if exam is not None:
            parsed.exam_list = split_items(exam)
        if tool is not None:
            parsed.tool_list = split_items(tool)
        if boxed is not None:
            parsed.boxed = boxed.strip()

    presentation_ok = parsed.diff_list is not None or parsed.boxed is not None
    parsed.format_errors = int(not tags_ok) + int(not presentation_ok)
    return parsed


def render_answer(parsed: ParsedResponse) -> str:
    """Canonical re-serialization of a well-formed parse (round-trip aid)."""
    lines: list[str] = []
    if parsed.diff_list is not None:
        lines.append(f"Differential Diagnoses: {DIFF_MARKER}{', '.join(parsed.diff_list)}}}")
    if parsed.exam_list is not None:
        lines.append(f"Further Examination Items: {EXAM_MARKER}{', '.join(parsed.exam_list)}}}")
    if parsed.tool_list is not None:
        lines.append(
            f"Further Observation Tool Calls: {TOOL_MARKER}{', '.join(parsed.tool_list)}}}")
    if parsed.boxed is not None:
        lines.append(f"{BOXED_MARKER}{parsed.boxed}}}")
    think = parsed.think or ""
    return f"<think>\n{think}\n</think>\n\n<answer>\n" + "\n".join(lines) + "\n</answer>"
