"""Acceptance gate: one test per criterion, each printing a PASS line and
enforcing its runtime budget. Run with ``pytest tests/test_acceptance.py -v -s``.

The console end-to-end criterion lives in the frontend package
(frontend/tests); everything here runs without the console built.
"""
import json
import math
import random
import string
import time
from contextlib import contextmanager

import numpy as np
import pytest

from slidedx.backends import MockModelServer, Script, http_backends, scripted_backends
from slidedx.evaluation import (
    Harness,
    accuracy,
    balanced_accuracy,
    gleason_accuracy,
    invasion_prf,
    load_cases,
    run_ablation,
)
from slidedx.highlight import (
    GROUNDING,
    LOCALIZATION,
    Prototype,
    Toolkit,
    ground_regions,
    localize_entities,
    select_rois_region,
    similarity_matrix,
)
from slidedx.parsing import ParsedResponse, parse_response, render_answer
from slidedx.report import write_ablation_report
from slidedx.reward import JudgeVerdict, RewardConfig, rank_weights, total_reward
from slidedx.session import CounterClock, Engine, SessionConfig
from slidedx.synthetic import reasoner_reply

from tests.conftest import case_script, load_case, make_engine


@contextmanager
def criterion(number, name, budget_seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    print(f"\nACCEPTANCE {number} ({name}): PASS in {elapsed:.2f}s "
          f"(budget {budget_seconds}s)")
    assert elapsed < budget_seconds, f"criterion {number} exceeded runtime budget"


# --------------------------------------------------------------------------
# 1. reward closed forms


def test_criterion_1_reward_closed_forms():
    with criterion(1, "reward closed-form suite", 10):
        for alpha in (0.5, 2.0):
            for length in range(1, 65):
                assert abs(math.fsum(rank_weights(length, alpha)) - 1.0) <= 1e-12

        def oracle(length, position, alpha):
            weights = [math.exp(-j / alpha) for j in range(1, length + 1)]
            return weights[position - 1] / math.fsum(weights)

        cfg = RewardConfig()
        from slidedx.reward import diagnostic_reward
        assert abs(diagnostic_reward(["x"], 1, 0.5) - 1.0) <= 1e-9
        assert abs(diagnostic_reward(list("abc"), 1, 0.5) - oracle(3, 1, 0.5)) <= 1e-9
        assert abs(diagnostic_reward(list("abc"), 2, 2.0) - oracle(3, 2, 2.0)) <= 1e-9

        rng = random.Random(2024)
        verdict = JudgeVerdict(None)
        for _ in range(10_000):
            n_f = rng.choice([1, 2])
            mutated = ParsedResponse(
                format_errors=n_f,
                diff_list=[f"dx {rng.randrange(50)}"
                           for _ in range(rng.randrange(5))] or None,
                exam_list=[f"exam {rng.randrange(50)}"
                           for _ in range(rng.randrange(4))] or None,
                tool_list=[f"tool-{rng.randrange(9)}"
                           for _ in range(rng.randrange(3))] or None,
                boxed=f"dx {rng.randrange(50)}" if rng.random() < 0.5 else None,
            )
            out = total_reward(mutated, verdict, cfg)
            assert out.total == -cfg.format_penalty * n_f
            assert out.diagnostic == out.consistency == out.tool == 0.0


# --------------------------------------------------------------------------
# 2. highlighter oracle equivalence


def _cosine_oracle_rows(emb, protos, rows):
    out = {}
    for i in rows:
        row = []
        for j in range(protos.shape[0]):
            dot = math.fsum(float(emb[i, k]) * float(protos[j, k])
                            for k in range(emb.shape[1]))
            na = math.sqrt(math.fsum(float(emb[i, k]) ** 2
                                     for k in range(emb.shape[1])))
            nb = math.sqrt(math.fsum(float(protos[j, k]) ** 2
                                     for k in range(emb.shape[1])))
            row.append(dot / (na * nb))
        out[i] = row
    return out


def _localization_toolkit(protos):
    return Toolkit("tk", LOCALIZATION,
                   [Prototype(f"d{i}", "10x", protos[i], ("r",), f"d{i}")
                    for i in range(protos.shape[0])])


def _grounding_toolkit(protos, highlight_cols):
    return Toolkit("tk", GROUNDING,
                   [Prototype(f"d{i}", "10x", protos[i], ("r",), f"d{i}")
                    for i in range(protos.shape[0])],
                   frozenset(f"d{i}" for i in highlight_cols))


def test_criterion_2_highlighter_oracles():
    with criterion(2, "highlighter oracle equivalence", 60):
        rng = np.random.default_rng(777)
        py_rng = random.Random(777)
        max_dev = 0.0
        for trial in range(1000):
            n = int(math.exp(py_rng.uniform(0, math.log(2000))))
            t = py_rng.randint(1, 16)
            d = py_rng.randint(1, 64)
            emb = rng.normal(size=(n, d)).astype(np.float32)
            protos = rng.normal(size=(t, d))
            toolkit = _localization_toolkit(protos)
            sim = similarity_matrix(emb, toolkit, block_rows=py_rng.choice([7, 64, 8192]))

            # cosine values against the scalar fsum oracle (subsampled when huge)
            budget = 200_000
            if n * t * d <= budget:
                rows = range(n)
            else:
                rows = sorted(py_rng.sample(range(n), max(1, budget // (t * d))))
            for i, expected in _cosine_oracle_rows(emb, protos, rows).items():
                dev = max(abs(sim.values[i, j] - expected[j]) for j in range(t))
                max_dev = max(max_dev, dev)

            # argmax grounding against a per-row scan
            highlight_cols = sorted(py_rng.sample(range(t), py_rng.randint(1, t)))
            gtk = _grounding_toolkit(protos, highlight_cols)
            grounding = ground_regions(sim, gtk)
            for i in range(n):
                best = max(range(t), key=lambda j: (sim.values[i, j], -j))
                assert grounding.assignments[i] == best
            expected_hr = [i for i in range(n)
                           if int(grounding.assignments[i]) in highlight_cols]
            assert grounding.highlighted.tolist() == expected_hr

            # per-column top-k against full sort
            k = py_rng.randint(1, 8)
            coords = np.array([[i, 0] for i in range(n)])
            located = localize_entities(sim, toolkit, k, coords, "10x")
            for j in range(t):
                expected_idx = sorted(range(n),
                                      key=lambda i: (-sim.values[i, j], i))[:min(k, n)]
                assert [e.x for e in located[f"d{j}"].entries] == expected_idx

            # RoI selection: top-k prefix matches full sort; random part disjoint
            if expected_hr:
                hr = np.array(expected_hr)
                k_top = py_rng.randint(0, 4)
                k_rand = py_rng.randint(0, 4)
                sel = select_rois_region(hr, sim, gtk, coords, "10x", k_top, k_rand,
                                         np.random.default_rng(trial))
                scores = sim.values[np.ix_(hr, np.array(highlight_cols))].max(axis=1)
                order = sorted(range(len(hr)), key=lambda p: (-scores[p], hr[p]))
                expected_top = [int(hr[p]) for p in order[:min(k_top, len(hr))]]
                got_top = [e.x for e in sel.entries if e.provenance == "topk"]
                assert got_top == expected_top
                got_all = [e.x for e in sel.entries]
                assert len(got_all) == len(set(got_all))
                assert set(got_all) <= set(expected_hr)
                assert len(got_all) == min(k_top + k_rand, len(hr))

        assert max_dev <= 1e-5, f"cosine deviation {max_dev}"

        # exact scale invariance of assignments under positive scaling
        emb = rng.normal(size=(500, 16))
        protos = rng.normal(size=(6, 16))
        gtk = _grounding_toolkit(protos, [0, 2])
        base = ground_regions(similarity_matrix(emb, gtk), gtk)
        for c in (0.5, 2.0, 3.7, 1e-4, 1024.0):
            scaled = ground_regions(similarity_matrix(emb * c, gtk), gtk)
            assert np.array_equal(base.assignments, scaled.assignments)
            assert np.array_equal(base.highlighted, scaled.highlighted)


# --------------------------------------------------------------------------
# 3. fixture conformance over the wire


FIXTURE_EXPECTATIONS = [
    ("ccrcc-grade3", "Clear cell renal cell carcinoma (ccRCC), nuclear grade 3",
     ["exploration", "execution", "done"]),
    ("gastric-invasion", "Gastric adenocarcinoma",
     ["exploration", "execution", "done"]),
    ("thymic-biopsy", "Thymic carcinoma",
     ["exploration", "execution", "exploration-reentry", "execution", "done"]),
]


def test_criterion_3_fixture_conformance(workspace, corpus, toolkits):
    with criterion(3, "fixture conformance over mock HTTP", 30):
        for case_id, final, stages in FIXTURE_EXPECTATIONS:
            case = load_case(workspace, case_id)
            script = case_script(workspace, case)
            with MockModelServer(script) as server:
                engine = Engine(corpus, toolkits,
                                http_backends(server.url, timeout=5),
                                clock=CounterClock())
                session = engine.run_case(case["case_info"], case["slide_id"],
                                          SessionConfig(seed=7),
                                          session_id=case_id)
            assert session.stage == "done", f"{case_id} did not finish"
            assert session.final_diagnosis == final, f"{case_id} final mismatch"
            assert session.stage_history == stages, f"{case_id} stage mismatch"
            if case_id == "ccrcc-grade3":
                seen = {r["metadata"].get("tool")
                        for r in script.requests["interpreter"]}
                assert {"tool-ccRCC", "tool-chRCC", "tool-pRCC",
                        "tool-Nuclear"} <= seen
                icl = [r for r in script.requests["interpreter"]
                       if r.get("mode") == "icl"]
                assert any(r["metadata"].get("tool") == "tool-Nuclear" for r in icl)


# --------------------------------------------------------------------------
# 4. parser robustness


def test_criterion_4_parser_robustness(workspace):
    with criterion(4, "parser robustness", 60):
        rng = random.Random(31337)
        alphabet = string.printable
        fragments = ["<think>", "</think>", "<answer>", "</answer>", "\\DiffList{",
                     "\\ExamList{", "\\ToolCallList{", "\\boxed{", "}", "{", ",",
                     "(", ")"]
        for _ in range(100_000):
            if rng.random() < 0.5:
                raw = "".join(rng.choice(alphabet)
                              for _ in range(rng.randrange(0, 120)))
            else:
                raw = "".join(rng.choice(fragments) if rng.random() < 0.6
                              else rng.choice(alphabet)
                              for _ in range(rng.randrange(0, 30)))
            parsed = parse_response(raw)
            assert parsed.format_errors in (0, 1, 2)

        # every bundled fixture answer parses cleanly
        for case_id, _, _ in FIXTURE_EXPECTATIONS:
            case = load_case(workspace, case_id)
            script = json.loads((workspace / case["script"]).read_text())
            replies = [e["response"] for e in script if e["role"] == "reasoner"]
            assert replies
            for reply in replies:
                assert parse_response(reply).format_errors == 0

        # round-trip on generated well-formed responses
        from tests.test_parsing import random_well_formed
        gen = random.Random(4242)
        for _ in range(2000):
            original = random_well_formed(gen)
            reparsed = parse_response(render_answer(original))
            assert reparsed.format_errors == 0
            assert reparsed.diff_list == original.diff_list
            assert reparsed.exam_list == original.exam_list
            assert reparsed.tool_list == original.tool_list
            assert reparsed.boxed == original.boxed


# --------------------------------------------------------------------------
# 5. protocol properties


# The decision step is not its own recorded node: its outcomes (done, or a
# re-entry followed by another evidence round) may follow exploration
# directly (short/direct routes) or an execution round.
ALLOWED_TRANSITIONS = {
    "exploration": {"execution", "exploration-reentry", "done", "aborted"},
    "execution": {"exploration-reentry", "done", "aborted"},
    "exploration-reentry": {"execution", "done", "aborted"},
}


def _random_reasoner_text(rng):
    roll = rng.random()
    if roll < 0.25:
        return "".join(rng.choice(string.printable) for _ in range(rng.randrange(0, 60)))
    diff = [f"diagnosis {rng.randrange(20)}" for _ in range(rng.randrange(0, 4))]
    exams = [f"exam {rng.randrange(20)}" for _ in range(rng.randrange(0, 3))]
    tools = [rng.choice(["tool-ccRCC", "tool-Nuclear", "tool-invasion",
                         "tool-Gleason", "tool-bogus", "tool-pRCC"])
             for _ in range(rng.randrange(0, 3))]
    boxed = f"diagnosis {rng.randrange(20)}" if roll < 0.55 else None
    if not diff and boxed is None:
        boxed = f"diagnosis {rng.randrange(20)}"
    return reasoner_reply("fuzz", diff=diff or None, exams=exams, tools=tools,
                          boxed=boxed)


def _adversarial_script(rng):
    entries = []
    for _ in range(40):
        entries.append({"role": "interpreter",
                        "response": rng.choice(["Yes", "No", "maybe", "findings"])})
    for _ in range(12):
        entries.append({"role": "reasoner", "response": _random_reasoner_text(rng)})
    for _ in range(6):
        entries.append({"role": "exam_oracle", "response": "result: equivocal"})
    return Script(entries)


def test_criterion_5_protocol_properties(workspace, corpus, toolkits, tmp_path):
    with criterion(5, "protocol properties", 120):
        # replay determinism through the in-process scripted backends
        logs = []
        for run in (1, 2):
            log_dir = tmp_path / f"replay{run}"
            case = load_case(workspace, "thymic-biopsy")
            engine = make_engine(corpus, toolkits, case_script(workspace, case),
                                 log_dir=log_dir)
            engine.run_case(case["case_info"], case["slide_id"],
                            SessionConfig(seed=11), session_id="replay")
            logs.append((log_dir / "replay.jsonl").read_bytes())
        assert logs[0] == logs[1]

        slides = ["kidney-01", "stomach-01", "biopsy-01", "prostate-01", "normal-01"]
        max_rounds = 3
        for trial in range(500):
            slide = random.Random(trial).choice(slides)
            log_bytes = []
            first_session = None
            for attempt in (0, 1):
                # identical seed -> identical script -> identical transcript
                script = _adversarial_script(random.Random(trial))
                log_dir = tmp_path / f"fuzz-{trial}-{attempt}"
                engine = Engine(corpus, toolkits, scripted_backends(script),
                                clock=CounterClock(), log_dir=log_dir)
                session = engine.start_session(
                    "fuzz case", slide,
                    SessionConfig(seed=trial, max_rounds=max_rounds),
                    session_id="fuzz")
                evidence_sizes = [session.evidence_size()]
                guard = 2 * max_rounds + 4
                while not session.finished and guard:
                    guard -= 1
                    if session.has_pending:
                        engine.execute_evidence_round(session)
                    else:
                        engine.conclude_or_iterate(session)
                    evidence_sizes.append(session.evidence_size())
                log_bytes.append((log_dir / "fuzz.jsonl").read_bytes())
                if attempt == 1:
                    break
                first_session = session
                # bounded termination
                assert session.finished, f"trial {trial} did not terminate"
                assert session.rounds <= max_rounds
                assert len(session.turns) <= 1 + 2 * (max_rounds + 1)
                # evidence monotonicity
                assert all(b >= a
                           for a, b in zip(evidence_sizes, evidence_sizes[1:]))
                # stage graph
                history = session.stage_history
                assert history[0] == "exploration"
                for a, b in zip(history, history[1:]):
                    assert b in ALLOWED_TRANSITIONS.get(a, set()), \
                        f"illegal transition {a} -> {b}"
            # replay determinism on every fuzzed session
            assert log_bytes[0] == log_bytes[1], f"trial {trial} replay diverged"
            assert first_session is not None


# --------------------------------------------------------------------------
# 6. metrics oracle


def _prf_oracle(preds, truths):
    from collections import Counter
    counts = Counter((p, t) for p, t in zip(preds, truths))
    tp = counts[(True, True)]
    fp = counts[(True, False)]
    fn = counts[(False, True)]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def test_criterion_6_metrics_oracle():
    with criterion(6, "metrics oracle equivalence", 60):
        from tests.test_evaluation import brute_force_confusion
        rng = random.Random(99)
        for _ in range(1000):
            classes = [f"c{i}" for i in range(rng.randint(2, 5))]
            n = rng.randint(len(classes), 80)
            truths = classes * 1 + [rng.choice(classes) for _ in range(n)]
            preds = [rng.choice(classes + ["junk", None]) for _ in range(len(truths))]
            bacc, recalls, _ = balanced_accuracy(preds, truths, classes)
            acc = accuracy(preds, truths)
            o_bacc, o_acc, o_recalls = brute_force_confusion(preds, truths, classes)
            assert bacc == o_bacc and acc == o_acc and recalls == o_recalls

            flags = [rng.random() < 0.5 for _ in range(rng.randint(1, 40))]
            truth_flags = [rng.random() < 0.5 for _ in flags]
            p, r, f1, _ = invasion_prf(flags, truth_flags)
            assert (p, r, f1) == _prf_oracle(flags, truth_flags)

            pred_pair = (rng.choice([3, 4, 5]), rng.choice([3, 4, 5]))
            truth_pair = (rng.choice([3, 4, 5]), rng.choice([3, 4, 5]))
            primary, combined = gleason_accuracy(pred_pair, truth_pair)
            assert primary == (pred_pair[0] == truth_pair[0])
            assert combined == (pred_pair == truth_pair)

        # BAcc equals Acc on exactly class-balanced corpora
        for trial in range(200):
            rng2 = random.Random(trial)
            classes = [f"c{i}" for i in range(rng2.randint(2, 6))]
            per_class = rng2.randint(1, 10)
            truths, preds = [], []
            for c in classes:
                truths.extend([c] * per_class)
                preds.extend([c if rng2.random() < 0.7 else rng2.choice(classes)
                              for _ in range(per_class)])
            bacc, _, _ = balanced_accuracy(preds, truths, classes)
            assert bacc == pytest.approx(accuracy(preds, truths), abs=1e-12)


# --------------------------------------------------------------------------
# 7. ablation harness smoke


def test_criterion_7_ablation_smoke(workspace, corpus, toolkits, tmp_path):
    with criterion(7, "ablation harness smoke", 60):
        cases = [c for c in load_cases(workspace / "cases")
                 if c.case_id.startswith("renal-")]
        assert len(cases) == 10
        harness = Harness(corpus, toolkits)

        rows = run_ablation("evidence_sources", None, cases, harness)
        assert len(rows) == 4
        assert [tuple(r.cell.values()) for r in rows] == [
            (False, False), (True, False), (False, True), (True, True)]
        assert all(r.report.n_cases == 10 and r.report.n_failed == 0 for r in rows)
        paths = write_ablation_report("evidence_sources", rows,
                                      tmp_path / "evidence", figures=True)
        table = paths["txt"].read_text().splitlines()
        assert len(table) == 6 and "further_look" in table[0]
        doc = json.loads(paths["json"].read_text())
        assert len(doc["rows"]) == 4

        roi_rows = run_ablation("roi_plan",
                                [{"k_top": 1, "k_random": 2},
                                 {"k_top": 3, "k_random": 2},
                                 {"k_top": 6, "k_random": 2}],
                                cases, harness)
        assert len(roi_rows) == 3
        assert all(r.report.n_failed == 0 for r in roi_rows)
        paths = write_ablation_report("roi_plan", roi_rows, tmp_path / "roi",
                                      figures=True)
        assert paths["figure"].is_file()


# --------------------------------------------------------------------------
# 8. performance floor


def test_criterion_8_performance_floor():
    rng = np.random.default_rng(5150)
    emb = rng.standard_normal((100_000, 512), dtype=np.float32)
    protos = rng.standard_normal((32, 512))
    toolkit = _grounding_toolkit(protos, list(range(16)))

    with criterion(8, "similarity+grounding performance floor", 5):
        sim = similarity_matrix(emb, toolkit)
        grounding = ground_regions(sim, toolkit)

    assert grounding.assignments.shape == (100_000,)
    # oracle verification on a 1000-patch subsample (independent formula path)
    sample = np.random.default_rng(1).choice(100_000, size=1000, replace=False)
    protos64 = protos.astype(np.float64)
    pnorms = np.sqrt((protos64 * protos64).sum(axis=1))
    for i in sample:
        row = emb[i].astype(np.float64)
        expected = protos64 @ row / (pnorms * math.sqrt(float(row @ row)))
        assert np.max(np.abs(sim.values[i] - expected)) <= 1e-5
        assert grounding.assignments[i] == int(np.argmax(expected)) or \
            sim.values[i, grounding.assignments[i]] == expected.max()
