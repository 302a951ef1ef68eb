"""Deterministic demo workspace: corpus, toolkits, cases, and scripts.

Everything here is synthetic: patch embeddings are noisy samples around
fixed archetype directions so that grounding, localization, and the area
map behave predictably, and the bundled session scripts replay complete
diagnostic conversations against the scripted mock backends.

``python3 -m slidedx.synthetic <dir>`` writes the workspace; tests and the
demo CLI flows both consume it.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .highlight import ToolkitStore, build_toolkit_from_spec, save_toolkit
from .store import Corpus, ingest_corpus, write_corpus

DIM = 8
NOISE = 0.08

ARCHETYPES: dict[str, list[float]] = {
    "tumor":            [3.0, 0, 0, 0, 0, 0, 0, 0],
    "normal":           [-3.0, 0, 0, 0, 0, 0, 0, 0],
    "ccRCC":            [3.0, 2.5, 0, 0, 0, 0, 0, 0],
    "pRCC":             [3.0, 0, 2.5, 0, 0, 0, 0, 0],
    "chRCC":            [3.0, 0, 0, 2.5, 0, 0, 0, 0],
    "grade1":           [2.0, 0.5, 0, 0, -1.8, 0, 0, 0],
    "grade2":           [2.0, 0.5, 0, 0, -0.6, 0, 0, 0],
    "grade3":           [2.0, 0.5, 0, 0, 0.6, 0, 0, 0],
    "grade4":           [2.0, 0.5, 0, 0, 1.8, 0, 0, 0],
    "cc_grade3":        [3.0, 2.5, 0, 0, 0.6, 0, 0, 0],
    "vessels_with":     [2.0, 0, 0, 0, 0, 2.5, 0, 1.5],
    "vessels_without":  [-1.0, 0, 0, 0, 0, 2.5, 0, -1.5],
    "nerves_with":      [2.0, 0, 0, 0, 0, 0, 2.5, 1.5],
    "nerves_without":   [-1.0, 0, 0, 0, 0, 0, 2.5, -1.5],
    "g3":               [3.0, 0, 0, 0, 1.0, 0, 0, 2.0],
    "g4":               [3.0, 0, 0, 0, 2.0, 0, 0, 1.0],
    "g5":               [3.0, 0, 0, 0, 3.0, 0, 0, 0.2],
    "g_mix":            [3.0, 0, 0, 0, 1.5, 0, 0, 1.5],
    "stroma":           [-2.5, 0, 0, 0, 0, 0, 0, -0.5],
}


def _samples(rng: np.random.Generator, name: str, count: int) -> np.ndarray:
    base = np.array(ARCHETYPES[name], dtype=np.float64)
    return (base + rng.normal(scale=NOISE, size=(count, DIM))).astype(np.float32)


def _grid(groups: list[tuple[str, int]], rng: np.random.Generator):
    """Stack groups into one (coords, embeddings) level; group i sits on
    row y=i so support coordinates are predictable."""
    coords, rows = [], []
    for y, (name, count) in enumerate(groups):
        rows.append(_samples(rng, name, count))
        coords.extend([[x, y] for x in range(count)])
    return np.array(coords), np.vstack(rows)


def _xy(row: int, count: int) -> list[list[int]]:
    return [[x, row] for x in range(count)]


# ---------------------------------------------------------------------------
# corpus


def build_corpus(root: Path, seed: int = 2024) -> Corpus:
    rng = np.random.default_rng(seed)
    slides = {
        "kidney-01": {
            "10x": _grid([("ccRCC", 18), ("normal", 12)], rng),
            "20x": _grid([("cc_grade3", 20), ("normal", 10)], rng),
        },
        "stomach-01": {
            "5x": _grid([("tumor", 8), ("normal", 6), ("vessels_with", 3),
                         ("nerves_without", 2)], rng),
            "10x": _grid([("tumor", 14), ("normal", 10), ("vessels_with", 2),
                          ("vessels_without", 2)], rng),
            "20x": _grid([("tumor", 16), ("normal", 8)], rng),
        },
        "biopsy-01": {
            "10x": _grid([("tumor", 10), ("normal", 5)], rng),
            "20x": _grid([("tumor", 8), ("normal", 4)], rng),
        },
        "normal-01": {
            "10x": _grid([("normal", 16)], rng),
            "20x": _grid([("normal", 12)], rng),
        },
        "prostate-01": {
            "10x": _grid([("g_mix", 12), ("normal", 8)], rng),
            "20x": _grid([("g3", 30), ("g4", 10), ("normal", 8), ("stroma", 6)], rng),
        },
        # Reference slides backing the toolkit library.
        "ref-pan": {
            "10x": _grid([("tumor", 8), ("normal", 8)], rng),
            "20x": _grid([("tumor", 8), ("normal", 8)], rng),
        },
        "ref-rcc": {
            "10x": _grid([("ccRCC", 8), ("chRCC", 8), ("pRCC", 8), ("normal", 6)], rng),
            "20x": _grid([("ccRCC", 8), ("chRCC", 8), ("pRCC", 8), ("normal", 6)], rng),
        },
        "ref-nuclear": {
            "20x": _grid([("grade1", 10), ("grade2", 10), ("grade3", 10),
                          ("grade4", 10)], rng),
        },
        "ref-invasion": {
            "5x": _grid([("vessels_with", 6), ("vessels_without", 6),
                         ("nerves_with", 6), ("nerves_without", 6)], rng),
            "10x": _grid([("vessels_with", 6), ("vessels_without", 6),
                          ("nerves_with", 6), ("nerves_without", 6)], rng),
        },
        "ref-gleason": {
            "20x": _grid([("g3", 10), ("g4", 10), ("g5", 10), ("normal", 10),
                          ("stroma", 10)], rng),
        },
    }
    pitch = {sid: {level: 512 for level in levels} for sid, levels in slides.items()}
    path = write_corpus(root / "corpus", DIM, slides, pitch=pitch,
                        provenance="synthetic demo corpus")
    return ingest_corpus(path)


# ---------------------------------------------------------------------------
# toolkits


def _proto(description, category, level, slide, row, count, kmeans=0):
    entry = {
        "description": description,
        "category": category,
        "level": level,
        "support": {"slide": slide, "level": level, "xy": _xy(row, count)},
    }
    if kmeans:
        entry["kmeans"] = kmeans
    return entry


def toolkit_specs() -> list[dict]:
    specs = [
        {
            "name": "pancancer", "mode": "grounding", "seed": 0,
            "highlight": ["tumor (10x)", "tumor (20x)"],
            "prototypes": [
                _proto("tumor (10x)", "tumor", "10x", "ref-pan", 0, 8),
                _proto("normal (10x)", "normal", "10x", "ref-pan", 1, 8),
                _proto("tumor (20x)", "tumor", "20x", "ref-pan", 0, 8),
                _proto("normal (20x)", "normal", "20x", "ref-pan", 1, 8),
            ],
        },
        {
            "name": "nuclear-grade", "mode": "localization", "seed": 0,
            "highlight": [],
            "prototypes": [
                _proto(f"nuclear grade {g} nuclei (20x)", f"grade {g}", "20x",
                       "ref-nuclear", g - 1, 10)
                for g in (1, 2, 3, 4)
            ],
        },
        {
            "name": "invasion", "mode": "localization", "seed": 0,
            "highlight": [],
            "prototypes": [
                _proto(f"{cat} ({level})", cat, level, "ref-invasion", row, 6)
                for level in ("5x", "10x")
                for row, cat in enumerate(["vessels with invasion",
                                           "vessels without invasion",
                                           "nerves with invasion",
                                           "nerves without invasion"])
            ],
        },
        {
            "name": "gleason", "mode": "grounding", "seed": 0,
            "highlight": ["Gleason pattern 3 (20x)", "Gleason pattern 4 (20x)",
                          "Gleason pattern 5 (20x)"],
            "prototypes": [
                _proto("Gleason pattern 3 (20x)", "G3", "20x", "ref-gleason", 0, 10, kmeans=2),
                _proto("Gleason pattern 4 (20x)", "G4", "20x", "ref-gleason", 1, 10, kmeans=2),
                _proto("Gleason pattern 5 (20x)", "G5", "20x", "ref-gleason", 2, 10, kmeans=2),
                _proto("benign glands (20x)", "Normal", "20x", "ref-gleason", 3, 10, kmeans=2),
                _proto("stroma (20x)", "Stroma", "20x", "ref-gleason", 4, 10, kmeans=2),
            ],
        },
    ]
    for subtype, row in (("ccRCC", 0), ("chRCC", 1), ("pRCC", 2)):
        specs.append({
            "name": f"rcc-{subtype}", "mode": "grounding", "seed": 0,
            "highlight": [f"{subtype} pattern (10x)", f"{subtype} pattern (20x)"],
            "prototypes": [
                _proto(f"{subtype} pattern (10x)", subtype, "10x", "ref-rcc", row, 8,
                       kmeans=4),
                _proto("non-tumor (10x)", "other", "10x", "ref-rcc", 3, 6),
                _proto(f"{subtype} pattern (20x)", subtype, "20x", "ref-rcc", row, 8),
                _proto("non-tumor (20x)", "other", "20x", "ref-rcc", 3, 6),
            ],
        })
    return specs


def build_toolkits(root: Path, corpus: Corpus) -> ToolkitStore:
    directory = root / "toolkits"
    for spec in toolkit_specs():
        toolkit = build_toolkit_from_spec(spec, corpus)
        save_toolkit(toolkit, directory)
    return ToolkitStore(directory)


# ---------------------------------------------------------------------------
# scripts and cases


def reasoner_reply(think: str, diff=None, exams=None, tools=None, boxed=None) -> str:
    lines = []
    if diff is not None:
        lines.append("Differential Diagnoses: \\DiffList{" + ", ".join(diff) + "}")
    if exams is not None:
        lines.append("Further Examination Items: \\ExamList{" + ", ".join(exams) + "}")
    if tools is not None:
        lines.append("Further Observation Tool Calls: \\ToolCallList{" + ", ".join(tools) + "}")
    if boxed is not None:
        lines.append("\\boxed{" + boxed + "}")
    return f"<think>\n{think}\n</think>\n\n<answer>\n" + "\n".join(lines) + "\n</answer>"


KIDNEY_FINDINGS = (
    "Microscopic observation:\n"
    "Nests and sheets of polygonal cells with clear cytoplasm and distinct cell "
    "borders, separated by thin-walled vascular septa and replacing the renal "
    "parenchyma. Nuclei are round with prominent nucleoli; focal pleomorphism "
    "without necrosis or mitotic activity. The lesion is well demarcated."
)

STOMACH_FINDINGS = (
    "Microscopic observation:\n"
    "The gastric wall is replaced by irregular, back-to-back and cribriform "
    "glands with infiltrative tumor buds extending into a markedly desmoplastic "
    "stroma. Tumor cells show enlarged hyperchromatic nuclei, prominent nucleoli "
    "and frequent mitoses; a mixed inflammatory infiltrate is present."
)

BIOPSY_FINDINGS = (
    "Microscopic observation:\n"
    "A densely cellular proliferation of small-to-medium cells arranged in "
    "sheets and loose clusters with occasional papillary-like foci. Nuclei are "
    "uniform with finely dispersed chromatin and small nucleoli; the "
    "nuclear-to-cytoplasmic ratio is high. No organized stroma or necrosis."
)

PROSTATE_FINDINGS = (
    "Microscopic observation:\n"
    "Crowded small-to-medium glands with rigid lumens infiltrating between "
    "benign glands, focally fused into cribriform sheets. Nuclei show prominent "
    "nucleoli; intraluminal amphophilic secretions are noted."
)

IHC_RENAL = ["Immunohistochemical staining PAX8", "Immunohistochemical staining CD10",
             "Immunohistochemical staining CK7", "Immunohistochemical staining CK20"]


def _icl(verdict: str) -> dict:
    return {"role": "interpreter", "response": verdict}


def case_ccrcc_grade3() -> tuple[dict, list]:
    script = [
        {"role": "interpreter", "response": KIDNEY_FINDINGS},
        {"role": "reasoner", "response": reasoner_reply(
            "A well-demarcated renal tumor composed of clear polygonal cells in "
            "nests with delicate vascular septa favors a renal cell carcinoma. "
            "Clear cell, chromophobe, and papillary subtypes must be separated; "
            "PAX8/CD10/CK7/CK20 immunostains will discriminate them, and the "
            "renal observation tools plus nuclear grading are warranted.",
            diff=["Clear cell renal cell carcinoma (ccRCC)",
                  "Chromophobe renal cell carcinoma (chRCC)",
                  "Papillary renal cell carcinoma (pRCC)"],
            exams=IHC_RENAL,
            tools=["tool-ccRCC", "tool-chRCC", "tool-pRCC", "tool-Nuclear"])},
        _icl("Yes"),   # clear cell re-observation
        _icl("No"),    # chromophobe
        _icl("No"),    # papillary
        _icl("No"), _icl("No"), _icl("Yes"), _icl("No"),  # grades 1..4
        {"role": "exam_oracle", "table": {
            "PAX8": "Positive", "CD10": "Positive", "CK7": "Negative",
            "CK20": "Negative"}},
        {"role": "reasoner", "response": reasoner_reply(
            "PAX8 and CD10 positivity with CK7/CK20 negativity supports clear "
            "cell carcinoma; the clear cell observation is positive while "
            "chromophobe and papillary are negative, and the nuclear grade "
            "observation reads 3.",
            boxed="Clear cell renal cell carcinoma (ccRCC), nuclear grade 3")},
    ]
    case = {
        "case_id": "ccrcc-grade3",
        "case_info": "The slide is from the left kidney, with a tumor of 3.5 cm.",
        "slide_id": "kidney-01",
        "protocol": "es",
        "truth": {"diagnosis": "Clear cell renal cell carcinoma (ccRCC)",
                  "grade": {"scheme": "fuhrman", "value": 3}},
        "exam_answers": {"PAX8": "Positive", "CD10": "Positive",
                         "CK7": "Negative", "CK20": "Negative"},
        "script": "scripts/ccrcc-grade3.json",
    }
    return case, script


def case_gastric(invasive: bool = True) -> tuple[dict, list]:
    name = "gastric-invasion" if invasive else "gastric-noninvasive"
    script = [
        {"role": "interpreter", "response": STOMACH_FINDINGS},
        {"role": "reasoner", "response": reasoner_reply(
            "An antral tumor with complex infiltrative glands, marked atypia and "
            "desmoplasia points to gastric adenocarcinoma; neuroendocrine tumor, "
            "lymphoma, and stromal tumor remain in the differential. IHC plus "
            "Ki-67 and HER2 will separate them, and the infiltrative pattern "
            "justifies the invasion detection tool.",
            diff=["Gastric adenocarcinoma", "Gastric neuroendocrine tumor",
                  "Gastric lymphoma", "Gastric stromal tumor"],
            exams=["Immunohistochemistry (CK7, CK20, CDX2, Synaptophysin, CgA)",
                   "Ki-67 staining", "HER2 testing"],
            tools=["tool-invasion"])},
        _icl("Yes" if invasive else "No"),   # vessels with invasion
        _icl("No"),                           # vessels without invasion
        _icl("No"),                           # nerves with invasion
        _icl("No"),                           # nerves without invasion
        {"role": "exam_oracle", "table": {
            "Immunohistochemistry": "CK7: positive, CK20: positive, CDX2: positive, "
                                    "Synaptophysin: negative, CgA: negative",
            "Ki-67 staining": "increased proliferative index",
            "HER2 testing": "negative"}},
        {"role": "reasoner", "response": reasoner_reply(
            "Synaptophysin and CgA negativity excludes a neuroendocrine tumor; "
            "CK7/CK20/CDX2 positivity supports gastric adenocarcinoma, and the "
            + ("invasion tool detected lymphovascular invasion. "
               if invasive else "invasion tool found no invasion. ")
            + "Final call: \\boxed{Gastric adenocarcinoma}",
            boxed="Gastric adenocarcinoma")},
    ]
    case = {
        "case_id": name,
        "case_info": "Stomach (antrum) tumor resection; a 2.8 cm tumor in the "
                     "pyloric region extending to the duodenum.",
        "slide_id": "stomach-01",
        "protocol": "es",
        "truth": {"diagnosis": "Gastric adenocarcinoma", "invasion": invasive},
        "script": f"scripts/{name}.json",
    }
    return case, script


def case_thymic() -> tuple[dict, list]:
    script = [
        {"role": "interpreter", "response": BIOPSY_FINDINGS},
        {"role": "reasoner", "response": reasoner_reply(
            "An anterior mediastinal mass in a middle-aged woman with a densely "
            "cellular small-cell biopsy raises thymic epithelial tumor, lymphoma, "
            "germ cell tumor, and neuroendocrine tumor. A broad IHC panel and "
            "molecular testing are needed; no slide re-observation tool applies.",
            diff=["Thymic carcinoma / thymoma", "Lymphoma", "Germ cell tumor",
                  "Neuroendocrine tumor"],
            exams=["Immunohistochemistry (TdT, p63, CD30, CD20, CK, Syn, CgA)",
                   "Molecular testing (KRAS mutation testing, NRAS mutation "
                   "testing, BRAF mutation testing)"],
            tools=[])},
        {"role": "exam_oracle", "table": {
            "Immunohistochemistry": "TdT: negative, p63: positive, CD30: negative, "
                                    "CD20: negative, CK: positive, Syn: negative, "
                                    "CgA: negative",
            "Molecular testing": "results pending"}},
        {"role": "reasoner", "response": reasoner_reply(
            "TdT negativity argues against lymphoblastic processes, CD20 "
            "negativity against B-cell lymphoma, and Syn/CgA negativity against "
            "a neuroendocrine tumor; p63 and CK positivity favor a thymic "
            "epithelial tumor. Distinguishing thymic carcinoma from thymoma "
            "needs CD5, EMA, D2-40, and WT1.",
            diff=["Thymic carcinoma / thymoma"],
            exams=["Immunohistochemistry (CD5, EMA, D2-40, WT1)"])},
        {"role": "exam_oracle", "table": {
            "Immunohistochemistry": "CD5: positive, EMA: positive, D2-40: negative, "
                                    "WT1: negative"}},
        {"role": "reasoner", "response": reasoner_reply(
            "CD5 and EMA positivity in a thymic epithelial tumor favors thymic "
            "carcinoma over thymoma; D2-40 and WT1 negativity excludes "
            "mesothelial origin.",
            boxed="Thymic carcinoma")},
    ]
    case = {
        "case_id": "thymic-biopsy",
        "case_info": "A 47 year old Asian woman presented with malaise, weight "
                     "loss, chest pain and shortness of breath. CT showed an "
                     "anterior mediastinal mass measuring up to 8.3 x 7.1 x 8.2 "
                     "cm with infiltrative borders. A biopsy was performed.",
        "slide_id": "biopsy-01",
        "protocol": "es",
        "truth": {"diagnosis": "Thymic carcinoma"},
        "script": "scripts/thymic-biopsy.json",
    }
    return case, script


def case_prostate() -> tuple[dict, list]:
    script = [
        {"role": "interpreter", "response": PROSTATE_FINDINGS},
        {"role": "reasoner", "response": reasoner_reply(
            "Crowded infiltrative small glands with prominent nucleoli favor "
            "prostate adenocarcinoma; Gleason grading of the highlighted map is "
            "required, so the Gleason evaluation tool should run.",
            diff=["Prostate adenocarcinoma", "Benign prostatic hyperplasia"],
            exams=["PSA level"],
            tools=["tool-Gleason"])},
        {"role": "exam_oracle", "table": {"PSA": "elevated (18 ng/mL)"}},
        {"role": "reasoner", "response": reasoner_reply(
            "The elevated PSA and the measured pattern areas (primary pattern 3 "
            "with a significant pattern 4 component) complete the picture.",
            boxed="Prostate adenocarcinoma, Gleason score 3+4")},
    ]
    case = {
        "case_id": "prostate-gleason",
        "case_info": "Radical prostatectomy specimen; a firm peripheral-zone "
                     "nodule in a 66 year old man.",
        "slide_id": "prostate-01",
        "protocol": "es",
        "truth": {"diagnosis": "Prostate adenocarcinoma",
                  "gleason": {"primary": 3, "secondary": 4}},
        "script": "scripts/prostate-gleason.json",
    }
    return case, script


def op_case(case_id: str, slide_id: str, case_info: str, truth: str,
            findings: str, boxed: str) -> tuple[dict, list]:
    script = [
        {"role": "interpreter", "response": findings},
        {"role": "reasoner", "response": reasoner_reply(
            "Single-pass read of the slide evidence.", boxed=boxed)},
    ]
    case = {
        "case_id": case_id,
        "case_info": case_info,
        "slide_id": slide_id,
        "protocol": "op",
        "truth": {"diagnosis": truth},
        "script": f"scripts/{case_id}.json",
    }
    return case, script


RENAL_SUBTYPES = {
    "ccRCC": ("Clear cell renal cell carcinoma (ccRCC)",
              ["tool-ccRCC", "tool-Nuclear"]),
    "pRCC": ("Papillary renal cell carcinoma (pRCC)",
             ["tool-pRCC", "tool-Nuclear"]),
    "chRCC": ("Chromophobe renal cell carcinoma (chRCC)",
              ["tool-chRCC"]),
}


def renal_batch_case(index: int, subtype: str, truth_rank: int = 1,
                     final_correct: bool = True) -> tuple[dict, list]:
    """One scripted renal case for the batch/ablation corpus."""
    name, tools = RENAL_SUBTYPES[subtype]
    others = [RENAL_SUBTYPES[s][0] for s in RENAL_SUBTYPES if s != subtype]
    diff = list(others)
    diff.insert(truth_rank - 1, name)
    script = [
        {"role": "interpreter", "response": KIDNEY_FINDINGS},
        {"role": "reasoner", "response": reasoner_reply(
            "Renal tumor of clear appearance; subtype separation via immunostains "
            "and the renal observation tools, with nuclear grading where it "
            "applies.",
            diff=diff,
            exams=["Immunohistochemical staining PAX8",
                   "Immunohistochemical staining CD10",
                   "Immunohistochemical staining CK7"],
            tools=tools)},
    ]
    script.append(_icl("Yes"))  # subtype re-observation for the called tool
    if "tool-Nuclear" in tools:
        script.extend([_icl("No"), _icl("No"), _icl("Yes"), _icl("No")])
    script.append({"role": "exam_oracle", "table": {
        "PAX8": "Positive", "CD10": "Positive", "CK7": "Negative"}})
    final = name if final_correct else "Renal oncocytoma"
    script.append({"role": "reasoner", "response": reasoner_reply(
        "The immunoprofile and the re-observation settle the subtype.",
        boxed=final)})
    case = {
        "case_id": f"renal-{index:02d}",
        "case_info": f"Kidney tumor resection, specimen {index:02d}.",
        "slide_id": "kidney-01",
        "protocol": "es",
        "truth": {"diagnosis": name,
                  "grade": {"scheme": "fuhrman", "value": 3}
                  if "tool-Nuclear" in tools else None},
        "script": f"scripts/renal-{index:02d}.json",
    }
    return case, script


def batch_cases() -> list[tuple[dict, list]]:
    plan = [("ccRCC", 1, True), ("ccRCC", 1, True), ("ccRCC", 2, True),
            ("ccRCC", 1, False), ("pRCC", 1, True), ("pRCC", 1, True),
            ("pRCC", 2, True), ("chRCC", 1, True), ("chRCC", 1, True),
            ("chRCC", 1, True)]
    return [renal_batch_case(i, subtype, rank, ok)
            for i, (subtype, rank, ok) in enumerate(plan)]


def all_cases() -> list[tuple[dict, list]]:
    cases = [case_ccrcc_grade3(), case_gastric(True), case_gastric(False),
             case_thymic(), case_prostate()]
    cases.append(op_case(
        "op-ccrcc", "kidney-01",
        "The slide is from the left kidney, with a tumor of 3.5 cm.",
        "Clear cell renal cell carcinoma (ccRCC)", KIDNEY_FINDINGS,
        "Clear cell renal cell carcinoma (ccRCC)"))
    cases.append(op_case(
        "op-gastric", "stomach-01",
        "Stomach (antrum) tumor resection.",
        "Gastric adenocarcinoma", STOMACH_FINDINGS,
        "Gastric adenocarcinoma"))
    cases.extend(batch_cases())
    return cases


CONFIG_TEMPLATE = """[engine]
corpus = corpus
toolkits = toolkits
logs = logs
cases = cases
seed = 7
max_rounds = 3
parallelism = 2
profile = test

[reward]
format_penalty = 0.5
hacking_penalty = 0.3
consistency_bonus = 0.1
tool_bonus = 0.1
alpha = 0.5
"""


def build_demo_workspace(root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(root)
    build_toolkits(root, corpus)
    (root / "cases").mkdir(exist_ok=True)
    (root / "scripts").mkdir(exist_ok=True)
    for case, script in all_cases():
        (root / "cases" / f"{case['case_id']}.json").write_text(
            json.dumps(case, indent=2) + "\n")
        (root / case["script"]).write_text(json.dumps(script, indent=2) + "\n")
    (root / "engine.ini").write_text(CONFIG_TEMPLATE)
    return root


def main(argv: list[str] | None = None) -> int:
    args = argv if argv is not None else sys.argv[1:]
    target = Path(args[0]) if args else Path("demo-workspace")
    build_demo_workspace(target)
    print(f"demo workspace written to {target.resolve()}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
