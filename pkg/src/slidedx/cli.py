"""``engine``: the single command surface over ingestion, toolkits,
highlighting, sessions, scoring, evaluation, ablations, and the service.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends import Script, scripted_backends
from .config import EngineConfig, load_config
from .errors import ConfigError, EngineError
from .evaluation import (
    Harness,
    build_report,
    load_cases,
    run_ablation,
)
from .highlight import (
    DEFAULT_PLANS,
    ToolkitStore,
    build_toolkit_from_spec,
    ground_regions,
    load_toolkit,
    run_selection_plan,
    save_toolkit,
    similarity_matrix,
)
from .reward import JudgeTables, RewardConfig, RuleSet, score_transcript
from .session import CounterClock, Engine, SessionConfig, system_clock
from .store import ingest_corpus

SCHEMA_VERSION = 1


def _machine(payload: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **payload}, sort_keys=True)


def _engine_from_config(cfg: EngineConfig, backends, log_dir=None) -> Engine:
    if cfg.corpus is None:
        raise ConfigError("no corpus configured (flag --corpus or [engine] corpus)")
    if cfg.toolkits is None:
        raise ConfigError("no toolkit directory configured")
    corpus = ingest_corpus(cfg.corpus, check=False)
    toolkits = ToolkitStore(cfg.toolkits)
    clock = CounterClock() if cfg.profile == "test" else system_clock
    return Engine(corpus, toolkits, backends, clock=clock,
                  log_dir=log_dir or cfg.logs)


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              help="Sectioned key/value config file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cli(ctx, config_path, as_json):
    """Evidence-seeking diagnostic engine over slide patch embeddings."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["json"] = as_json


def _cfg(ctx, **overrides) -> EngineConfig:
    return load_config(ctx.obj.get("config_path"), overrides=overrides)


@cli.command()
@click.option("--corpus", required=True, type=click.Path(path_type=Path))
@click.option("--check/--no-check", default=True)
@click.pass_context
def ingest(ctx, corpus, check):
    """Validate and summarize an embedding corpus."""
    handle = ingest_corpus(corpus, check=check)
    if ctx.obj["json"]:
        click.echo(_machine({
            "kind": "corpus",
            "dim": handle.dim,
            "slides": {s: handle.counts(s) for s in handle.slide_ids()},
            "records": handle.total_records(),
        }))
        return
    click.echo(f"corpus {corpus}: d={handle.dim}, "
               f"{len(handle.slide_ids())} slides, {handle.total_records()} patches")
    for slide in handle.slide_ids():
        counts = ", ".join(f"{lvl}: {n}" for lvl, n in sorted(handle.counts(slide).items()))
        click.echo(f"  {slide}  {counts}")


@cli.group()
def toolkit():
    """Build or inspect prototype toolkits."""


@toolkit.command("build")
@click.option("--corpus", required=True, type=click.Path(path_type=Path))
@click.option("--spec", "spec_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.pass_context
def toolkit_build(ctx, corpus, spec_path, out):
    """Materialize a toolkit from a declarative JSON spec."""
    handle = ingest_corpus(corpus, check=False)
    spec = json.loads(Path(spec_path).read_text())
    built = build_toolkit_from_spec(spec, handle)
    path = save_toolkit(built, out)
    if ctx.obj["json"]:
        click.echo(_machine({"kind": "toolkit", "name": built.name,
                             "prototypes": len(built.prototypes), "path": str(path)}))
    else:
        click.echo(f"toolkit {built.name}: {len(built.prototypes)} prototypes -> {path}")


@toolkit.command("inspect")
@click.option("--toolkits", "directory", required=True, type=click.Path(path_type=Path))
@click.argument("name")
@click.pass_context
def toolkit_inspect(ctx, directory, name):
    """Print a toolkit's prototypes and highlight set."""
    built = load_toolkit(directory, name)
    if ctx.obj["json"]:
        click.echo(_machine({
            "kind": "toolkit", "name": built.name, "mode": built.mode,
            "highlight": sorted(built.highlight),
            "prototypes": [{"description": p.description, "category": p.category,
                            "level": p.level, "support": len(p.support_ids),
                            "augmented": p.augmented} for p in built.prototypes],
        }))
        return
    click.echo(f"{built.name} ({built.mode}), dim={built.dim}")
    for proto in built.prototypes:
        mark = "*" if proto.description in built.highlight else " "
        aug = " [sub]" if proto.augmented else ""
        click.echo(f" {mark} {proto.description}  ({proto.category}, {proto.level}, "
                   f"M={len(proto.support_ids)}){aug}")


@cli.command()
@click.option("--corpus", type=click.Path(path_type=Path))
@click.option("--toolkits", type=click.Path(path_type=Path))
@click.option("--slide", required=True)
@click.option("--toolkit", "toolkit_name", required=True)
@click.option("--plan", "plan_name", default="pancancer", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path),
              help="Base path for grid CSV / RoI CSV / PNG outputs.")
@click.option("--figures/--no-figures", default=True)
@click.pass_context
def highlight(ctx, corpus, toolkits, slide, toolkit_name, plan_name, seed, out, figures):
    """Ground a slide with a toolkit and export the RoI selection."""
    import csv as _csv

    import numpy as np

    cfg = _cfg(ctx, corpus=corpus, toolkits=toolkits)
    handle = ingest_corpus(cfg.corpus, check=False)
    store = ToolkitStore(cfg.toolkits)
    built = store.get(toolkit_name)
    plan = DEFAULT_PLANS.get(plan_name)
    if plan is None:
        raise ConfigError(f"unknown plan {plan_name!r}")
    rng = np.random.default_rng(seed)
    selection = run_selection_plan(handle, slide, built, plan, rng)

    rows = [(e.ref(slide), e.level, e.x, e.y,
             "" if e.score is None else f"{e.score:.6f}", e.provenance)
            for e in selection.entries]
    if ctx.obj["json"]:
        click.echo(_machine({
            "kind": "highlight", "slide": slide, "toolkit": toolkit_name,
            "plan": plan_name, "shortfall": selection.shortfall,
            "rois": [dict(zip(("ref", "level", "x", "y", "score", "provenance"), r))
                     for r in rows],
        }))
    else:
        for row in rows:
            click.echo("  ".join(str(v) for v in row))
        if selection.shortfall:
            click.echo("note: highlighted region smaller than the requested plan")

    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out.with_suffix(".rois.csv"), "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["ref", "level", "x", "y", "score", "provenance"])
            writer.writerows(rows)
        # patch-grid label export per level
        for level in built.levels():
            try:
                coords, emb = handle.fetch_arrays(slide, level)
            except EngineError:
                continue
            level_tk = built.at_level(level)
            grounding = ground_regions(similarity_matrix(emb, level_tk), level_tk)
            with open(out.parent / f"{out.name}.grid-{level}.csv", "w", newline="") as fh:
                writer = _csv.writer(fh)
                writer.writerow(["x", "y", "description"])
                for i, (x, y) in enumerate(coords):
                    writer.writerow([int(x), int(y),
                                     level_tk.prototypes[int(grounding.assignments[i])]
                                     .description])
            if figures:
                from .report import write_grid_figure
                grid = {(int(x), int(y)):
                        level_tk.prototypes[int(grounding.assignments[i])].category
                        for i, (x, y) in enumerate(coords)}
                write_grid_figure(grid, out.parent / f"{out.name}.grid-{level}.png",
                                  title=f"{slide} {level} ({toolkit_name})")
        click.echo(f"exports written under {out.parent}")


@cli.command()
@click.option("--case", "case_path", required=True, type=click.Path(path_type=Path))
@click.option("--slide", "slide_id", default=None,
              help="Override the case file's slide id.")
@click.option("--mode", type=click.Choice(["oracle", "interactive"]), default="oracle",
              show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--script", "script_path", type=click.Path(path_type=Path),
              help="Scripted backend fixture (overrides the case file).")
@click.option("--exams", "exams_path", type=click.Path(path_type=Path),
              help="JSON file of exam answers for interactive mode.")
@click.option("--log-dir", type=click.Path(path_type=Path))
@click.pass_context
def run(ctx, case_path, slide_id, mode, seed, script_path, exams_path, log_dir):
    """Drive one diagnostic session to completion."""
    cfg = _cfg(ctx)
    case = json.loads(Path(case_path).read_text())
    script_file = script_path or (
        (Path(case_path).parent.parent / case["script"]) if case.get("script") else None)
    if script_file is not None:
        backends = scripted_backends(Script.from_file(script_file))
    else:
        backends = cfg.live_backends()
        if backends is None:
            raise ConfigError("no script and no live backend urls configured")

    engine = _engine_from_config(cfg, backends, log_dir=log_dir)
    session_config = SessionConfig(
        seed=cfg.seed if seed is None else seed, max_rounds=cfg.max_rounds)

    exam_provider = None
    if mode == "interactive":
        answers = {}
        if exams_path is not None:
            answers = json.loads(Path(exams_path).read_text())
        elif case.get("exam_answers"):
            answers = case["exam_answers"]
        exam_provider = lambda pending: answers or None

    session = engine.run_case(case["case_info"], slide_id or case["slide_id"],
                              session_config, session_id=case.get("case_id"),
                              exam_provider=exam_provider)
    log_path = engine.log_path(session.session_id)
    if ctx.obj["json"]:
        click.echo(_machine({
            "kind": "session", "session_id": session.session_id,
            "stage": session.stage, "stage_history": session.stage_history,
            "final_diagnosis": session.final_diagnosis,
            "inconclusive": session.inconclusive, "rounds": session.rounds,
            "log": str(log_path) if log_path else None,
        }))
        return
    click.echo(f"session {session.session_id}: {' -> '.join(session.stage_history)}")
    if session.stage == "aborted":
        raise EngineError(f"session aborted: {session.abort_cause}")
    if session.final_diagnosis:
        click.echo(f"final diagnosis: {session.final_diagnosis}")
    else:
        click.echo(f"inconclusive; differential: {', '.join(session.differential)}")
    if log_path:
        click.echo(f"log: {log_path}")


@cli.command()
@click.option("--transcript", required=True, type=click.Path(path_type=Path))
@click.option("--truth", "truth_path", required=True, type=click.Path(path_type=Path))
@click.option("--alpha", type=click.Choice(["0.5", "2"]), default="0.5",
              show_default=True)
@click.option("--rules-dir", type=click.Path(path_type=Path),
              help="Directory overriding the packaged rule tables.")
@click.option("--context", "context_path", type=click.Path(path_type=Path),
              help="Case/microscopic text used by context-sensitive tool rules.")
@click.pass_context
def score(ctx, transcript, truth_path, alpha, rules_dir, context_path):
    """Score one raw transcript against a ground-truth diagnosis."""
    raw = Path(transcript).read_text()
    truth = Path(truth_path).read_text().strip()
    context_text = Path(context_path).read_text() if context_path else ""
    tables = JudgeTables.from_dir(rules_dir) if rules_dir else JudgeTables.default()
    rules = (RuleSet.from_file(Path(rules_dir) / "tool_rules.json")
             if rules_dir and (Path(rules_dir) / "tool_rules.json").is_file()
             else RuleSet.default())
    cfg = _cfg(ctx)
    reward_cfg = RewardConfig(
        format_penalty=cfg.reward.format_penalty,
        hacking_penalty=cfg.reward.hacking_penalty,
        consistency_bonus=cfg.reward.consistency_bonus,
        tool_bonus=cfg.reward.tool_bonus,
        alpha=float(alpha),
    )
    breakdown = score_transcript(raw, truth, reward_cfg, rules, tables, context_text)
    if ctx.obj["json"]:
        click.echo(_machine({"kind": "reward", "truth": truth,
                             **breakdown.to_dict()}))
        return
    click.echo(f"format errors : {breakdown.format_errors}")
    click.echo(f"diagnostic    : {breakdown.diagnostic:+.4f}")
    click.echo(f"consistency   : {breakdown.consistency:+.4f}")
    click.echo(f"tool calls    : {breakdown.tool:+.4f}")
    click.echo(f"hacking       : {breakdown.hacking}")
    click.echo(f"total         : {breakdown.total:+.4f}")


@cli.command("eval")
@click.option("--corpus", "cases_dir", required=True, type=click.Path(path_type=Path),
              help="Directory of per-case fixture JSON files.")
@click.option("--protocol", type=click.Choice(["op", "es"]), required=True)
@click.option("--report", "report_base", type=click.Path(path_type=Path))
@click.option("--seed", default=None, type=int)
@click.option("--parallelism", default=None, type=int)
@click.option("--figures/--no-figures", default=True)
@click.pass_context
def eval_cmd(ctx, cases_dir, protocol, report_base, seed, parallelism, figures):
    """Run an evaluation protocol over a fixture corpus."""
    cfg = _cfg(ctx)
    cases = [c for c in load_cases(cases_dir) if c.protocol == protocol]
    if not cases:
        raise ConfigError(f"no {protocol} cases under {cases_dir}")
    corpus = ingest_corpus(cfg.corpus, check=False)
    toolkits = ToolkitStore(cfg.toolkits)
    tables = JudgeTables.from_dir(cfg.rules_dir) if cfg.rules_dir else None
    harness = Harness(corpus, toolkits, tables=tables,
                      live_backends=cfg.live_backends(), log_dir=cfg.logs,
                      parallelism=parallelism or cfg.parallelism)
    outcomes = harness.run_protocol(
        cases, protocol, SessionConfig(seed=cfg.seed if seed is None else seed,
                                       max_rounds=cfg.max_rounds))
    report = build_report(outcomes, protocol, harness.tables,
                          pemr_patterns=cfg.pemr_patterns)
    if report_base is not None:
        from .report import write_metrics_report
        paths = write_metrics_report(report, report_base, figures=figures)
        click.echo(f"report written: {', '.join(str(p) for p in paths.values())}",
                   err=ctx.obj["json"])
    if ctx.obj["json"]:
        click.echo(_machine({"kind": "metrics", **report.to_dict()}))
    else:
        from .report import metric_rows, text_table
        click.echo(text_table(["metric", "value"], metric_rows(report)))


@cli.command()
@click.option("--axis", type=click.Choice(["evidence_sources", "roi_plan", "icl_count"]),
              required=True)
@click.option("--grid", "grid_spec", default=None,
              help="JSON grid specification (inline or @file).")
@click.option("--corpus", "cases_dir", required=True, type=click.Path(path_type=Path),
              help="Directory of per-case fixture JSON files.")
@click.option("--report", "report_base", type=click.Path(path_type=Path))
@click.option("--figures/--no-figures", default=True)
@click.pass_context
def ablate(ctx, axis, grid_spec, cases_dir, report_base, figures):
    """Run one ablation axis over a fixture corpus."""
    cfg = _cfg(ctx)
    grid = None
    if grid_spec:
        text = (Path(grid_spec[1:]).read_text() if grid_spec.startswith("@")
                else grid_spec)
        grid = json.loads(text)
    cases = [c for c in load_cases(cases_dir) if c.protocol == "es"]
    corpus = ingest_corpus(cfg.corpus, check=False)
    toolkits = ToolkitStore(cfg.toolkits)
    tables = JudgeTables.from_dir(cfg.rules_dir) if cfg.rules_dir else None
    harness = Harness(corpus, toolkits, tables=tables,
                      live_backends=cfg.live_backends(),
                      parallelism=cfg.parallelism)
    rows = run_ablation(axis, grid, cases, harness,
                        SessionConfig(seed=cfg.seed, max_rounds=cfg.max_rounds))
    if report_base is not None:
        from .report import write_ablation_report
        paths = write_ablation_report(axis, rows, report_base, figures=figures)
        click.echo(f"report written: {', '.join(str(p) for p in paths.values())}",
                   err=ctx.obj["json"])
    if ctx.obj["json"]:
        click.echo(_machine({"kind": "ablation", "axis": axis,
                             "rows": [r.to_dict() for r in rows]}))
    else:
        from .report import ablation_headers, fmt_value, text_table
        keys = ablation_headers(rows)
        click.echo(text_table(
            keys + ["n_cases", "balanced_accuracy"],
            [[r.cell.get(k) for k in keys]
             + [r.report.n_cases, fmt_value(r.report.balanced_accuracy)] for r in rows]))


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--script", "script_path", type=click.Path(path_type=Path),
              help="Serve against a scripted backend fixture.")
@click.option("--static", "static_dir", type=click.Path(path_type=Path),
              help="Console build directory to serve at /.")
@click.option("--token", default=None, help="Require this bearer token.")
@click.pass_context
def serve(ctx, host, port, script_path, static_dir, token):
    """Start the session service consumed by the web console."""
    import uvicorn

    from .service import create_app

    cfg = _cfg(ctx)
    if script_path is not None:
        backends = scripted_backends(Script.from_file(script_path))
    else:
        backends = cfg.live_backends()
        if backends is None:
            raise ConfigError("no script and no live backend urls configured")
    engine = _engine_from_config(cfg, backends)
    app = create_app(engine, static_dir=static_dir, auth_token=token)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except EngineError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
