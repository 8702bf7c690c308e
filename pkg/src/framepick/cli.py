"""Batch command-line interface.

Commands: sample, hybrid, eval (grounding|qa|recall), forge (stage1..4,
aggregate-et, stats), compare. Exit codes are stable for scripting:
2 usage, 3 backend failures, 4 data problems. Every output file embeds the
effective configuration.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import __version__
from .backends import (
    HashEmbeddingBackend,
    OracleGenerativeBackend,
    OracleSimilarityBackend,
    RemoteEmbeddingBackend,
    RemoteGenerativeBackend,
    UniformBackend,
)
from .config import RunConfig, load_run_config
from .engine import (
    SampleConfig,
    hybrid_sample,
    plan_from_dict,
    plan_to_dict,
    sample,
)
from .errors import (
    BackendError,
    DataError,
    ParseError,
    PrefilterExceedsWindow,
)
from .forge import (
    EtRecord,
    ForgeConfig,
    ForgeRun,
    RemoteAnnotatorClient,
    StubCaptioner,
    StubJudge,
    StubQaGenerator,
    aggregate_et,
    dataset_stats,
)
from .frames import build_candidate_pool, load_manifest
from .metrics import (
    frame_recall,
    grounding_metrics,
    grounding_report_dict,
    grounding_report_table,
    load_answer_records,
    load_interval_records,
    pair_by_item,
    qa_report,
)
from .synth import load_scenario

EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map error families onto the exit-code taxonomy."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PrefilterExceedsWindow as exc:
            _fail(EXIT_USAGE, str(exc))
        except (BackendError, ParseError) as exc:
            _fail(EXIT_BACKEND, str(exc))
        except (DataError, OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_DATA, str(exc))

    return wrapper


def _write_json(path: str, body: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _config_options(fn):
    fn = click.option("--config", "config_file", default=None,
                      help="INI config file (sections [sampler], [backend]).")(fn)
    fn = click.option("--sample-ratio", type=float, default=None)(fn)
    fn = click.option("--window-capacity", type=int, default=None)(fn)
    fn = click.option("--stride", type=int, default=None)(fn)
    fn = click.option("--n-ctx", type=int, default=None)(fn)
    fn = click.option("--emission-order",
                      type=click.Choice(["chronological", "by_score"]), default=None)(fn)
    fn = click.option("--parse-mode", type=click.Choice(["strict", "lenient"]),
                      default=None)(fn)
    fn = click.option("--jobs", type=int, default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--endpoint", "scorer_endpoint", default=None,
                      help="remote generative scorer URL")(fn)
    fn = click.option("--embedder-endpoint", default=None,
                      help="remote embedding service URL")(fn)
    fn = click.option("--model-id", default=None)(fn)
    fn = click.option("--timeout-s", type=float, default=None)(fn)
    fn = click.option("--template-dir", default=None)(fn)
    return fn


def _resolve_config(config_file, **flags) -> RunConfig:
    overrides = {k: v for k, v in flags.items() if v is not None}
    return load_run_config(config_file, overrides)


def _load_planted(path: str | None) -> frozenset[int]:
    if not path:
        raise click.UsageError("this backend needs --planted (JSON file of global indices)")
    with open(path, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    if isinstance(body, dict):
        body = body.get("planted", [])
    return frozenset(int(g) for g in body)


def _gen_backend(cfg: RunConfig, backend: str, planted_path: str | None):
    if backend == "uniform":
        return UniformBackend()
    if backend == "oracle":
        return OracleGenerativeBackend(_load_planted(planted_path))
    if backend == "generative":
        if not cfg.scorer_endpoint:
            raise click.UsageError("generative backend needs --endpoint "
                                   "(or backend.scorer_endpoint in the config file)")
        return RemoteGenerativeBackend(cfg.scorer_endpoint, cfg.model_id, cfg.timeout_s)
    raise DataError(f"unknown backend {backend!r}")


def _sim_backend(cfg: RunConfig, kind: str, planted_path: str | None):
    if kind == "oracle":
        return OracleSimilarityBackend(_load_planted(planted_path))
    if kind == "hash":
        return HashEmbeddingBackend(seed=cfg.seed)
    if kind == "remote":
        if not cfg.embedder_endpoint:
            raise click.UsageError("remote similarity needs --embedder-endpoint")
        return RemoteEmbeddingBackend(cfg.embedder_endpoint, cfg.timeout_s)
    raise DataError(f"unknown similarity backend {kind!r}")


def _sample_config(cfg: RunConfig, options=None, subtitles=None) -> SampleConfig:
    return SampleConfig(
        window_capacity=cfg.window_capacity,
        stride=cfg.stride,
        n_ctx=cfg.n_ctx,
        emission_order=cfg.emission_order,
        parse_mode=cfg.parse_mode,
        jobs=cfg.jobs,
        on_error=cfg.on_error,
        options=tuple(options) if options else None,
        subtitles=tuple(subtitles) if subtitles else None,
        template_dir=cfg.template_dir,
        transport_retries=cfg.retries,
    )


def _load_subtitles(path: str | None):
    if not path:
        return None
    subtitles = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            subtitles.append((float(rec["time_s"]), str(rec["text"])))
    return subtitles


def _echo_plan_summary(plan, out: str) -> None:
    click.echo(
        f"selected k={plan.k} frames (n_ctx={plan.n_ctx}, emission={plan.emission_order})"
        + (f", {len(plan.incidents)} incident(s)" if plan.incidents else "")
    )
    click.echo(f"wrote {out}")


@click.group()
@click.version_option(version=__version__, prog_name="framepick")
def main():
    """Query-aware frame sampling for long-video question answering."""


@main.command("sample")
@click.option("--manifest", required=True, help="frame manifest (JSONL), '-' for stdin")
@click.option("--query", required=True)
@click.option("--out", required=True, help="output plan path (JSON)")
@click.option("--backend", type=click.Choice(["uniform", "oracle", "similarity", "generative"]),
              default=None)
@click.option("--sim", "sim_kind", type=click.Choice(["oracle", "hash", "remote"]),
              default=None, help="similarity flavor when --backend similarity")
@click.option("--planted", default=None, help="planted relevant set for oracle backends")
@click.option("--option", "options_", multiple=True, help="candidate answer option (repeatable)")
@click.option("--subtitles", default=None, help="subtitle JSONL ({time_s, text})")
@_config_options
@guarded
def cmd_sample(manifest, query, out, backend, sim_kind, planted, options_, subtitles,
               config_file, **flags):
    """Score a video's frames against a query and write the sample plan."""
    cfg = _resolve_config(config_file, **flags)
    backend_kind = backend or cfg.backend
    sim_kind = sim_kind or cfg.sim_backend
    rows = load_manifest(manifest)
    pool = build_candidate_pool(rows, cfg.sample_ratio)
    if backend_kind == "similarity":
        chosen = _sim_backend(cfg, sim_kind, planted)
    else:
        chosen = _gen_backend(cfg, backend_kind, planted)
    plan = sample(pool, query, chosen,
                  _sample_config(cfg, options_, _load_subtitles(subtitles)))
    echo = cfg.to_dict() | {"command": "sample", "backend": backend_kind,
                            "manifest": manifest}
    _write_json(out, plan_to_dict(plan, echo))
    _echo_plan_summary(plan, out)


@main.command("hybrid")
@click.option("--manifest", required=True)
@click.option("--query", required=True)
@click.option("--out", required=True)
@click.option("--backend", type=click.Choice(["oracle", "generative"]), default=None,
              help="generative stage backend")
@click.option("--sim", "sim_kind", type=click.Choice(["oracle", "hash", "remote"]),
              default=None)
@click.option("--planted", default=None)
@click.option("--prefilter-k", type=int, default=None)
@click.option("--option", "options_", multiple=True)
@click.option("--subtitles", default=None)
@_config_options
@guarded
def cmd_hybrid(manifest, query, out, backend, sim_kind, planted, prefilter_k, options_,
               subtitles, config_file, **flags):
    """Coarse-to-fine sampling: similarity prefilter, then one generative window."""
    cfg = _resolve_config(config_file, **flags)
    if prefilter_k is not None:
        cfg.prefilter_k = prefilter_k
        cfg.validate()
    if cfg.prefilter_k > cfg.window_capacity:
        _fail(EXIT_USAGE,
              f"prefilter_k {cfg.prefilter_k} exceeds window capacity {cfg.window_capacity}")
    backend_kind = backend or ("oracle" if planted else "generative")
    rows = load_manifest(manifest)
    pool = build_candidate_pool(rows, cfg.sample_ratio)
    gen = _gen_backend(cfg, backend_kind, planted)
    sim = _sim_backend(cfg, sim_kind or cfg.sim_backend, planted)
    plan = hybrid_sample(pool, query, sim, gen, prefilter_k=cfg.prefilter_k,
                         config=_sample_config(cfg, options_, _load_subtitles(subtitles)))
    echo = cfg.to_dict() | {"command": "hybrid", "backend": backend_kind,
                            "manifest": manifest}
    _write_json(out, plan_to_dict(plan, echo))
    _echo_plan_summary(plan, out)


# -- evaluation ---------------------------------------------------------------

@main.group("eval")
def cmd_eval():
    """Metric computations over prediction/ground-truth files."""


@cmd_eval.command("grounding")
@click.option("--preds", required=True, help="predictions JSONL: {item_id, start_s, end_s}")
@click.option("--gts", required=True, help="ground truth JSONL: {item_id, start_s, end_s}")
@click.option("--out", required=True)
@click.option("--thresholds", default="0.3,0.5,0.7", show_default=True)
@click.option("--config", "config_file", default=None)
@guarded
def eval_grounding(preds, gts, out, thresholds, config_file):
    """Recall@1 at IoU thresholds and mean IoU."""
    cfg = _resolve_config(config_file)
    ths = tuple(float(t) for t in thresholds.split(","))
    pred_map, gt_map = load_interval_records(preds), load_interval_records(gts)
    paired_preds, paired_gts = pair_by_item(pred_map, gt_map)
    result = grounding_metrics(paired_preds, paired_gts, ths)
    body = grounding_report_dict(result)
    body["config"] = cfg.to_dict() | {"command": "eval grounding",
                                      "thresholds": list(ths)}
    _write_json(out, body)
    click.echo(grounding_report_table(result))
    click.echo(f"wrote {out}")


@cmd_eval.command("qa")
@click.option("--preds", required=True, help="predictions JSONL: {item_id, answer}")
@click.option("--gold", required=True, help="gold JSONL: {item_id, answer}")
@click.option("--out", required=True)
@click.option("--config", "config_file", default=None)
@guarded
def eval_qa(preds, gold, out, config_file):
    """Multiple-choice accuracy with letter extraction from free text."""
    cfg = _resolve_config(config_file)
    pred_map, gold_map = load_answer_records(preds), load_answer_records(gold)
    paired_preds, paired_gold = pair_by_item(pred_map, gold_map)
    result = qa_report(paired_preds, paired_gold)
    body = {
        "accuracy": result.accuracy,
        "n_items": result.n_items,
        "n_correct": result.n_correct,
        "n_unextractable": result.n_unextractable,
        "config": cfg.to_dict() | {"command": "eval qa"},
    }
    _write_json(out, body)
    click.echo(
        f"accuracy: {result.accuracy:.4f} ({result.n_correct}/{result.n_items}, "
        f"{result.n_unextractable} unextractable)"
    )
    click.echo(f"wrote {out}")


@cmd_eval.command("recall")
@click.option("--plan", "plan_path", required=True, help="sample plan JSON")
@click.option("--annotated", required=True,
              help="JSON file with annotated relevant global indices")
@click.option("--out", required=True)
@click.option("--config", "config_file", default=None)
@guarded
def eval_recall(plan_path, annotated, out, config_file):
    """Frame recall/precision of a plan against annotated relevant frames."""
    cfg = _resolve_config(config_file)
    with open(plan_path, "r", encoding="utf-8") as fh:
        plan = plan_from_dict(json.load(fh))
    with open(annotated, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    if isinstance(body, dict):
        body = body.get("annotated", [])
    result = frame_recall(plan, {int(g) for g in body})
    report = {
        "recall": result.recall,
        "precision": result.precision,
        "k_used": result.k_used,
        "config": cfg.to_dict() | {"command": "eval recall"},
    }
    _write_json(out, report)
    click.echo(f"recall: {result.recall:.4f}  precision: {result.precision:.4f}  "
               f"k: {result.k_used}")
    click.echo(f"wrote {out}")


# -- dataset forge --------------------------------------------------------------

def _forge_config(seed, caption_fps, chunk_size, target_ratio, mc_fraction,
                  negative_rate) -> ForgeConfig:
    kwargs = {}
    if seed is not None:
        kwargs["seed"] = seed
    if caption_fps is not None:
        kwargs["caption_fps"] = caption_fps
    if chunk_size is not None:
        kwargs["chunk_size"] = chunk_size
    if target_ratio is not None:
        kwargs["target_ratio"] = target_ratio
    if mc_fraction is not None:
        kwargs["mc_fraction"] = mc_fraction
    if negative_rate is not None:
        kwargs["negative_rate"] = negative_rate
    return ForgeConfig(**kwargs)


def _forge_options(fn):
    fn = click.option("--run", "run_dir", required=True, help="run directory")(fn)
    fn = click.option("--stub", is_flag=True, help="use deterministic stub annotators")(fn)
    fn = click.option("--annotator-endpoint", default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--caption-fps", type=float, default=None)(fn)
    fn = click.option("--chunk-size", type=int, default=None)(fn)
    fn = click.option("--target-ratio", type=float, default=None)(fn)
    fn = click.option("--mc-fraction", type=float, default=None)(fn)
    fn = click.option("--negative-rate", type=float, default=None)(fn)
    fn = click.option("--jobs", type=int, default=1)(fn)
    return fn


def _annotator(stub: bool, endpoint: str | None, stub_cls, seed: int):
    if stub:
        return stub_cls(seed=seed)
    if not endpoint:
        raise click.UsageError("pass --stub or --annotator-endpoint")
    return RemoteAnnotatorClient(endpoint)


def _require_prior_stage(run: ForgeRun, stage: int) -> None:
    vids = run.video_ids()
    if not vids:
        raise DataError("run directory has no stage1 artifacts; run forge stage1 first")
    for vid in vids:
        prior = Path(run.run_dir) / vid / f"stage{stage - 1}.jsonl"
        if not prior.exists():
            raise DataError(f"missing stage{stage - 1} artifact for video {vid!r}")


@main.group("forge")
def cmd_forge():
    """Staged dataset construction with resumable per-video artifacts."""


@cmd_forge.command("stage1")
@click.option("--manifest", "manifests", multiple=True, required=True,
              help="frame manifest path (repeatable)")
@_forge_options
@guarded
def forge_stage1(manifests, run_dir, stub, annotator_endpoint, seed, caption_fps,
                 chunk_size, target_ratio, mc_fraction, negative_rate, jobs):
    """Dense differential captioning over each video's frame pool."""
    cfg = _forge_config(seed, caption_fps, chunk_size, target_ratio, mc_fraction,
                        negative_rate)
    run = ForgeRun(run_dir, cfg, jobs=jobs)
    pools = [build_candidate_pool(load_manifest(m), cfg.caption_fps) for m in manifests]
    captioner = _annotator(stub, annotator_endpoint, StubCaptioner, cfg.seed)
    run.run_stage1(pools, captioner)
    click.echo(f"captioned {len(pools)} video(s) into {run_dir}")


@cmd_forge.command("stage2")
@_forge_options
@guarded
def forge_stage2(run_dir, stub, annotator_endpoint, seed, caption_fps, chunk_size,
                 target_ratio, mc_fraction, negative_rate, jobs):
    """QA construction with grounded frames from caption chunks."""
    cfg = _forge_config(seed, caption_fps, chunk_size, target_ratio, mc_fraction,
                        negative_rate)
    run = ForgeRun(run_dir, cfg, jobs=jobs)
    _require_prior_stage(run, 2)
    generator = _annotator(stub, annotator_endpoint, StubQaGenerator, cfg.seed)
    run.run_stage2(generator)
    click.echo(f"generated QA samples for {len(run.video_ids())} video(s)")


@cmd_forge.command("stage3")
@_forge_options
@click.option("--embedder-endpoint", default=None)
@guarded
def forge_stage3(run_dir, stub, annotator_endpoint, seed, caption_fps, chunk_size,
                 target_ratio, mc_fraction, negative_rate, jobs, embedder_endpoint):
    """Extend relevant frames by similarity up to the target ratio."""
    cfg = _forge_config(seed, caption_fps, chunk_size, target_ratio, mc_fraction,
                        negative_rate)
    run = ForgeRun(run_dir, cfg, jobs=jobs)
    _require_prior_stage(run, 3)
    if stub:
        sim = HashEmbeddingBackend(seed=cfg.seed)
    elif embedder_endpoint:
        sim = RemoteEmbeddingBackend(embedder_endpoint)
    else:
        raise click.UsageError("pass --stub or --embedder-endpoint")
    run.run_stage3(sim)
    click.echo(f"extended relevant sets for {len(run.video_ids())} video(s)")


@cmd_forge.command("stage4")
@_forge_options
@guarded
def forge_stage4(run_dir, stub, annotator_endpoint, seed, caption_fps, chunk_size,
                 target_ratio, mc_fraction, negative_rate, jobs):
    """Fine-grained relevance scoring; assembles dataset.jsonl when done."""
    cfg = _forge_config(seed, caption_fps, chunk_size, target_ratio, mc_fraction,
                        negative_rate)
    run = ForgeRun(run_dir, cfg, jobs=jobs)
    _require_prior_stage(run, 4)
    judge = _annotator(stub, annotator_endpoint, StubJudge, cfg.seed)
    run.run_stage4(judge)
    dataset = run.write_dataset()
    click.echo(f"scored {len(run.video_ids())} video(s); dataset at {dataset}")


@cmd_forge.command("aggregate-et")
@click.option("--input", "input_path", required=True,
              help="JSONL of {video_id, query, timestamp_labels, task_tag}")
@click.option("--out", required=True)
@guarded
def forge_aggregate_et(input_path, out):
    """Merge timestamp-labeled records per video (query concatenation,
    label-set union)."""
    records = []
    with open(input_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(EtRecord(
                video_id=str(rec["video_id"]),
                query=str(rec["query"]),
                timestamp_labels=tuple(
                    tuple(lb) if isinstance(lb, list) else lb
                    for lb in rec["timestamp_labels"]
                ),
                task_tag=str(rec.get("task_tag", "")),
            ))
    if not records:
        raise DataError(f"{input_path} holds no records")
    aggregated = aggregate_et(records)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in aggregated:
            fh.write(json.dumps({
                "video_id": rec.video_id,
                "query": rec.query,
                "timestamp_labels": [list(lb) if isinstance(lb, tuple) else lb
                                     for lb in rec.timestamp_labels],
                "task_tag": rec.task_tag,
                "per_query": [
                    {"query": q, "timestamp_labels": [list(lb) if isinstance(lb, tuple) else lb
                                                      for lb in labels]}
                    for q, labels in (rec.per_query or ())
                ] or None,
                "schema_version": 1,
            }, sort_keys=True) + "\n")
    click.echo(f"{len(records)} records -> {len(aggregated)} aggregated "
               f"(ratio {len(aggregated) / len(records):.3f})")
    click.echo(f"wrote {out}")


@cmd_forge.command("stats")
@click.option("--run", "run_dir", default=None)
@click.option("--dataset", "dataset_path", default=None)
@click.option("--out", required=True)
@guarded
def forge_stats(run_dir, dataset_path, out):
    """Corpus statistics report for a forged dataset."""
    if not dataset_path and not run_dir:
        raise DataError("pass --dataset or --run")
    if not dataset_path:
        dataset_path = str(Path(run_dir) / "dataset.jsonl")
    records = []
    with open(dataset_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise DataError(f"{dataset_path} holds no records")
    report = dataset_stats(records)
    _write_json(out, report | {"config": {"command": "forge stats",
                                          "dataset": dataset_path}})
    click.echo(f"samples: {report['n_samples']}  "
               f"mean duration: {report['mean_duration_s']:.1f}s  "
               f"relevance rate: {report['mean_relevance_rate']:.3f}  "
               f"negatives: {report['negative_fraction']:.3f}")
    click.echo(f"wrote {out}")


# -- sampler comparison ---------------------------------------------------------

@main.command("compare")
@click.option("--scenario", required=True, help="scenario JSON with planted frames")
@click.option("--out", required=True)
@click.option("--budgets", default=None, help="comma-separated frame budgets")
@click.option("--config", "config_file", default=None)
@guarded
def cmd_compare(scenario, out, budgets, config_file):
    """Recall of uniform/similarity/generative/hybrid samplers under frame
    budgets, on a synthetic planted-relevance scenario."""
    cfg = _resolve_config(config_file)
    scn = load_scenario(scenario)
    budget_list = (tuple(int(b) for b in budgets.split(",")) if budgets
                   else scn.budgets)
    pool = scn.pool()
    planted = scn.planted
    if not planted:
        raise DataError("scenario has no planted frames")

    samplers = [
        ("uniform", lambda n: sample(pool, scn.query, UniformBackend(),
                                     SampleConfig(n_ctx=n))),
        ("similarity", lambda n: sample(pool, scn.query,
                                        OracleSimilarityBackend(planted),
                                        SampleConfig(n_ctx=n))),
        ("generative", lambda n: sample(pool, scn.query,
                                        OracleGenerativeBackend(planted),
                                        SampleConfig(n_ctx=n))),
        ("hybrid", lambda n: hybrid_sample(pool, scn.query,
                                           OracleSimilarityBackend(planted),
                                           OracleGenerativeBackend(planted),
                                           prefilter_k=min(cfg.prefilter_k, len(pool), 256),
                                           config=SampleConfig(n_ctx=n))),
    ]

    rows = []
    for name, run_one in samplers:
        cells = []
        for budget in budget_list:
            plan = run_one(budget)
            result = frame_recall(plan, set(planted))
            cells.append({"budget": budget, "recall": result.recall, "k": result.k_used})
        rows.append({"sampler": name, "cells": cells})

    header = ["sampler".ljust(12)] + [f"<={b} frm".rjust(10) for b in budget_list]
    lines = ["".join(header)]
    for row in rows:
        cells = [f"{c['recall']:.4f}".rjust(10) for c in row["cells"]]
        lines.append("".join([row["sampler"].ljust(12)] + cells))
    table = "\n".join(lines)

    body = {
        "budgets": list(budget_list),
        "rows": rows,
        "scenario": {"video_id": scn.video_id, "query": scn.query,
                     "duration_s": scn.duration_s, "fps": scn.fps,
                     "planted": sorted(planted), "seed": scn.seed},
        "table": table,
        "config": cfg.to_dict() | {"command": "compare"},
    }
    _write_json(out, body)
    click.echo(table)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
