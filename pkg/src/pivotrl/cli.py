"""Command-line entry point: ``pivotrl {score,train,pgcot,analyze,print-default-config}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import behavior, pgcot, toy_rl
from .config import AppConfig, default_config_yaml, load_config
from .errors import ConfigError, PivotError
from .lexicon import PivotalLexicon, load_lexicon
from .rewards import RewardConfig, composite_reward
from .trace import RawTrace, TagConfig, iter_jsonl, parse_trace

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("pivotrl")


def _load_lexicon(cfg: AppConfig) -> PivotalLexicon:
    try:
        return load_lexicon(cfg.lexicon_path)
    except PivotError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_score_worker(reward_cfg: RewardConfig, tags: TagConfig, lex: PivotalLexicon) -> None:
    _WORKER.update(reward=reward_cfg, tags=tags, lex=lex)


def _score_line(item: tuple[int, dict | None, str | None]) -> dict:
    lineno, obj, err = item
    if err is not None:
        return {"line": lineno, "error": "INVALID_JSON", "message": err}
    try:
        raw = RawTrace.from_dict(obj)
    except PivotError as exc:
        out = {"line": lineno, "error": exc.code, "message": str(exc)}
        if isinstance(obj, dict) and "id" in obj:
            out["id"] = str(obj["id"])
        return out
    parsed = parse_trace(raw, _WORKER["tags"])
    b = composite_reward(parsed, raw.ground_truth, _WORKER["lex"], _WORKER["reward"])
    return {"line": lineno, "id": raw.id, **b.to_dict()}


def _map_ordered(fn: Callable, items: list, jobs: int, initializer, initargs) -> list:
    if jobs <= 1 or len(items) < 2:
        initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


SCORE_COMPONENTS = ("r_acc", "r_form", "r_pivot", "r_len", "r_total", "m", "m_coupled", "s_pivot")


def cmd_score(args, cfg: AppConfig) -> int:
    lex = _load_lexicon(cfg)
    items = list(iter_jsonl(args.corpus))
    rows = _map_ordered(_score_line, items, args.jobs, _init_score_worker, (cfg.reward, cfg.tags, lex))
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    good = [r for r in rows if "error" not in r]
    summary = {"lines": len(rows), "scored": len(good), "errors": len(rows) - len(good)}
    for k in SCORE_COMPONENTS:
        summary[f"mean_{k}"] = sum(r[k] for r in good) / len(good) if good else None
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args, cfg: AppConfig) -> int:
    train_cfg = cfg.train
    if args.iterations is not None:
        train_cfg = dataclasses.replace(train_cfg, iterations=args.iterations)
    lex = _load_lexicon(cfg)
    try:
        toy_rl.check_pools(cfg.env, lex)
    except PivotError as exc:
        raise ConfigError(str(exc)) from None
    t0 = time.perf_counter()
    params, metrics = toy_rl.run_training(cfg.env, cfg.reward, cfg.dapo, train_cfg,
                                          seed=cfg.env.seed, lex=lex, tags=cfg.tags)
    elapsed = time.perf_counter() - t0
    toy_rl.write_metrics_csv(metrics, args.out)
    summary = {"iterations": len(metrics), "seed": cfg.env.seed, "seconds": round(elapsed, 3),
               "theta": [float(x) for x in params.theta]}
    if metrics:
        for name in ("mean_reward", "accuracy", "coupled_fraction", "grounded_rate", "mean_m"):
            summary[f"final_{name}"] = toy_rl.tail_mean(metrics, name)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# pgcot
# ---------------------------------------------------------------------------

def cmd_pgcot(args, cfg: AppConfig) -> int:
    pcfg = cfg.pgcot
    if args.retry_on_invalid:
        pcfg = dataclasses.replace(pcfg, retry_on_invalid=True)
    if args.mock_teacher:
        client = pgcot.MockTeacher(lex=_load_lexicon(cfg))
    else:
        client = pgcot.HttpTeacherClient.from_env()
    records, bad = [], []
    for lineno, obj, err in iter_jsonl(args.corpus):
        if err is None and not isinstance(obj, dict):
            err = "expected a JSON object"
        if err is not None:
            bad.append({"line": lineno, "error": "INVALID_JSON", "message": err})
            continue
        records.append((lineno, pgcot.PgcotRecord.from_dict(obj)))
    results = pgcot.run_pipeline([r for _, r in records], client, cfg=pcfg)
    out_rows = [(ln, {"line": ln, **res.to_dict()}) for (ln, _), res in zip(records, results)]
    out_rows += [(b["line"], b) for b in bad]
    out_rows.sort(key=lambda x: x[0])
    with open(args.out, "w", encoding="utf-8") as fh:
        for _, row in out_rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    report = pgcot.pipeline_stats(results)
    report["input_errors"] = len(bad)
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args, cfg: AppConfig) -> int:
    if args.judge:
        classifier = behavior.TeacherBehaviorClassifier(pgcot.HttpTeacherClient.from_env(),
                                                        cfg.pgcot.model_name)
    else:
        try:
            classifier = behavior.RuleBasedClassifier(
                behavior.load_patterns(cfg.behavior_patterns_path))
        except PivotError as exc:
            raise ConfigError(str(exc)) from None
    reports = []
    for lineno, obj, err in iter_jsonl(args.corpus):
        tid = str(obj.get("id", lineno)) if isinstance(obj, dict) else str(lineno)
        if err is not None or not isinstance(obj, dict) or not isinstance(obj.get("response"), str):
            reports.append(behavior.TraceBehavior(tid, None, error="INVALID_RECORD"))
            continue
        reports.append(behavior.detect_behaviors(parse_trace(obj["response"], cfg.tags), classifier, tid))
    report = behavior.emergence_ratio(reports)
    behavior.write_behavior_csv(report, args.out)
    print(json.dumps({
        "classified": report.classified,
        "unclassified": report.unclassified,
        "unclassified_ids": report.unclassified_ids,
        "ratios": {behavior.DISPLAY_NAMES[b]: r for b, r in report.ratios.items()},
    }, indent=2))
    return EXIT_OK


def cmd_print_default_config(args, cfg: AppConfig) -> int:
    sys.stdout.write(default_config_yaml())
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pivotrl", description=__doc__)
    p.add_argument("--config", help="YAML config file (see print-default-config)")
    p.add_argument("--seed", type=int, help="overrides env.seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for score")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("score", help="composite reward per trace")
    s.add_argument("corpus")
    s.add_argument("-o", "--out", required=True, help="JSON-lines output")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("train", help="toy DAPO training run")
    s.add_argument("-o", "--out", required=True, help="metrics CSV")
    s.add_argument("--iterations", type=int, help="overrides train.iterations")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("pgcot", help="build perception-grounded reasoning records")
    s.add_argument("corpus")
    s.add_argument("-o", "--out", required=True, help="JSON-lines output")
    s.add_argument("--report", help="write the validation report here as well")
    s.add_argument("--mock-teacher", action="store_true", help="use the offline deterministic teacher")
    s.add_argument("--retry-on-invalid", action="store_true")
    s.set_defaults(func=cmd_pgcot)

    s = sub.add_parser("analyze", help="cognitive behavior emergence ratios")
    s.add_argument("corpus")
    s.add_argument("-o", "--out", required=True, help="CSV output, one row per behavior")
    s.add_argument("--judge", action="store_true", help="classify with the remote judge model")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("print-default-config", help="print the default YAML config")
    s.set_defaults(func=cmd_print_default_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        return args.func(args, cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PivotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.code in ("EMPTY_CORPUS", "LEXICON_MALFORMED") else 1


if __name__ == "__main__":
    sys.exit(main())
