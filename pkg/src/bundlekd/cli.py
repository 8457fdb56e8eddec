"""bundlekd command line.

Verbs: ingest, mine, sample, distill, index, knowledge accumulate,
export-sft, generate, evaluate, grid. Pipeline verbs (generate, grid) are
config-driven; the rest operate on explicit file arguments so each stage
can also be run and inspected on its own.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import distill as distill_mod
from . import knowledge as knowledge_mod
from .corpus import dataset_stats, load_dataset, save_dataset
from .evaluation import SessionEval, eval_corpus
from .gateway import ProviderConfig, make_transport
from .knowledge import Composite, KnowledgeBase
from .mining import (
    bundles_to_transactions,
    dedup_patterns,
    mine_frequent_patterns,
    save_patterns,
)
from .retrieval import build_index, make_embedder, save_index
from .runner import ExperimentConfig, Pipeline, run_rq_grid
from .sampling import SamplingSpec, sample
from .sft import AugmentationPolicy, build_samples, export_jsonl


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_ingest(args) -> int:
    d = load_dataset(args.input, domain=args.domain)
    if args.validate:
        stats = dataset_stats(d)
        print(json.dumps({"domain": d.domain, **stats.as_dict()}, indent=2))
    if args.out:
        save_dataset(d, args.out)
        print(f"wrote {len(d.sessions)} sessions to {args.out}")
    return 0


def cmd_mine(args) -> int:
    d = load_dataset(args.dataset)
    patterns = dedup_patterns(mine_frequent_patterns(
        bundles_to_transactions(d), args.min_support))
    save_patterns(patterns, args.out)
    print(f"mined {len(patterns)} patterns (min_support={args.min_support}) "
          f"-> {args.out}")
    return 0


def _teacher_evals_from_report(path: str) -> dict[str, SessionEval]:
    report = _read_json(path)
    out = {}
    for row in report.get("sessions", []):
        out[row["session_id"]] = SessionEval(
            precision=row["precision"], recall=row["recall"],
            coverage=row["coverage"], n_generated=row["n_generated"],
            n_hit=row["n_hit"], n_gt=row["n_gt"], n_recalled=row["n_recalled"])
    return out


def cmd_sample(args) -> int:
    d = load_dataset(args.dataset)
    spec = SamplingSpec(strategy=args.strategy, ratio=args.ratio, seed=args.seed)
    teacher_evals = None
    if args.strategy == "difficulty":
        if not args.teacher_eval:
            print("difficulty sampling needs --teacher-eval <report.json>",
                  file=sys.stderr)
            return 2
        teacher_evals = _teacher_evals_from_report(args.teacher_eval)
    result = sample(d, spec, teacher_evals=teacher_evals)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({
        "strategy": args.strategy, "ratio": args.ratio, "seed": args.seed,
        **result.as_dict(),
    }, indent=2) + "\n", encoding="utf-8")
    print(f"sampled {len(result.session_ids)} sessions -> {args.out}")
    return 0


def cmd_distill(args) -> int:
    d = load_dataset(args.dataset, domain=args.domain)
    cfg = ProviderConfig.from_dict(_read_json(args.provider))
    transport = make_transport(cfg)
    sessions = list(d.sessions)
    if args.sample:
        wanted = set(_read_json(args.sample)["session_ids"])
        order = _read_json(args.sample)["session_ids"]
        by_id = {s.id: s for s in d.sessions if s.id in wanted}
        sessions = [by_id[i] for i in order if i in by_id]
    embedder = make_embedder(_read_json(args.embedder) if args.embedder
                             else {"kind": "mock"})
    entries = []
    failures = 0
    for s in sessions:
        if not s.bundles:
            continue
        try:
            if args.format == "rule":
                got, trace = distill_mod.distill_rules(s, cfg, d.domain,
                                                       transport=transport)
            else:
                got, trace = distill_mod.distill_thoughts(s, cfg, d.domain,
                                                          transport=transport)
            entries.extend(got)
            if args.trace:
                trace.save(args.trace)
        except distill_mod.DistillError as e:
            failures += 1
            print(f"session {s.id}: {e}", file=sys.stderr)
    kept = distill_mod.dedup_text_knowledge(entries, embedder,
                                            threshold=args.threshold)
    kb = KnowledgeBase()
    kb.put(d.domain, args.format, kept, {
        "sample": args.sample or "all", "dataset": args.dataset,
        "provider": cfg.fingerprint,
    })
    knowledge_mod.persist(kb, args.out)
    print(f"distilled {len(entries)} {args.format}s, kept {len(kept)} after "
          f"dedup ({failures} failures) -> {args.out}")
    return 0 if failures == 0 else 1


def cmd_index(args) -> int:
    d = load_dataset(args.dataset)
    provider = make_embedder(_read_json(args.provider))
    index = build_index(d, provider)
    save_index(index, args.out)
    print(f"indexed {len(index.ids)} sessions -> {args.out}")
    return 0


def cmd_knowledge_accumulate(args) -> int:
    kb = knowledge_mod.load(args.knowledge_dir)
    domains = args.domains.split(",")
    formats = args.formats.split(",")
    embedder = make_embedder(_read_json(args.embedder) if args.embedder
                             else {"kind": "mock"})
    composite = {}
    for fmt in formats:
        entries = knowledge_mod.accumulate_domains(kb, fmt, domains,
                                                   embedder=embedder,
                                                   threshold=args.threshold)
        key = {"pattern": "patterns", "rule": "rules", "thought": "thoughts"}[fmt]
        composite[key] = [knowledge_mod.entry_to_obj(fmt, e) for e in entries]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(composite, ensure_ascii=False, indent=2)
                              + "\n", encoding="utf-8")
    counts = {k: len(v) for k, v in composite.items()}
    print(f"accumulated {counts} over domains {domains} -> {args.out}")
    return 0


def _composite_from_file(path: str) -> Composite:
    obj = _read_json(path)
    return Composite(
        patterns=tuple(knowledge_mod.entry_from_obj("pattern", o)
                       for o in obj.get("patterns", [])),
        rules=tuple(knowledge_mod.entry_from_obj("rule", o)
                    for o in obj.get("rules", [])),
        thoughts=tuple(knowledge_mod.entry_from_obj("thought", o)
                       for o in obj.get("thoughts", [])),
    )


def cmd_export_sft(args) -> int:
    d = load_dataset(args.dataset)
    policy = AugmentationPolicy(enabled=args.augment, max_permutations=args.cap,
                                seed=args.seed)
    knowledge_for = None
    if args.knowledge and args.knowledge != "none":
        composite = _composite_from_file(args.knowledge)
        knowledge_for = lambda _s: composite
    samples, warnings = build_samples(d, policy, knowledge_for=knowledge_for)
    export_jsonl(samples, args.out)
    for w in warnings:
        print(w, file=sys.stderr)
    print(f"exported {len(samples)} samples -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_experiment_config(args)
    outputs = Pipeline(cfg).run()
    print(json.dumps(outputs, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    d = load_dataset(args.dataset)
    preds: dict[str, list[frozenset[str]]] = {}
    with Path(args.predictions).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds[obj["session_id"]] = [frozenset(b) for b in obj["bundles"]]
    pairs = {s.id: (preds.get(s.id, []), list(s.bundles))
             for s in d.sessions if s.bundles}
    report = eval_corpus(pairs, aggregate=args.aggregate)
    report.save(args.out)
    report.save_csv(Path(args.out).with_suffix(".csv"))
    print(json.dumps(report.macro, indent=2))
    return 0


def cmd_grid(args) -> int:
    cfg = _load_experiment_config(args)
    summary = run_rq_grid(cfg, args.rq, force=args.force)
    print(f"grid complete -> {summary}")
    return 0


def _load_experiment_config(args) -> ExperimentConfig:
    raw = _read_json(args.config)
    if getattr(args, "out_dir", None):
        raw["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        raw.setdefault("sampling", {})["seed"] = args.seed
        raw.setdefault("split", {})["seed"] = args.seed
        raw.setdefault("augment", {})["seed"] = args.seed
    for side in ("teacher", "student", "embedder"):
        override = getattr(args, f"provider_{side}", None)
        if override:
            raw[side] = _read_json(override)
    return ExperimentConfig.from_dict(raw)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", help="override config out_dir")
    p.add_argument("--seed", type=int, help="override sampling/split/augment seeds")
    p.add_argument("--provider-teacher", help="teacher provider config JSON")
    p.add_argument("--provider-student", help="student provider config JSON")
    p.add_argument("--provider-embedder", help="embedder config JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bundlekd")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--domain")
    p.add_argument("--validate", action="store_true")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("mine", help="mine frequent category patterns")
    p.add_argument("--dataset", required=True)
    p.add_argument("--min-support", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("sample", help="sample training sessions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["random", "length", "diversity", "difficulty"])
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--teacher-eval", help="report.json with teacher zero-shot evals")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("distill", help="distill rules or thoughts from a teacher")
    p.add_argument("--dataset", required=True)
    p.add_argument("--domain", help="domain label; defaults to the file stem")
    p.add_argument("--format", required=True, choices=["rule", "thought"])
    p.add_argument("--sample", help="sample.json restricting sessions")
    p.add_argument("--provider", required=True, help="provider config JSON")
    p.add_argument("--embedder", help="embedder config JSON for dedup")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", required=True, help="knowledge output directory")
    p.add_argument("--trace", help="trace output directory")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("index", help="embed sessions into a retrieval index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--provider", required=True, help="embedder config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("knowledge", help="knowledge store operations")
    ksub = p.add_subparsers(dest="subcommand", required=True)
    pa = ksub.add_parser("accumulate", help="merge knowledge across domains")
    pa.add_argument("--knowledge-dir", required=True)
    pa.add_argument("--domains", required=True, help="comma-separated")
    pa.add_argument("--formats", required=True, help="comma-separated")
    pa.add_argument("--embedder", help="embedder config JSON for text dedup")
    pa.add_argument("--threshold", type=float, default=0.8)
    pa.add_argument("--out", required=True)
    pa.set_defaults(fn=cmd_knowledge_accumulate)

    p = sub.add_parser("export-sft", help="build SFT chat JSONL")
    p.add_argument("--dataset", required=True)
    p.add_argument("--knowledge", default="none",
                   help="combined.json composite, or 'none' for zero-shot prompts")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--cap", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_sft)

    p = sub.add_parser("generate", help="run the generation pipeline per config")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--aggregate", default="macro", choices=["macro", "micro"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("grid", help="run an RQ experiment grid")
    _add_config_flags(p)
    p.add_argument("--rq", required=True, choices=["rq1", "rq2", "rq3"])
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_grid)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
