"""``carepipe`` command line.

Machine output goes to standard output; progress and errors go to standard
error. Exit status is 0 on success, 1 on a runtime error, 2 on bad usage and
3 when an interactive replay runs out of answers.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any

from . import assurance as asr
from .config import Config, ConfigError, load_config
from .corpus import generate_corpus
from .ics import export_ics
from .interactive import AbortedByUser, Answers, interactive_replay, load_resume
from .metrics import ConfusionMatrix, MetricResult, accuracy, dump_metrics, load_metrics, precision, recall, wilson_interval
from .model import CarepipeError, format_timestamp, load_corpus, parse_timestamp, save_transcripts
from .parser import RuleBasedParser
from .pipeline import Components, ReplayReport, fixed_timer, parse_fault, replay, run_transcript
from .retrieval import METHODS, InsufficientEvidence, Retriever, needle_harness
from .scheduler import Scheduler, VirtualClock
from .store import Store

log = logging.getLogger("carepipe")


class UsageError(CarepipeError):
    pass


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _config(args: argparse.Namespace) -> Config:
    overrides: dict[str, Any] = {}
    for item in getattr(args, "set", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for key in ("corpus", "store", "case", "seed", "delta", "tau_ms", "timer", "min_similarity", "k1", "b", "gate_threshold", "needle_routine", "confirm_on_fire"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    path = getattr(args, "config", None) or os.environ.get("CAREPIPE_CONFIG")
    return load_config(path, overrides)


def _corpus(cfg: Config):
    if not cfg.corpus:
        raise UsageError("no corpus given (use --corpus or the corpus config key)")
    return load_corpus(cfg.corpus, cfg.residents, cfg.categories)


def _components(cfg: Config, registries, store: Store | None = None) -> Components:
    store = store if store is not None else Store(cfg.store)
    return Components(
        RuleBasedParser(cfg.parser_settings()),
        registries,
        store,
        Scheduler(store, cfg.gate_threshold, cfg.confirm_on_fire, cfg.max_horizon_days),
        timer=fixed_timer() if cfg.timer == "fixed" else time.perf_counter,
    )


def _need_store(cfg: Config) -> Store:
    if not cfg.store:
        raise UsageError("this command needs --store")
    return Store(cfg.store)


# -- commands ----------------------------------------------------------------


def cmd_corpus_generate(args) -> int:
    cfg = _config(args)
    if not cfg.explicit("seed"):
        raise UsageError("corpus generation needs an explicit seed (--seed, CAREPIPE_SEED or the config file)")
    transcripts = generate_corpus(cfg.seed, args.size, args.reminder_fraction, args.adversarial_fraction)
    if args.out in (None, "-"):
        for t in transcripts:
            _emit(t.to_dict())
    else:
        save_transcripts(transcripts, args.out)
        log.info("wrote %d transcripts to %s", len(transcripts), args.out)
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args)
    corpus = _corpus(cfg)
    comps = _components(cfg, corpus.registries)
    try:
        for t in sorted(corpus.transcripts, key=lambda t: t.id):
            run = run_transcript(t, comps)
            comps.store.record_outcome(run.outcome)
            _emit(run.outcome.to_dict())
    finally:
        comps.store.close()
    return 0


def _retriever(args, cfg: Config) -> Retriever:
    if getattr(args, "index", None):
        data = json.loads(Path(args.index).read_text(encoding="utf-8"))
        return Retriever([(d["record_id"], d["text"]) for d in data["documents"]], cfg.retrieval_settings())
    if cfg.store or cfg.corpus:
        return Retriever(_index_documents(cfg), cfg.retrieval_settings())
    raise UsageError("give --index, --store or --corpus")


def cmd_index_build(args) -> int:
    cfg = _config(args)
    texts = _index_documents(cfg)
    r = Retriever(texts, cfg.retrieval_settings())
    payload = {
        "settings": dataclasses.asdict(cfg.retrieval_settings()),
        "stats": {"n_docs": r.sparse.n_docs, "avg_length": r.sparse.avg_length, "vocabulary": len(r.sparse.postings), "dense_dim": r.embedder.dim},
        "documents": [{"record_id": rid, "text": text} for rid, text in texts],
    }
    _write(args.out, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0


def _index_documents(cfg: Config) -> list[tuple[str, str]]:
    if cfg.store:
        with Store(cfg.store) as store:
            return [(r.record_id, r.note) for r in store.records()]
    corpus = _corpus(cfg)
    return [(t.id, t.text) for t in corpus.transcripts]


def cmd_query(args) -> int:
    cfg = _config(args)
    r = _retriever(args, cfg)
    result = r.gated_search(args.text, args.method, args.k) if args.gate else r.search(args.text, args.method, args.k)
    if isinstance(result, InsufficientEvidence):
        _emit(result.to_dict())
        return 0
    for res in result:
        _emit(res.to_dict())
    return 0


def cmd_needle(args) -> int:
    cfg = _config(args)
    report = needle_harness(args.routine, cfg.seed, settings=cfg.retrieval_settings(), k=args.k)
    _emit(report.to_dict())
    return 0


def cmd_schedule_run(args) -> int:
    cfg = _config(args)
    store = _need_store(cfg)
    with store:
        sched = Scheduler(store, cfg.gate_threshold, cfg.confirm_on_fire, cfg.max_horizon_days)
        clock = VirtualClock(parse_timestamp(args.until))
        for ev in sched.tick(clock):
            _emit(ev.to_dict())
        if args.pending:
            for req in sched.pending_requests():
                _emit(req)
    return 0


def cmd_schedule_export(args) -> int:
    cfg = _config(args)
    with _need_store(cfg) as store:
        events = store.events()
    sys.stdout.flush()
    text = export_ics(events)
    if args.out in (None, "-"):
        sys.stdout.buffer.write(text.encode("utf-8"))
    else:
        Path(args.out).write_bytes(text.encode("utf-8"))
    return 0


def cmd_schedule_confirm(args) -> int:
    cfg = _config(args)
    with _need_store(cfg) as store:
        sched = Scheduler(store, cfg.gate_threshold, cfg.confirm_on_fire, cfg.max_horizon_days)
        now = parse_timestamp(args.at)
        result = sched.confirm(args.target, args.decision, now)
        if isinstance(result, list):
            for ev in result:
                _emit(ev.to_dict())
        elif result is not None and hasattr(result, "to_dict"):
            _emit(result.to_dict())
        else:
            _emit({"target": args.target, "decision": args.decision, "at": format_timestamp(now)})
    return 0


def cmd_replay(args) -> int:
    cfg = _config(args)
    corpus = _corpus(cfg)
    comps = _components(cfg, corpus.registries)
    settings = cfg.replay_settings()
    faults = [parse_fault(f) for f in args.fault or []]
    try:
        if args.interactive or args.answers or args.resume:
            if faults:
                raise UsageError("--fault cannot be combined with an interactive replay")
            scripted: list[str] = load_resume(args.resume) if args.resume else []
            if args.answers:
                scripted += Path(args.answers).read_text(encoding="utf-8").splitlines()
            answers = Answers(scripted, sys.stdin if args.interactive else None)
            report = interactive_replay(corpus.transcripts, comps, answers, settings, out=sys.stderr, resume_path=args.resume_out)
        else:
            report = replay(corpus.transcripts, comps, settings, faults)
    finally:
        comps.store.close()
    report.defeaters = sorted(args.defeater or [])
    _write(args.report, report.to_json())
    if args.metrics:
        _write(args.metrics, dump_metrics(report.metrics))
    if args.text:
        sys.stderr.write(report.render_text())
    for v in report.violations:
        log.warning("budget violation: %s", v)
    return 0


def _load_results(args) -> tuple[dict[str, MetricResult], list[str]]:
    if getattr(args, "report", None):
        report = ReplayReport.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
        return report.metric_map, report.defeaters
    if getattr(args, "metrics", None):
        return load_metrics(Path(args.metrics).read_text(encoding="utf-8")), []
    raise UsageError("give --report or --metrics")


def cmd_metrics_eval(args) -> int:
    out: list[MetricResult] = []
    if args.wilson:
        s, n = args.wilson
        out.append(MetricResult("wilson_interval", estimate=wilson_interval(s, n, args.z)))
    if args.confusion:
        cm = ConfusionMatrix(*args.confusion)
        for name, fn in (("accuracy", accuracy), ("precision", precision), ("recall", recall)):
            try:
                out.append(MetricResult(name, value=fn(cm)))
            except ValueError as exc:
                out.append(MetricResult(name, value=None))
                log.warning("%s undefined: %s", name, exc)
    if args.report or args.metrics:
        results, _ = _load_results(args)
        out.extend(results[k] for k in sorted(results))
    if not out:
        raise UsageError("nothing to evaluate: give --report, --metrics, --wilson or --confusion")
    sys.stdout.write(dump_metrics(out))
    return 0


def _status(args):
    results, defeaters = _load_results(args)
    case = asr.load_case(args.case)
    active = sorted(set(defeaters) | set(args.defeater or []))
    return case, asr.evaluate_case(case, results, active), results


def cmd_assurance_evaluate(args) -> int:
    case, status, results = _status(args)
    if args.text:
        sys.stdout.write(asr.render_report(case, status, results))
    else:
        _emit(status.to_dict())
    return 0


def cmd_report(args) -> int:
    report = ReplayReport.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
    case, status, results = _status(args)
    sys.stdout.write(report.render_text() + "\n" + asr.render_report(case, status, results))
    return 0


# -- parser construction -----------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (also CAREPIPE_CONFIG)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carepipe", description="Care-record pipeline harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="synthetic corpus tools").add_subparsers(dest="action", required=True)
    p = corpus.add_parser("generate", help="write a seeded synthetic corpus")
    _common(p)
    p.add_argument("--size", type=int, default=330)
    p.add_argument("--reminder-fraction", type=float, default=184 / 330)
    p.add_argument("--adversarial-fraction", type=float, default=0.1)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_corpus_generate)

    p = sub.add_parser("ingest", help="run a corpus through the pipeline into a store")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--store")
    p.set_defaults(func=cmd_ingest)

    index = sub.add_parser("index", help="retrieval indexes").add_subparsers(dest="action", required=True)
    p = index.add_parser("build", help="snapshot the documents and statistics of an index")
    _common(p)
    p.add_argument("--store")
    p.add_argument("--corpus")
    p.add_argument("--out", help="index file (default: stdout)")
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("query", help="search stored records")
    _common(p)
    p.add_argument("text")
    p.add_argument("--method", choices=METHODS, default="hybrid")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--index")
    p.add_argument("--store")
    p.add_argument("--corpus")
    p.add_argument("--gate", action="store_true", help="apply the weak-evidence gate")
    p.add_argument("--min-similarity", dest="min_similarity", type=float)
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("needle", help="needle-in-a-haystack retrieval test")
    _common(p)
    p.add_argument("--routine", type=int, default=500)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--min-similarity", dest="min_similarity", type=float)
    p.set_defaults(func=cmd_needle)

    sched = sub.add_parser("schedule", help="reminder events").add_subparsers(dest="action", required=True)
    p = sched.add_parser("run", help="fire events due by a virtual time")
    _common(p)
    p.add_argument("--store")
    p.add_argument("--until", required=True, help="virtual clock time (ISO 8601, UTC)")
    p.add_argument("--pending", action="store_true", help="also list open requests")
    p.set_defaults(func=cmd_schedule_run)
    p = sched.add_parser("export", help="write events as an iCalendar file")
    _common(p)
    p.add_argument("--store")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule_export)
    p = sched.add_parser("confirm", help="approve or reject a request or event")
    _common(p)
    p.add_argument("--store")
    p.add_argument("target", help="request or event id")
    p.add_argument("decision", choices=("approve", "reject"))
    p.add_argument("--at", required=True, help="decision time (ISO 8601, UTC)")
    p.set_defaults(func=cmd_schedule_confirm)

    p = sub.add_parser("replay", help="replay a corpus end to end and report")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--store", help="persist to this store (default: in memory)")
    p.add_argument("--report", help="JSON report file (default: stdout)")
    p.add_argument("--metrics", help="also write metric lines here")
    p.add_argument("--fault", action="append", metavar="SPEC", help="e.g. wrong_resident, drop_field:field=category_id, delay_ms=3000")
    p.add_argument("--defeater", action="append", metavar="ID", help="mark a defeater active in the report")
    p.add_argument("--delta", type=float)
    p.add_argument("--tau-ms", dest="tau_ms", type=float)
    p.add_argument("--timer", choices=("wall", "fixed"))
    p.add_argument("--gate-threshold", dest="gate_threshold", type=float)
    p.add_argument("--needle-routine", dest="needle_routine", type=int)
    p.add_argument("--interactive", action="store_true", help="ask clarification questions on stdin")
    p.add_argument("--answers", help="scripted answers, one per line")
    p.add_argument("--resume", help="resume state from an earlier aborted run")
    p.add_argument("--resume-out", default="carepipe-resume.json", help="where to save resume state on abort")
    p.add_argument("--text", action="store_true", help="print a readable summary to stderr")
    p.set_defaults(func=cmd_replay)

    metrics = sub.add_parser("metrics", help="metric evaluation").add_subparsers(dest="action", required=True)
    p = metrics.add_parser("eval", help="emit metric lines")
    p.add_argument("--report")
    p.add_argument("--metrics")
    p.add_argument("--wilson", type=int, nargs=2, metavar=("SUCCESSES", "N"))
    p.add_argument("--z", type=float, default=1.96)
    p.add_argument("--confusion", type=int, nargs=4, metavar=("TP", "FP", "FN", "TN"))
    p.set_defaults(func=cmd_metrics_eval)

    assure = sub.add_parser("assurance", help="assurance case").add_subparsers(dest="action", required=True)
    p = assure.add_parser("evaluate", help="evaluate the case against metric results")
    p.add_argument("--report")
    p.add_argument("--metrics")
    p.add_argument("--case", help="case definition (default: bundled)")
    p.add_argument("--defeater", action="append", metavar="ID")
    p.add_argument("--text", action="store_true")
    p.set_defaults(func=cmd_assurance_evaluate)

    p = sub.add_parser("report", help="readable replay and assurance report")
    p.add_argument("--report", required=True)
    p.add_argument("--metrics")
    p.add_argument("--case")
    p.add_argument("--defeater", action="append", metavar="ID")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except AbortedByUser as exc:
        where = f"; resume state saved to {exc.resume_path}" if exc.resume_path else ""
        print(f"carepipe: aborted: {exc}{where}", file=sys.stderr)
        return 3
    except (CarepipeError, ConfigError, ValueError, OSError) as exc:
        print(f"carepipe: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
