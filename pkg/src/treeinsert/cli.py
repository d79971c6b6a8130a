"""Command-line entry point: gen-corpus, train, decode, eval, bench, trace.

Every command writes files or JSON to stdout. Failures print one JSON object
``{"error": ..., "message": ...}`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .decoder import DecodeConfig, decode, decode_corpus
from .encoder import Encoder, EncoderConfig
from .evaluation import EvalReport, LengthMismatch, evaluate, step_count_comparison
from .insertion import Ordering
from .tree import Format, ParseTree, Profile, TreeError, is_flat, parse_linearized, seq_to_string
from .training import TrainConfig, train

log = logging.getLogger("treeinsert")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", code=2)


def _fail(kind: str, message: str, code: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _read_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object")
    return data


def _read_inputs(path: Path, profile: Profile) -> tuple[list[list[str]], list[ParseTree | None]]:
    """Utterances from JSONL records (``tokens`` and/or ``tree``) or plain text lines."""
    tokens, golds = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                rec = json.loads(line)
                tree = None
                if rec.get("tree"):
                    tree = parse_linearized(rec["tree"], Format.LABELED, profile)
                toks = rec.get("tokens") or (tree.leaves() if tree else None)
                if not toks:
                    raise CliError(f"{path}:{lineno}: record has neither tokens nor tree")
                tokens.append(list(toks))
                golds.append(tree)
            else:
                tokens.append(line.split())
                golds.append(None)
    return tokens, golds


def _model_profile(model_path: Path) -> tuple[Encoder, Profile]:
    model = Encoder.load(model_path)
    profile = Profile(model.extra.get("profile", "top"))
    return model, profile


# -- commands ---------------------------------------------------------------------


def cmd_gen_corpus(args) -> None:
    spec = corpus_mod.GrammarSpec.load(args.spec) if args.spec else corpus_mod.default_spec(args.profile)
    if args.nesting_prob is not None:
        spec.nesting_prob = args.nesting_prob
        spec.validate()
    total = args.n + args.valid + args.test
    trees = corpus_mod.generate(spec, total, seed=args.seed)
    parts = corpus_mod.split(trees, [args.n, args.valid, args.test], seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_jsonl(out, parts[0])
    written = {"train": str(out)}
    for name, part in (("valid", parts[1]), ("test", parts[2])):
        if part:
            p = out.with_name(f"{out.stem}.{name}{out.suffix}")
            corpus_mod.write_jsonl(p, part)
            written[name] = str(p)
    composite = sum(not is_flat(t) for t in trees) / max(len(trees), 1)
    _emit({"files": written, "n": total, "composite_fraction": composite, "seed": args.seed})


def cmd_train(args) -> None:
    cfg = _read_json(args.config) if args.config else {}
    unknown = set(cfg) - {"encoder", "train"}
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}")
    enc = EncoderConfig.from_dict(cfg.get("encoder", {}))
    hyper = TrainConfig.from_dict(cfg.get("train", {}))
    if args.ordering:
        hyper.ordering = args.ordering
    if args.seed is not None:
        hyper.seed = args.seed
    if args.epochs is not None:
        hyper.epochs = args.epochs
    if args.profile:
        hyper.profile = args.profile
    profile = Profile(hyper.profile)
    train_set = corpus_mod.load_corpus(args.corpus, profile)
    valid = corpus_mod.load_corpus(args.valid, profile) if args.valid else None
    result = train(train_set, enc, hyper, valid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(out, extra={"profile": hyper.profile, "ordering": hyper.ordering, "train": hyper.to_dict()})
    hist_path = out.with_name(out.name + ".history.jsonl")
    with open(hist_path, "w", encoding="utf-8") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec) + "\n")
    if args.report_dir:
        from .plotting import learning_curve

        learning_curve(result.history, Path(args.report_dir) / "learning_curve.png")
    last = result.history[-1]
    _emit({"checkpoint": str(out), "history": str(hist_path), "best_epoch": result.best_epoch,
           "epochs_run": len(result.history), "final_loss": last["loss"],
           "best_em": max((r["em"] for r in result.history if r["em"] is not None), default=None)})


def cmd_decode(args) -> None:
    model, profile = _model_profile(args.ckpt)
    tokens, _ = _read_inputs(args.input, profile)
    config = DecodeConfig(max_steps=args.max_steps, constrain_to_valid=not args.unconstrained,
                          record_trace=args.trace)
    run = decode_corpus(model, tokens, config, profile, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for k, res in enumerate(run.results):
            rec = {"tokens": tokens[k], "tree": str(res.tree) if res else None, "raw": run.raw[k]}
            if k in run.errors:
                rec["error"] = run.errors[k]
            fh.write(json.dumps(rec) + "\n")
    if args.trace:
        # one line per decoding step; replaying the steps of one sentence through
        # insertion.apply reproduces its prediction
        with open(out.with_name(out.stem + ".trace.jsonl"), "w", encoding="utf-8") as fh:
            for k, res in enumerate(run.results):
                for n, e in enumerate(res.trace if res else []):
                    fh.write(json.dumps({
                        "sentence": k, "step": n, "seq": seq_to_string(e.seq_before),
                        "label": str(e.step.label) if e.step else "EoP",
                        "i": e.step.i if e.step else None, "j": e.step.j if e.step else None,
                        "label_logprob": e.label_logprob, "forced": e.forced}) + "\n")
    _emit({"out": str(out), "n": len(tokens), "failed": len(run.errors),
           "sentences_per_second": run.sentences_per_second, "mean_decode_steps": run.mean_steps})


def _read_predictions(path: Path, profile: Profile) -> tuple[list[ParseTree | None], list[str]]:
    preds, raws = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            raw = rec.get("raw") if rec.get("raw") is not None else (rec.get("tree") or "")
            tree = None
            if rec.get("tree"):
                try:
                    tree = parse_linearized(rec["tree"], Format.LABELED, profile)
                except TreeError:
                    tree = None
            preds.append(tree)
            raws.append(raw)
    return preds, raws


def cmd_eval(args) -> None:
    profile = Profile(args.profile)
    preds, raws = _read_predictions(args.pred, profile)
    golds = corpus_mod.load_corpus(args.gold, profile)
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions for {len(golds)} gold trees")
    report = evaluate(preds, golds, raws)
    if args.report_dir:
        _write_report(report, golds, Path(args.report_dir))
    if args.table:
        sys.stdout.write(report.to_table() + "\n")
    else:
        sys.stdout.write(report.to_json() + "\n")


def _write_report(report: EvalReport, golds, out_dir: Path) -> None:
    from .plotting import metrics_bar, step_histogram

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out_dir / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    metrics_bar(report, out_dir / "metrics.png")
    step_histogram(golds, out_dir / "steps.png")


def cmd_bench(args) -> None:
    model, profile = _model_profile(args.ckpt)
    tokens, golds = _read_inputs(args.input, profile)
    config = DecodeConfig(constrain_to_valid=not args.unconstrained, record_trace=False)
    run = decode_corpus(model, tokens, config, profile, workers=args.workers)
    reference = [g for g in golds if g is not None] or [t for t in run.trees if t is not None]
    report = {"n": len(tokens), "workers": args.workers, "seconds": run.seconds,
              "sentences_per_second": run.sentences_per_second,
              "mean_decode_steps": run.mean_steps, "failed": len(run.errors),
              "step_counts": step_count_comparison(reference) if reference else None,
              "step_counts_source": "gold" if any(g is not None for g in golds) else "predictions"}
    if args.report_dir and reference:
        from .plotting import step_histogram

        out_dir = Path(args.report_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        rows = [("n", report["n"]), ("sentences_per_second", report["sentences_per_second"]),
                ("mean_decode_steps", report["mean_decode_steps"])]
        rows += [(k, v) for k, v in report["step_counts"].items()]
        (out_dir / "bench.tsv").write_text("metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in rows),
                                           encoding="utf-8")
        step_histogram(reference, out_dir / "steps.png")
    _emit(report)


def cmd_trace(args) -> None:
    model, profile = _model_profile(args.ckpt)
    tokens = args.utterance.split()
    if not tokens:
        raise CliError("empty utterance")
    res = decode(model, tokens, DecodeConfig(), profile)
    if args.json:
        _emit({"tokens": tokens, "tree": str(res.tree), "steps": [
            {"label": str(e.step.label) if e.step else "EoP", "i": e.step.i if e.step else None,
             "j": e.step.j if e.step else None, "p_label": float(np.exp(e.label_logprob)),
             "before": seq_to_string(e.seq_before), "forced": e.forced} for e in res.trace]})
        return
    lines = []
    for n, e in enumerate(res.trace, 1):
        lines.append(f"step {n}: {seq_to_string(e.seq_before)}")
        if e.step is None:
            lines.append(f"  -> EoP  (p={np.exp(e.label_logprob):.3f})")
        else:
            tag = "  [forced root]" if e.forced else ""
            lines.append(f"  -> ({e.step.label}, {e.step.i}, {e.step.j})  (p={np.exp(e.label_logprob):.3f}){tag}")
    lines.append(f"result: {res.tree}")
    sys.stdout.write("\n".join(lines) + "\n")


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treeinsert", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-corpus", help="sample a synthetic corpus")
    g.add_argument("--spec", type=_existing, help="GrammarSpec JSON (default: built-in grammar)")
    g.add_argument("--profile", choices=["top", "ner"], default="top")
    g.add_argument("--n", type=int, required=True, help="training trees")
    g.add_argument("--valid", type=int, default=0, help="extra trees written to OUT.valid.jsonl")
    g.add_argument("--test", type=int, default=0, help="extra trees written to OUT.test.jsonl")
    g.add_argument("--nesting-prob", type=float)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train an encoder")
    t.add_argument("--corpus", type=_existing, required=True)
    t.add_argument("--valid", type=_existing)
    t.add_argument("--config", type=_existing, help='JSON with optional "encoder" and "train" sections')
    t.add_argument("--ordering", choices=[o.value for o in Ordering])
    t.add_argument("--profile", choices=["top", "ner"])
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--report-dir", help="write learning_curve.png here")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="parse utterances with a checkpoint")
    d.add_argument("--ckpt", type=_existing, required=True)
    d.add_argument("--input", type=_existing, required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--trace", action="store_true", help="also write OUT.trace.jsonl")
    d.add_argument("--unconstrained", action="store_true")
    d.add_argument("--max-steps", type=int)
    d.add_argument("--workers", type=int, default=1)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score predictions against gold trees")
    e.add_argument("--pred", type=_existing, required=True)
    e.add_argument("--gold", type=_existing, required=True)
    e.add_argument("--profile", choices=["top", "ner"], default="top")
    e.add_argument("--table", action="store_true", help="fixed-order text table instead of JSON")
    e.add_argument("--report-dir", help="write report.json, report.tsv and figures here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="decoding throughput and step counts")
    b.add_argument("--ckpt", type=_existing, required=True)
    b.add_argument("--input", type=_existing, required=True)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--unconstrained", action="store_true")
    b.add_argument("--report-dir")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("trace", help="step-by-step walkthrough for one utterance")
    r.add_argument("--ckpt", type=_existing, required=True)
    r.add_argument("--utterance", required=True)
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    for name in ("workers",):
        if getattr(args, name, 1) < 1:
            _fail("UsageError", f"--{name} must be at least 1", code=2)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - surfaced as JSON
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
