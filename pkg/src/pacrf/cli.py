"""Command-line front end: ``pacrf gen | train | eval | predict``.

Configuration precedence is flags > ``--config`` file (``key=value`` lines) >
built-in defaults. Every command writes ``manifest.json`` into ``--out-dir``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
import time
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .emission import ZeroPrototypeWarning
from .encoder import build_vocabulary
from .episodes import (Corpus, SyntheticConfig, generate_synthetic, load_corpus, parse_records, read_types,
                       save_corpus, write_types)
from .errors import (CorpusFormatError, DuplicateTypeError, InvalidConfigError, InvalidNameError,
                     PacrfError)
from .labelspace import TaggedSentence, build_label_set, labels_to_spans
from .trainer import VARIANTS, EvalReport, TrainingConfig, build_variant, evaluate, train

log = logging.getLogger("pacrf")

ABLATION_VARIANTS = ("pa-crf", "no-interaction", "point-estimate", "emission-only")
USAGE_ERRORS = (InvalidConfigError, InvalidNameError, DuplicateTypeError)


class UsageError(Exception):
    """Bad flag combination detected after argument parsing (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration helpers

def _coerce(value: str, default: Any, key: str):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
    if isinstance(default, list):
        return [v.strip() for v in value.split(",") if v.strip()]
    try:
        return type(default)(value.strip())
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {value!r} as {type(default).__name__}") from None


def read_config_file(path: str | None) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    if not path:
        return {}
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(cls, file_values: dict[str, str], flag_values: dict[str, Any]):
    """Build a dataclass config from defaults, then the config file, then flags."""
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in dataclasses.fields(cls)}
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(defaults)
    for k, v in file_values.items():
        values[k] = _coerce(v, defaults[k], k)
    for k, v in flag_values.items():
        if v is not None:
            values[k] = v
    return cls(**values)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, corpora: dict[str, str],
                   checkpoint: str | None, metrics, started: float, outputs: Sequence[str]) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "corpus_digests": {name: sha256_file(p) for name, p in corpora.items() if p},
        "checkpoint_digest": sha256_file(checkpoint) if checkpoint else None,
        "metrics": metrics,
        "outputs": list(outputs),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_labelled(path: str, types_path: str | None = None) -> Corpus:
    labelset = build_label_set(read_types(types_path)) if types_path else None
    return load_corpus(path, labelset)


# ---------------------------------------------------------------------------
# gen

GEN_FLAGS = {
    "types": "num_types", "test_types": "test_types", "vocab_size": "vocab_size",
    "lexicon_size": "lexicon_size", "continuation_size": "continuation_size", "p_multi": "p_multi",
    "distractor_rate": "distractor_rate", "overlap": "overlap", "min_length": "min_length",
    "max_length": "max_length", "sentences_per_type": "sentences_per_type",
}


def cmd_gen(args) -> int:
    started = time.time()
    flags = {field: getattr(args, flag) for flag, field in GEN_FLAGS.items()}
    flags["seed"] = args.seed
    cfg = resolve(SyntheticConfig, read_config_file(args.config), flags)
    train_corpus, test_corpus = generate_synthetic(cfg)
    out = _out_dir(args)
    files = {"train": out / "train.jsonl", "test": out / "test.jsonl"}
    save_corpus(files["train"], train_corpus)
    save_corpus(files["test"], test_corpus)
    write_types(out / "train_types.txt", train_corpus.event_types)
    write_types(out / "test_types.txt", test_corpus.event_types)
    stats = {"train_sentences": len(train_corpus), "test_sentences": len(test_corpus),
             "train_types": len(train_corpus.event_types), "test_types": len(test_corpus.event_types)}
    write_manifest(out, "gen", cfg.to_dict(), cfg.seed, {k: str(v) for k, v in files.items()}, None, stats,
                   started, ["train.jsonl", "test.jsonl", "train_types.txt", "test_types.txt"])
    print(f"wrote {stats['train_sentences']} train / {stats['test_sentences']} test sentences to {out}")
    return 0


# ---------------------------------------------------------------------------
# train

def _training_config(args) -> TrainingConfig:
    flags = {
        "variant": args.variant, "way": args.way, "shot": args.shot, "query": args.query,
        "train_iterations": args.iterations, "mc_samples": args.mc_samples,
        "learning_rate": args.learning_rate, "weight_decay": args.weight_decay, "d_h": args.d_h,
        "mix": args.mix, "encoder": args.encoder, "embeddings_path": args.embeddings,
        "decode": args.decode, "seed": args.seed, "train_path": args.train,
        "vocab_paths": args.vocab_from or None,
        "constrained": True if args.constrained else None,
    }
    cfg = resolve(TrainingConfig, read_config_file(args.config), flags)
    if cfg.variant not in VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}; choose from {', '.join(VARIANTS)}")
    if not cfg.train_path:
        raise UsageError("train needs a training corpus (--train or train_path in --config)")
    return cfg.validate()


def vocabulary_for(cfg: TrainingConfig, corpus: Corpus):
    """Vocabulary over the training corpus plus the tokens of any ``vocab_paths`` corpora."""
    sentences: list = list(corpus.sentences)
    for path in cfg.vocab_paths:
        with open(path, encoding="utf-8") as fh:
            sentences += [rec["tokens"] for _, rec in parse_records(fh)]
    return build_vocabulary(sentences)


def cmd_train(args) -> int:
    started = time.time()
    cfg = _training_config(args)
    corpus = _load_labelled(cfg.train_path, args.types)
    vocab = vocabulary_for(cfg, corpus) if cfg.encoder == "toy" else None
    model = build_variant(cfg, vocab=vocab)
    every = max(1, cfg.train_iterations // 20)

    def progress(it: int, loss: float) -> None:
        if (it + 1) % every == 0:
            log.info("iteration %d/%d loss %.4f", it + 1, cfg.train_iterations, loss)

    result = train(cfg, corpus, model=model, progress=progress)
    out = _out_dir(args)
    trace = out / "loss_trace.csv"
    with open(trace, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, value in enumerate(result.losses):
            w.writerow([i, repr(value)])
    ckpt_path = out / "model.ckpt"
    save_checkpoint(ckpt_path, Checkpoint.from_model(result.model, result.rng_state))
    metrics = {"iterations": len(result.losses),
               "final_loss": result.losses[-1] if result.losses else None,
               "dead_parameters": sorted(k for k, seen in result.grad_seen.items() if not seen)
               if result.losses else []}
    corpora = {"train": cfg.train_path} | {f"vocab:{p}": p for p in cfg.vocab_paths}
    write_manifest(out, "train", cfg.to_dict(), cfg.seed, corpora, str(ckpt_path), metrics, started,
                   ["model.ckpt", "loss_trace.csv"])
    print(f"trained {cfg.variant} for {len(result.losses)} iterations; checkpoint {ckpt_path}")
    return 0


# ---------------------------------------------------------------------------
# eval

METRIC_COLUMNS = ("variant", "way", "shot", "episodes", "precision_mean", "precision_std",
                  "recall_mean", "recall_std", "f1_mean", "f1_std")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def format_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text table with percentages as ``mean ± std`` per (variant, way, shot)."""
    header = ("variant", "way-shot", "episodes", "precision", "recall", "F1")
    rows = [(r.variant, f"{r.way}-way-{r.shot}-shot", str(r.episodes),
             *(f"{100 * m:.2f} ± {100 * s:.2f}" for m, s in (r.precision, r.recall, r.f1)))
            for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def metrics_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([row[c] if isinstance(row[c], (str, int)) else repr(float(row[c])) for c in METRIC_COLUMNS])
    return buf.getvalue()


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    test = _load_labelled(args.test, args.types)
    episodes = args.episodes if args.episodes is not None else ckpt.config.eval_episodes
    seed = args.seed if args.seed is not None else ckpt.config.seed
    ways = args.way or [ckpt.config.way]
    shots = args.shot or [ckpt.config.shot]

    if args.ablate:
        names = ABLATION_VARIANTS if args.ablate == "all" else tuple(v.strip() for v in args.ablate.split(","))
        bad = [v for v in names if v not in VARIANTS]
        if bad:
            raise UsageError(f"unknown variant(s) in --ablate: {', '.join(bad)}")
        train_path = args.train or ckpt.config.train_path
        if not train_path:
            raise UsageError("--ablate needs the training corpus (--train or the checkpoint's train_path)")
        train_corpus = _load_labelled(train_path, args.train_types)
        models = []
        for name in names:
            cfg = dataclasses.replace(ckpt.config, variant=name)
            vocab = vocabulary_for(cfg, train_corpus) if cfg.encoder == "toy" else None
            log.info("ablation: training %s", name)
            models.append(train(cfg, train_corpus, model=build_variant(cfg, vocab=vocab)).model)
    else:
        models = [ckpt.to_model()]

    reports = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroPrototypeWarning)
        for model in models:
            for way in ways:
                for shot in shots:
                    reports.append(evaluate(model, test, episodes, seed=seed, way=way, shot=shot,
                                            threads=args.threads))
    out = _out_dir(args)
    table = format_table(reports)
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    (out / "metrics.csv").write_text(metrics_csv(reports), encoding="utf-8")
    sys.stdout.write(table)
    config = ckpt.config.to_dict() | {"eval_episodes": episodes, "ways": ways, "shots": shots,
                                      "ablate": args.ablate or ""}
    write_manifest(out, "eval", config, seed, {"test": args.test}, args.checkpoint,
                   [r.row() for r in reports], started, ["metrics.txt", "metrics.csv"])
    return 0


# ---------------------------------------------------------------------------
# predict

def read_inputs(path: str) -> list[TaggedSentence]:
    """Token-only JSON Lines (``labels`` ignored if present); ids default to the line order."""
    with open(path, encoding="utf-8") as fh:
        records = parse_records(fh)
    out = []
    for lineno, rec in records:
        if not rec["tokens"]:
            raise CorpusFormatError("empty token list", lineno)
        toks = tuple(str(t) for t in rec["tokens"])
        out.append(TaggedSentence(toks, (0,) * len(toks), str(rec.get("id", len(out)))))
    return out


def cmd_predict(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.to_model()
    support = _load_labelled(args.support, args.types)
    inputs = read_inputs(args.input)
    labelset = support.labelset
    lines = []
    if inputs:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ZeroPrototypeWarning)
            pred = model.predict(support.sentences, inputs, labelset, np.random.default_rng([args.seed or 0, 4]))
        for w in caught:
            if issubclass(w.category, ZeroPrototypeWarning):
                print(f"warning: {w.message}", file=sys.stderr)
        for s, y in zip(inputs, pred):
            spans = labels_to_spans(y, labelset)
            lines.append(json.dumps({"id": s.sid, "tokens": list(s.tokens),
                                     "labels": [labelset.name(i) for i in y],
                                     "spans": [{"start": sp.start, "end": sp.end, "type": sp.event_type}
                                               for sp in spans]}, ensure_ascii=False))
    out = _out_dir(args)
    target = Path(args.output) if args.output else out / "predictions.jsonl"
    target.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    write_manifest(out, "predict", ckpt.config.to_dict(), args.seed if args.seed is not None else ckpt.config.seed,
                   {"support": args.support, "input": args.input}, args.checkpoint,
                   {"sentences": len(inputs)}, started, [str(target)])
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="random seed (default: config value, else 0)")
    shared.add_argument("--config", help="key=value configuration file; flags take precedence")
    shared.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
    shared.add_argument("--threads", type=int, default=1, help="worker threads for evaluation episodes")
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="pacrf", description="Few-shot trigger tagging with prototype-aware CRFs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[shared], help="generate a synthetic train/test corpus pair")
    g.add_argument("--types", type=int, help="total number of event types")
    g.add_argument("--test-types", type=int, help="event types held out for the test corpus")
    g.add_argument("--vocab-size", type=int, help="background vocabulary size")
    g.add_argument("--lexicon-size", type=int, help="trigger head words per type")
    g.add_argument("--continuation-size", type=int, help="continuation words per type")
    g.add_argument("--p-multi", type=float, help="probability of a 2-3 token trigger")
    g.add_argument("--distractor-rate", type=float,
                   help="probability that a continuation word also appears outside the trigger")
    g.add_argument("--overlap", type=float, help="fraction of trigger words shared across types")
    g.add_argument("--min-length", type=int)
    g.add_argument("--max-length", type=int)
    g.add_argument("--sentences-per-type", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[shared], help="episodic training; writes model.ckpt and loss_trace.csv")
    t.add_argument("--train", help="training corpus (JSON Lines)")
    t.add_argument("--types", help="event type file for the training corpus (default: inferred)")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--way", type=int)
    t.add_argument("--shot", type=int)
    t.add_argument("--query", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--mc-samples", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--d-h", type=int)
    t.add_argument("--mix", type=float, help="context-mixing weight of the toy encoder")
    t.add_argument("--encoder", choices=("toy", "precomputed"))
    t.add_argument("--embeddings", help="PACRFEMB file for --encoder precomputed")
    t.add_argument("--decode", choices=("mean", "mc-marginal"))
    t.add_argument("--constrained", action="store_true", help="forbid ill-formed BIO paths when decoding")
    t.add_argument("--vocab-from", action="append", metavar="CORPUS",
                   help="add this corpus's tokens to the vocabulary (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[shared], help="episodic evaluation; writes metrics.txt/.csv")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True, help="test corpus (JSON Lines)")
    e.add_argument("--types", help="event type file for the test corpus")
    e.add_argument("--episodes", type=int)
    e.add_argument("--way", type=_int_list, help="comma-separated N values (default: checkpoint)")
    e.add_argument("--shot", type=_int_list, help="comma-separated K values (default: checkpoint)")
    e.add_argument("--ablate", help="'all' or comma-separated variants, each retrained from the same seed")
    e.add_argument("--train", help="training corpus for --ablate (default: checkpoint's train_path)")
    e.add_argument("--train-types", help="event type file for --train")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", parents=[shared], help="tag sentences given a labelled support file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--support", required=True, help="labelled support sentences (JSON Lines)")
    r.add_argument("--types", help="event type file for the support set")
    r.add_argument("--input", required=True, help="sentences to tag (JSON Lines with 'tokens')")
    r.add_argument("--output", help="output path (default: OUT_DIR/predictions.jsonl)")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"pacrf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PacrfError, OSError) as exc:
        print(f"pacrf {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
