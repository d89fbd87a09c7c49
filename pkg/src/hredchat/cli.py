"""Command-line entry points for every pipeline stage.

    hredchat synth       write a synthetic script corpus
    hredchat preprocess  raw scripts -> encoded splits + vocabulary
    hredchat train       fit a neural model, optionally bootstrapped
    hredchat eval        score a checkpoint on an encoded dataset
    hredchat ngram       train/eval the smoothed n-gram baselines
    hredchat sample      MAP or stochastic next-utterance for a context
    hredchat serve       start the HTTP chat service

Every subcommand validates its flags up front, exits nonzero with a message
on failure, and removes any files it only partially wrote.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import corpus, evaldecode, ngram, service, synthetic, training
from .models import ModelDims, build_model
from .tensor import Rng


class CliError(Exception):
    pass


class _Outputs:
    """Tracks files a command creates so failures leave no partial output."""

    def __init__(self):
        self.paths: list[Path] = []

    def register(self, *paths) -> None:
        self.paths.extend(Path(p) for p in paths)

    def discard(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _load_vocab(path) -> corpus.Vocabulary:
    path = Path(path)
    if not path.exists():
        raise CliError(f"vocabulary file not found: {path}")
    return corpus.Vocabulary.load(path)


def _load_gazetteer(path) -> frozenset[str]:
    if path is None:
        return frozenset()
    p = Path(path)
    if not p.exists():
        raise CliError(f"gazetteer file not found: {p}")
    return corpus.load_gazetteer(p)


def _load_dataset(path, vocab):
    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset file not found: {p}")
    return corpus.load_encoded(p, vocab)


def _parse_context(text: str, vocab: corpus.Vocabulary, gazetteer: frozenset[str]):
    """Context utterances from a </s>-separated string."""
    utterances = []
    for chunk in text.split(corpus.EOU):
        tokens = corpus.tokenize(chunk, gazetteer)
        if tokens:
            utterances.append(vocab.encode(tokens) + [vocab.eou_id])
    if not utterances:
        raise CliError("context contains no tokens")
    return utterances


def _dims(spec: str) -> ModelDims:
    try:
        d_h, d_ctx, d_e = (int(x) for x in spec.split(","))
    except ValueError:
        raise CliError(f"--dims expects d_h,d_ctx,d_e, got {spec!r}") from None
    return ModelDims(d_h=d_h, d_ctx=d_ctx, d_e=d_e)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_synth(args, out: _Outputs) -> int:
    written = synthetic.write_corpus(
        args.out, n_movies=args.movies, seed=args.seed,
        dialogues_per_movie=args.dialogues_per_movie, qa_pairs=args.qa_pairs,
    )
    out.register(*written)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_preprocess(args, out: _Outputs) -> int:
    gaz = _load_gazetteer(args.gazetteer)
    fractions = tuple(float(x) for x in args.split.split(","))
    if len(fractions) != 3:
        raise CliError("--split expects three comma-separated fractions")
    try:
        summary = corpus.preprocess_scripts(
            args.scripts, args.out, cap=args.cap, gazetteer=gaz,
            limit=args.truncate, fractions=fractions, qa_path=args.qa,
        )
    except (FileNotFoundError, ValueError) as e:
        raise CliError(str(e)) from None
    out.register(*summary["files"])
    stats_path = Path(args.out) / "stats.json"
    payload = {
        "vocab_size": summary["vocab_size"],
        "vocab_hash": summary["vocab_hash"],
        "qa_pairs": summary["qa_pairs"],
        "qa_skipped": summary["qa_skipped"],
        "splits": {
            name: {
                "dialogues": s.dialogues,
                "avg_tokens": s.avg_tokens,
                "avg_unk": s.avg_unk,
                "movies": s.movies,
            }
            for name, s in summary["stats"].items()
        },
    }
    stats_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    out.register(stats_path)
    print(f"{'split':<8} {'dialogues':>10} {'avg tokens':>11} {'avg unk':>9} {'movies':>7}")
    for name, s in summary["stats"].items():
        print(f"{name:<8} {s.dialogues:>10} {s.avg_tokens:>11.1f} {s.avg_unk:>9.2f} {s.movies:>7}")
    print(f"vocabulary: {summary['vocab_size']} tokens, hash {summary['vocab_hash'][:16]}")
    return 0


def cmd_train(args, out: _Outputs) -> int:
    vocab = _load_vocab(Path(args.data) / "vocab.tsv")
    train_set = _load_dataset(Path(args.data) / "train.triples", vocab)
    valid_set = _load_dataset(Path(args.data) / "valid.triples", vocab)
    rng = Rng(args.seed)
    model = build_model(
        args.variant, vocab_size=len(vocab), eou_id=vocab.eou_id,
        dims=_dims(args.dims), rng=rng,
        maxout_k=2 if args.maxout else 0, bi_mode=args.bi_mode,
    )
    config = training.TrainConfig(
        max_epochs=args.epochs, patience=args.patience, seed=args.seed,
        truncate_limit=args.truncate, adam=training.AdamConfig(lr=args.lr),
        log_path=args.log,
    )
    if args.log:
        out.register(args.log)

    if args.pretrain_qa is not None:
        qa_set = _load_dataset(args.pretrain_qa, vocab)
        result = training.pretrain_finetune(
            model, qa_set, train_set, valid_set, config,
            pretrain_epochs=args.pretrain_epochs,
        )
    elif args.embeddings is not None:
        plan = training.bootstrap_embeddings(model, vocab, args.embeddings, config)
        print(f"embeddings: {len(plan.covered_ids)} covered, {plan.missing} missing")
        stage1 = training.train(model, train_set, valid_set, plan.stage1)
        stage1.restore(model)
        result = training.train(model, train_set, valid_set, plan.stage2)
    else:
        result = training.train(model, train_set, valid_set, config)

    result.restore(model)
    extra = {
        "epoch": result.epoch,
        "step": result.step,
        "best_valid_ppl": result.best_valid_ppl,
        "seed": args.seed,
    }
    ckpt_io.save_model(args.out, model, vocab.content_hash(), extra)
    out.register(args.out)
    print(f"best validation perplexity {result.best_valid_ppl:.3f} "
          f"at epoch {result.epoch} (step {result.step})")
    print(f"checkpoint written to {args.out}")
    return 0


def _load_model_and_vocab(model_path, vocab_path):
    p = Path(model_path)
    if not p.exists():
        raise CliError(f"checkpoint not found: {p}")
    model, ckpt = ckpt_io.load_model(p)
    vocab = _load_vocab(vocab_path)
    if vocab.content_hash() != ckpt.vocab_hash:
        raise CliError(
            "vocabulary hash mismatch between checkpoint and --vocab file"
        )
    return model, vocab


def cmd_eval(args, out: _Outputs) -> int:
    model, vocab = _load_model_and_vocab(args.model, args.vocab)
    dataset = _load_dataset(args.data, vocab)
    report = evaldecode.evaluate(model, dataset)
    print(report.to_json())
    if args.scope == "full":
        print(f"perplexity {report.ppl:.2f}   error-rate {report.wer * 100:.2f}%")
    elif args.scope == "u3":
        print(f"perplexity@U3 {report.ppl_u3:.2f}   error-rate@U3 {report.wer_u3 * 100:.2f}%")
    else:
        print(report.table(label=Path(args.model).stem))
    if args.out is not None:
        Path(args.out).write_text(report.to_json() + "\n")
        out.register(args.out)
    return 0


def cmd_ngram_train(args, out: _Outputs) -> int:
    vocab = _load_vocab(args.vocab)
    data = _load_dataset(args.data, vocab)
    try:
        model = ngram.train_ngram(data, order=args.order, method=args.method,
                                  vocab_size=len(vocab))
    except ValueError as e:
        raise CliError(str(e)) from None
    ngram.save_ngram(model, args.out)
    out.register(args.out)
    print(f"{args.method} order-{args.order} model written to {args.out}")
    return 0


def cmd_ngram_eval(args, out: _Outputs) -> int:
    p = Path(args.model)
    if not p.exists():
        raise CliError(f"model file not found: {p}")
    model = ngram.load_ngram(p)
    vocab = _load_vocab(args.vocab)
    if len(vocab) != model.vocab_size:
        raise CliError("vocabulary size mismatch between model and --vocab file")
    data = _load_dataset(args.data, vocab)
    record = {"ppl": ngram.ngram_perplexity(model, data, "full")}
    if args.scope in ("u3", "both"):
        record["ppl_u3"] = ngram.ngram_perplexity(model, data, "u3")
    print(json.dumps(record, sort_keys=True))
    return 0


def cmd_sample(args, out: _Outputs) -> int:
    model, vocab = _load_model_and_vocab(args.model, args.vocab)
    gaz = _load_gazetteer(args.gazetteer)
    context = _parse_context(args.context, vocab, gaz)
    for i in range(args.n):
        if args.mode == "map":
            hyp = evaldecode.beam_search(model, context, args.beam, args.max_len)
        else:
            hyp = evaldecode.sample(model, context, args.temperature,
                                    Rng(args.seed).child(i), args.max_len)
        text = corpus.detokenize(vocab.decode(hyp.tokens))
        print(f"{hyp.log_prob:.4f}\t{text}")
    return 0


def cmd_serve(args, out: _Outputs) -> int:
    model, vocab = _load_model_and_vocab(args.model, args.vocab)
    gaz = _load_gazetteer(args.gazetteer)
    app = service.create_app(
        model, vocab, gazetteer=gaz, session_ttl_s=args.ttl,
        default_settings=service.DecodeSettings(seed=args.seed),
    )
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hredchat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic script corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--movies", type=int, default=20)
    p.add_argument("--dialogues-per-movie", type=int, default=4)
    p.add_argument("--qa-pairs", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="scripts -> encoded splits + vocab")
    p.add_argument("--scripts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--qa", default=None, help="raw Q<TAB>A file to encode jointly")
    p.add_argument("--cap", type=int, default=10000)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--truncate", type=int, default=80)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="fit a neural dialogue model")
    p.add_argument("--data", required=True, help="preprocess output directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--variant", choices=("rnn-lm", "hred", "hred-bi"), default="hred")
    p.add_argument("--dims", default="64,64,32", help="d_h,d_ctx,d_e")
    p.add_argument("--bi-mode", choices=("concat", "l2pool"), default="l2pool")
    p.add_argument("--maxout", action="store_true")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--truncate", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None, help="validation log file")
    p.add_argument("--embeddings", default=None, help="word-vector file (two-stage)")
    p.add_argument("--pretrain-qa", default=None, help="encoded Q-A dialogues")
    p.add_argument("--pretrain-epochs", type=int, default=4)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scope", choices=("full", "u3", "both"), default="both")
    p.add_argument("--out", default=None, help="also write the JSON record here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ngram", help="smoothed n-gram baselines")
    ngram_sub = p.add_subparsers(dest="ngram_command", required=True)
    q = ngram_sub.add_parser("train")
    q.add_argument("--data", required=True)
    q.add_argument("--vocab", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--order", type=int, default=3)
    q.add_argument("--method", choices=ngram.METHODS, default="witten-bell")
    q.set_defaults(fn=cmd_ngram_train)
    q = ngram_sub.add_parser("eval")
    q.add_argument("--model", required=True)
    q.add_argument("--vocab", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--scope", choices=("full", "u3", "both"), default="both")
    q.set_defaults(fn=cmd_ngram_eval)

    p = sub.add_parser("sample", help="decode a next utterance for a context")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--context", required=True, help="utterances separated by </s>")
    p.add_argument("--mode", choices=("map", "sample"), default="map")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-len", type=int, default=evaldecode.DEFAULT_MAX_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1, help="number of outputs")
    p.add_argument("--gazetteer", default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("serve", help="start the HTTP chat service")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ttl", type=float, default=service.DEFAULT_SESSION_TTL_S)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gazetteer", default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = _Outputs()
    try:
        return args.fn(args, out)
    except CliError as e:
        out.discard()
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        out.discard()
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
