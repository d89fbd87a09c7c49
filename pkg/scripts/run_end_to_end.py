#!/usr/bin/env python3
"""Desk-scale end-to-end experiment on the synthetic corpus.

Generates a corpus, preprocesses it, trains the neural variants and the
four smoothed n-gram baselines, and prints a side-by-side comparison of
test perplexity (full and third-utterance) plus a few decoded samples.

    python3 scripts/run_end_to_end.py --work /tmp/hredchat-e2e --epochs 30
"""

import argparse
import sys
from pathlib import Path

from hredchat import corpus, ngram, synthetic
from hredchat.evaldecode import beam_search, evaluate, sample
from hredchat.models import ModelDims, build_model
from hredchat.tensor import Rng
from hredchat.training import AdamConfig, TrainConfig, train


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default="/tmp/hredchat-e2e")
    ap.add_argument("--movies", type=int, default=30)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--d-h", type=int, default=32)
    ap.add_argument("--d-e", type=int, default=16)
    ap.add_argument("--order", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    work = Path(args.work)
    raw, enc = work / "raw", work / "enc"
    synthetic.write_corpus(raw, n_movies=args.movies, seed=args.seed)
    gaz = corpus.load_gazetteer(raw / "gazetteer.names")
    corpus.preprocess_scripts(raw, enc, cap=500, gazetteer=gaz)
    vocab = corpus.Vocabulary.load(enc / "vocab.tsv")
    splits = {
        name: corpus.load_encoded(enc / f"{name}.triples", vocab)
        for name in ("train", "valid", "test")
    }
    print(f"corpus: {len(splits['train'])}/{len(splits['valid'])}/{len(splits['test'])} "
          f"triples, |V|={len(vocab)}")

    rows = []
    for method in ngram.METHODS:
        model = ngram.train_ngram(splits["train"], args.order, method, len(vocab))
        rows.append((
            f"{method} {args.order}-gram",
            ngram.ngram_perplexity(model, splits["test"], "full"),
            ngram.ngram_perplexity(model, splits["test"], "u3"),
        ))

    dims = ModelDims(args.d_h, args.d_h, args.d_e)
    cfg = TrainConfig(max_epochs=args.epochs, patience=5, seed=args.seed,
                      adam=AdamConfig(lr=0.002))
    trained = {}
    for variant in ("rnn-lm", "hred", "hred-bi"):
        model = build_model(variant, len(vocab), vocab.eou_id, dims, Rng(args.seed))
        ck = train(model, splits["train"], splits["valid"], cfg)
        ck.restore(model)
        report = evaluate(model, splits["test"])
        rows.append((variant, report.ppl, report.ppl_u3))
        trained[variant] = model
        print(f"trained {variant}: best valid ppl {ck.best_valid_ppl:.2f} "
              f"at epoch {ck.epoch}")

    print(f"\n{'Model':<24} {'Perplexity':>12} {'Perplexity@U3':>14}")
    for name, ppl, ppl3 in rows:
        print(f"{name:<24} {ppl:>12.2f} {ppl3:>14.2f}")

    model = trained["hred-bi"]
    ctx_text = ["do you like tea ?", "yes , i love tea ."]
    ctx = [vocab.encode(corpus.tokenize(t, gaz)) + [vocab.eou_id] for t in ctx_text]
    print("\ncontext:", " | ".join(ctx_text))
    best = beam_search(model, ctx, width=5)
    print(f"MAP (beam 5):  {corpus.detokenize(vocab.decode(best.tokens))!r} "
          f"({best.log_prob:.2f})")
    for i in range(3):
        hyp = sample(model, ctx, temperature=1.0, rng=Rng(args.seed).child(i))
        print(f"sample #{i}:    {corpus.detokenize(vocab.decode(hyp.tokens))!r} "
              f"({hyp.log_prob:.2f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
