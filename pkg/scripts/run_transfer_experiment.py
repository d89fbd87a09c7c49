#!/usr/bin/env python3
"""Bootstrapping comparison on a synthetic source/target pair.

For each seed, trains the same model three ways on a small triple corpus:
from scratch, with externally initialized word embeddings (two-stage
schedule), and pretrained on a larger two-turn Q-A corpus then fine-tuned
with frozen embeddings.  Reports held-out perplexity per arm.

    python3 scripts/run_transfer_experiment.py --seeds 1 2 3
"""

import argparse
import statistics
import sys
import tempfile
from pathlib import Path

from hredchat import corpus, synthetic
from hredchat.models import ModelDims, build_model
from hredchat.tensor import Rng
from hredchat.training import (
    AdamConfig,
    TrainConfig,
    bootstrap_embeddings,
    pretrain_finetune,
    train,
)


def build_data(seed: int, qa_pairs: int, movies: int):
    gen = Rng(seed)
    produced = synthetic.generate_movies(gen, movies, dialogues_per_movie=4)
    triples = []
    for name, dialogues in produced:
        triples.extend(corpus.make_triples(dialogues, synthetic.gazetteer(), movie=name))
    qa_surface, _ = corpus.qa_to_dialogues(
        synthetic.generate_qa_pairs(gen, qa_pairs), synthetic.gazetteer()
    )
    streams = [list(u) for t in triples for u in t.utterances]
    streams += [u for d in qa_surface for u in d]
    vocab = corpus.build_vocab(streams, cap=500)
    encoded = [[vocab.encode(u) for u in t.utterances] for t in triples]
    qa = [[vocab.encode(u) for u in d] for d in qa_surface]
    return vocab, encoded, qa


def random_vector_file(path: Path, vocab, d_e: int, seed: int) -> None:
    """Stand-in for externally trained word vectors (none ship with the
    synthetic corpus); covers the non-reserved vocabulary."""
    draw = Rng(seed)
    lines = [
        tok + " " + " ".join(repr(float(x)) for x in draw.standard_normal(d_e))
        for tok in vocab.id_to_token[5:]
    ]
    path.write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--target-train", type=int, default=30)
    ap.add_argument("--target-valid", type=int, default=60)
    ap.add_argument("--qa-pairs", type=int, default=300)
    ap.add_argument("--finetune-epochs", type=int, default=8)
    ap.add_argument("--pretrain-epochs", type=int, default=4)
    ap.add_argument("--d-h", type=int, default=32)
    ap.add_argument("--d-e", type=int, default=16)
    args = ap.parse_args(argv)

    vocab, encoded, qa = build_data(42, args.qa_pairs, movies=30)
    target_train = encoded[:args.target_train]
    target_valid = encoded[args.target_train:args.target_train + args.target_valid]
    dims = ModelDims(args.d_h, args.d_h, args.d_e)
    print(f"target {len(target_train)} train / {len(target_valid)} valid triples, "
          f"{len(qa)} Q-A pairs, |V|={len(vocab)}")

    results = {"scratch": [], "word-vectors": [], "pretrain+finetune": []}
    for seed in args.seeds:
        cfg = TrainConfig(max_epochs=args.finetune_epochs, patience=10 ** 6,
                          seed=seed, adam=AdamConfig(lr=0.002))

        model = build_model("hred", len(vocab), vocab.eou_id, dims, Rng(seed))
        results["scratch"].append(
            train(model, target_train, target_valid, cfg).best_valid_ppl)

        model = build_model("hred", len(vocab), vocab.eou_id, dims, Rng(seed))
        with tempfile.TemporaryDirectory() as tmp:
            vec_path = Path(tmp) / "vectors.txt"
            random_vector_file(vec_path, vocab, args.d_e, seed=777)
            plan = bootstrap_embeddings(model, vocab, vec_path, cfg)
            stage1 = train(model, target_train, target_valid, plan.stage1)
            stage1.restore(model)
            results["word-vectors"].append(
                train(model, target_train, target_valid, plan.stage2).best_valid_ppl)

        model = build_model("hred", len(vocab), vocab.eou_id, dims, Rng(seed))
        results["pretrain+finetune"].append(
            pretrain_finetune(model, qa, target_train, target_valid, cfg,
                              pretrain_epochs=args.pretrain_epochs).best_valid_ppl)
        print(f"seed {seed}: " + "  ".join(
            f"{k} {v[-1]:.2f}" for k, v in results.items()))

    print(f"\n{'arm':<20} {'median valid ppl':>16}")
    for arm, values in results.items():
        print(f"{arm:<20} {statistics.median(values):>16.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
