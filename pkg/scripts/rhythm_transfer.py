"""Rhythm-transfer experiment on synthetic corpora.

Trains the duration predictor on a mora-timed corpus, applies each pipeline
mode to a stress-timed corpus and prints unit-duration statistics per
condition as TSV. Default settings finish in about a minute on one CPU core.

    python scripts/rhythm_transfer.py --epochs 10 --n-train 2000 --n-test 500
"""

import argparse
import logging
import time

from duraccent.accent import PipelineMode, modify_sequence
from duraccent.durmodel import DurationModelConfig, build_training_set, train
from duraccent.synthgen import MORA, STRESS, SynthConfig, gen_codebook, gen_utterance
from duraccent.tokenizer import encode_frames
from duraccent.unitseq import duration_stats


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--min-len", type=int, default=50)
    p.add_argument("--max-len", type=int, default=150)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--filter-size", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p.parse_args()


def corpus(cb, profile, cfg):
    return [encode_frames(gen_utterance(cb, profile, cfg, i)[0], cb) for i in range(cfg.num_utterances)]


def main():
    args = parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    lengths = (args.min_len, args.max_len)
    train_cfg = SynthConfig(k=args.k, dim=args.dim, num_utterances=args.n_train,
                            utterance_length_frames=lengths, seed=args.seed)
    test_cfg = SynthConfig(k=args.k, dim=args.dim, num_utterances=args.n_test,
                           utterance_length_frames=lengths, seed=args.seed + 1)
    cb = gen_codebook(train_cfg)
    mora = corpus(cb, MORA, train_cfg)
    stress = corpus(cb, STRESS, test_cfg)

    t0 = time.perf_counter()
    model = train(build_training_set(mora), DurationModelConfig(
        codebook_size=args.k, embed_dim=args.embed_dim, filter_size=args.filter_size,
        dropout_rate=args.dropout, epochs=args.epochs, seed=args.seed))
    logging.info("training took %.1f s, final loss %.4f", time.perf_counter() - t0, model.loss_trace[-1])

    rows = [("mora (training)", duration_stats(mora))]
    for mode in PipelineMode:
        out = [modify_sequence(s, model, mode) for s in stress]
        rows.append((f"stress {mode.value}", duration_stats(out)))
    print("condition\tmean\tsd\truns")
    for name, st in rows:
        print(f"{name}\t{st.mean:.3f}\t{st.sd:.3f}\t{st.count}")


if __name__ == "__main__":
    main()
