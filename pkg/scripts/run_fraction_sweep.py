#!/usr/bin/env python3
"""Labeled-fraction sweep: semi-supervised triplet+RNN vs svTCN+RNN."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionseg.cli import write_csv
from motionseg.data import SyntheticConfig, generate_synthetic
from motionseg.experiments import fraction_sweep
from motionseg.pipeline import PipelineConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="sweep.csv")
    parser.add_argument("--fractions", default="0.05,0.25,0.5,1.0")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--rounds", type=int, default=3)
    args = parser.parse_args()

    dataset = generate_synthetic(SyntheticConfig(seed=0))
    config = PipelineConfig(
        rounds=args.rounds, top_k=100, stride=64, embed_dim=32, encoder_hidden=(256, 64),
        embed_epochs=30, batch_size=128, rnn_hidden=32, rnn_epochs=15, rnn_lr=1e-2,
    )
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    records = fraction_sweep(dataset, fractions, config, seeds=range(args.seeds))
    write_csv(
        args.out,
        ["fraction", "triplet_rnn_ss", "svtcn_rnn", "seeds"],
        [(r["fraction"], r["triplet_rnn_ss"], r["svtcn_rnn"], r["seeds"]) for r in records],
    )
    for r in records:
        print(
            f"fraction={r['fraction']:.2f} triplet_rnn_ss={r['triplet_rnn_ss']:.3f} "
            f"svtcn_rnn={r['svtcn_rnn']:.3f}"
        )


if __name__ == "__main__":
    main()
