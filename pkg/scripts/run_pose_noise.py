#!/usr/bin/env python3
"""Pose imitation metrics for pooled vs per-demonstrator decoders with noise."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionseg.cli import write_csv
from motionseg.data import SyntheticConfig, generate_synthetic
from motionseg.experiments import pose_table
from motionseg.pipeline import PipelineConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="pose_metrics.csv")
    parser.add_argument("--noise", type=float, default=0.15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--decoder-epochs", type=int, default=200)
    args = parser.parse_args()

    dataset = generate_synthetic(
        SyntheticConfig(noise_sigma=0.15, pose_phase_amp_cm=0.4, proto_scale=1.5, seed=args.seed)
    )
    config = PipelineConfig(
        embed_dim=32, encoder_hidden=(256, 64), embed_epochs=30, batch_size=128, seed=args.seed
    )
    rows, _, _ = pose_table(
        dataset, config, noise_sigmas=(0.0, args.noise), seed=args.seed,
        decoder_hidden=(64, 32), decoder_epochs=args.decoder_epochs,
    )
    write_csv(
        args.out,
        ["scope", "noise_sigma", "rmse_position_cm", "median_cosine_quat_loss"],
        [
            (r["scope"], r["noise_sigma"], r["rmse_position_cm"], r["median_cosine_quat_loss"])
            for r in rows
        ],
    )
    for r in rows:
        print(
            f"scope={r['scope']} noise={r['noise_sigma']:.2f} "
            f"rmse={r['rmse_position_cm']:.3f}cm quat={r['median_cosine_quat_loss']:.5f}"
        )


if __name__ == "__main__":
    main()
