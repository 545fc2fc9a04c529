"""Command-line surface.

Subcommands: gen-data, train, eval, imitate, embed-dump. Configuration
comes from a sectioned key-value text file plus command-line overrides;
every run is deterministic given (config, seed) and reruns produce
byte-identical outputs. Exit codes: 0 success, 1 runtime or data error,
2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import modelio
from .data import (
    SyntheticConfig,
    confusion_matrix,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .embedding import Embedding, encode_array, pca2d
from .errors import ConfigError, MotionsegError
from .experiments import GRID_COLS, GRID_ROWS, fraction_sweep, grid_eval, pose_table
from .imitation import trajectory_rows
from .pipeline import PipelineConfig, predict_frames, run_alternation

CONFIG_SECTIONS = {
    "synthetic": SyntheticConfig,
    "pipeline": PipelineConfig,
}
# imitate knobs are plain keys, not a dataclass
IMITATE_KEYS = {
    "decoder_hidden": (512, 256, 128, 64, 32, 16),
    "decoder_epochs": 200,
    "w_pos": 0.5,
}


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_config_file(path) -> dict:
    """Sectioned key-value text: '[section]' headers, 'key = value' lines."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if current not in CONFIG_SECTIONS and current != "imitate":
                    raise ConfigError(f"unknown config section [{current}] at line {lineno}")
                sections.setdefault(current, {})
                continue
            if "=" not in line or current is None:
                raise ConfigError(f"expected 'key = value' inside a section at line {lineno}")
            key, _, value = line.partition("=")
            sections[current][key.strip()] = value.strip()
    return sections


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple) or isinstance(default, (list,)):
        parts = [p for p in value.split(",") if p.strip()]
        return tuple(int(float(p)) if float(p) == int(float(p)) else float(p) for p in parts)
    return value


def build_dataclass(cls, raw: dict, overrides: dict | None = None):
    field_defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in field_defaults:
            raise ConfigError(f"unknown key '{key}' for section [{_section_of(cls)}]")
        default = field_defaults[key]
        if key == "mean_durations":
            parts = [float(p) for p in value.split(",") if p.strip()]
            kwargs[key] = parts[0] if len(parts) == 1 else tuple(parts)
        else:
            kwargs[key] = _coerce(value, default if default is not dataclasses.MISSING else "")
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _section_of(cls):
    for name, c in CONFIG_SECTIONS.items():
        if c is cls:
            return name
    return cls.__name__


def echo_config(obj) -> list[str]:
    out = []
    for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
        out.append(f"{f.name} = {getattr(obj, f.name)}")
    return out


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [_fmt(v) if isinstance(v, float) else str(v) for v in row]
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    sections = parse_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed} if args.seed is not None else None
    config = build_dataclass(SyntheticConfig, sections.get("synthetic", {}), overrides)
    dataset = generate_synthetic(config)
    manifest = save_dataset(dataset, args.out)
    print(f"demos = {len(dataset.demos)}")
    print(f"frames = {dataset.num_frames}")
    print(f"classes = {dataset.num_classes}")
    print(f"feature_width = {dataset.feature_width}")
    print(f"manifest = {manifest}")
    return 0


def _pipeline_config(args, sections) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "rounds": getattr(args, "rounds", None),
        "loss_mode": getattr(args, "loss", None),
        "seq_model": getattr(args, "seq_model", None),
        "labeled_fraction": getattr(args, "labeled_fraction", None),
        "top_k": getattr(args, "top_k", None),
    }
    return build_dataclass(PipelineConfig, sections.get("pipeline", {}), overrides)


def cmd_train(args) -> int:
    sections = parse_config_file(args.config) if args.config else {}
    config = _pipeline_config(args, sections)
    dataset = load_dataset(args.data)
    encoder, bundle, trace = run_alternation(dataset, config)
    os.makedirs(args.out, exist_ok=True)
    modelio.save_model(encoder, os.path.join(args.out, "encoder.model"))
    modelio.save_model(bundle.model, os.path.join(args.out, "seqmodel.model"))
    if bundle.state_map is not None:
        with open(os.path.join(args.out, "state_map.json"), "w", encoding="utf-8") as fh:
            json.dump({str(k): v for k, v in sorted(bundle.state_map.items())}, fh, sort_keys=True)
    write_csv(
        os.path.join(args.out, "trace.csv"),
        ["round", "loss", "train_acc", "val_acc", "n_pseudo"],
        [(m.round, m.embed_loss, m.train_acc, m.val_acc, m.n_pseudo) for m in trace],
    )
    # final-round confusion matrix on the validation split
    from .data import split_leave_one_out
    from .embedding import encode_array as _enc

    masked = dataset
    if config.labeled_fraction < 1.0:
        from .data import mask_labels

        masked = mask_labels(dataset, config.labeled_fraction, config.seed)
    _, val = split_leave_one_out(masked, config.val_index)
    preds, truths = [], []
    for demo in val.demos:
        p, _ = predict_frames(bundle, _enc(encoder, demo.features))
        preds.append(p)
        truths.append(demo.true_labels())
    mat, _ = confusion_matrix(
        np.concatenate(preds), np.concatenate(truths), dataset.num_classes
    )
    write_csv(
        os.path.join(args.out, "confusion.csv"),
        [f"pred_{c}" for c in range(1, dataset.num_classes + 1)],
        [tuple(row) for row in mat],
    )
    report = [
        f"final_val_acc = {_fmt(trace[-1].val_acc)}",
        f"final_train_acc = {_fmt(trace[-1].train_acc)}",
        f"rounds_run = {len(trace)}",
        "confusion_matrix = confusion.csv",
        "",
        "[pipeline]",
        *echo_config(config),
    ]
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report) + "\n")
    print(f"val_acc = {_fmt(trace[-1].val_acc)}")
    print(f"out = {args.out}")
    return 0


def cmd_eval(args) -> int:
    sections = parse_config_file(args.config) if args.config else {}
    config = _pipeline_config(args, sections)
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    seeds = [config.seed + i for i in range(args.grid_seeds)]
    did_work = False
    if args.grid:
        cells = grid_eval(dataset, config, seeds)
        rows = []
        for row_name in GRID_ROWS:
            rows.append((row_name, *[cells[(row_name, c)] for c in GRID_COLS]))
        write_csv(os.path.join(args.out, "grid.csv"), ["embedding", *GRID_COLS], rows)
        print(f"grid = {os.path.join(args.out, 'grid.csv')}")
        did_work = True
    if args.sweep:
        fractions = [float(f) for f in args.sweep.split(",") if f.strip()]
        records = fraction_sweep(dataset, fractions, config, seeds)
        write_csv(
            os.path.join(args.out, "sweep.csv"),
            ["fraction", "triplet_rnn_ss", "svtcn_rnn", "seeds"],
            [(r["fraction"], r["triplet_rnn_ss"], r["svtcn_rnn"], r["seeds"]) for r in records],
        )
        print(f"sweep = {os.path.join(args.out, 'sweep.csv')}")
        did_work = True
    if not did_work:
        raise ConfigError("eval needs --grid and/or --sweep FRACTIONS")
    return 0


def cmd_imitate(args) -> int:
    sections = parse_config_file(args.config) if args.config else {}
    config = _pipeline_config(args, sections)
    imitate_raw = sections.get("imitate", {})
    knobs = dict(IMITATE_KEYS)
    for key, value in imitate_raw.items():
        if key not in IMITATE_KEYS:
            raise ConfigError(f"unknown key '{key}' for section [imitate]")
        knobs[key] = _coerce(value, IMITATE_KEYS[key])
    dataset = load_dataset(args.data)
    if any(d.poses is None for d in dataset.demos):
        raise MotionsegError("dataset lacks poses; imitate needs pose ground truth")
    os.makedirs(args.out, exist_ok=True)
    noise_sigmas = [0.0]
    if args.noise_sigma and args.noise_sigma > 0:
        noise_sigmas.append(args.noise_sigma)
    rows, encoder, decoders = pose_table(
        dataset, config, noise_sigmas=noise_sigmas, seed=config.seed,
        decoder_hidden=tuple(knobs["decoder_hidden"]), decoder_epochs=int(knobs["decoder_epochs"]),
        w_pos=float(knobs["w_pos"]),
    )
    write_csv(
        os.path.join(args.out, "pose_metrics.csv"),
        ["scope", "noise_sigma", "rmse_position_cm", "median_cosine_quat_loss"],
        [
            (r["scope"], r["noise_sigma"], r["rmse_position_cm"], r["median_cosine_quat_loss"])
            for r in rows
        ],
    )
    for r in rows:
        print(
            f"scope={r['scope']} noise={_fmt(r['noise_sigma'])} "
            f"rmse_position_cm={_fmt(r['rmse_position_cm'])} "
            f"median_cosine_quat_loss={_fmt(r['median_cosine_quat_loss'])}"
        )
    from .data import split_leave_one_out

    _, test = split_leave_one_out(dataset, config.val_index)
    traj = trajectory_rows(decoders["per_demonstrator"], encoder, test.demos)
    write_csv(
        os.path.join(args.out, "trajectories.csv"),
        ["demo_id", "frame", *[f"pose_{k}" for k in range(16)]],
        traj,
    )
    print(f"out = {args.out}")
    return 0


def cmd_embed_dump(args) -> int:
    dataset = load_dataset(args.data)
    encoder = modelio.load_model(args.encoder)
    os.makedirs(args.out, exist_ok=True)
    dim = encoder.dim
    rows = []
    embeddings = []
    labels = []
    for demo in dataset.demos:
        E = encode_array(encoder, demo.features)
        for t in range(demo.num_frames):
            lab = int(demo.labels[t]) if demo.labels is not None else -1
            rows.append((demo.demo_id, t, lab, *E[t].tolist()))
            embeddings.append(Embedding(E[t], demo_id=demo.demo_id, frame_index=t))
            labels.append(lab)
    write_csv(
        os.path.join(args.out, "embeddings.csv"),
        ["demo_id", "frame_index", "label", *[f"e_{k}" for k in range(dim)]],
        rows,
    )
    coords = pca2d(np.stack([e.values for e in embeddings]))
    write_csv(
        os.path.join(args.out, "pca2d.csv"),
        ["demo_id", "frame_index", "label", "x", "y"],
        [
            (e.demo_id, e.frame_index, labels[i], float(coords[i, 0]), float(coords[i, 1]))
            for i, e in enumerate(embeddings)
        ],
    )
    print(f"embeddings = {len(rows)}")
    print(f"out = {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _defaults_epilog() -> str:
    lines = ["config defaults (override per key in the config file or via flags):"]
    for section, cls in CONFIG_SECTIONS.items():
        pairs = ", ".join(
            f"{f.name}={f.default}"
            for f in dataclasses.fields(cls)
            if f.default is not dataclasses.MISSING
        )
        lines.append(f"  [{section}] {pairs}")
    lines.append("  [imitate] " + ", ".join(f"{k}={v}" for k, v in IMITATE_KEYS.items()))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionseg",
        description="Semi-supervised action segmentation and pose imitation "
        "on per-frame feature vectors.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="sectioned key-value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if data:
            p.add_argument("--data", required=True, help="dataset manifest path")

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p, data=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the semi-supervised alternation")
    common(p)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--loss", choices=("triplet", "npairs", "triplet_tcn", "svtcn"), default=None)
    p.add_argument("--seq-model", dest="seq_model",
                   choices=("knn", "hmm", "hsmm", "crf", "rnn"), default=None)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="emit the embedding-by-model grid and/or fraction sweep")
    common(p)
    p.add_argument("--grid", action="store_true", help="run the 6x5 accuracy grid")
    p.add_argument("--sweep", default=None, help="comma list of labeled fractions")
    p.add_argument("--grid-seeds", dest="grid_seeds", type=int, default=1,
                   help="number of seeds to average")
    p.add_argument("--loss", choices=("triplet", "npairs", "triplet_tcn", "svtcn"), default=None)
    p.add_argument("--seq-model", dest="seq_model",
                   choices=("knn", "hmm", "hsmm", "crf", "rnn"), default=None)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("imitate", help="train and evaluate pose decoders")
    common(p)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--loss", choices=("triplet", "npairs", "triplet_tcn", "svtcn"), default=None)
    p.add_argument("--seq-model", dest="seq_model",
                   choices=("knn", "hmm", "hsmm", "crf", "rnn"), default=None)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.set_defaults(func=cmd_imitate)

    p = sub.add_parser("embed-dump", help="dump embeddings and a 2-D projection")
    common(p)
    p.add_argument("--encoder", required=True, help="path to a saved encoder model")
    p.set_defaults(func=cmd_embed_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MotionsegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
