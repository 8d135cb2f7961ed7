"""Command-line entry point: ``skelact <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, config_from_dict, load_config
from .errors import ConfigError, DataError, SkelactError
from .ingest import (load_ntu_file, load_recordings, ntu_cross_subject_train_ids,
                     ntu_to_recording)
from .model import load_checkpoint, model_info, save_checkpoint
from .skeleton import COMMON, default_joint_map, load_class_table
from .stream import JsonLinesSink, TcpSink, replay_source, run_stream, tcp_source
from .synth import SynthConfig, domain_shift, generate, write_dataset
from .train import (Pipeline, Toggles, ablation_csv, ablation_table, evaluate, run_ablation,
                    train)

log = logging.getLogger("skelact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed,
                                  train=dataclasses.replace(cfg.train, seed=args.seed))
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))
    overrides = {k: getattr(args, k) for k in ("window_seconds", "hop_seconds")
                 if getattr(args, k, None) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, window=dataclasses.replace(cfg.window, **overrides))
    return cfg


def _pipeline(cfg: PipelineConfig) -> Pipeline:
    return Pipeline(cfg.normalization, cfg.window, cfg.load_joint_map())


def _load_data(root, class_table, subjects=None):
    """SKELREC-JSONL files and NTU ``.skeleton`` files under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data directory {root} does not exist")
    seqs = load_recordings(root, class_table)
    by_src = {e.source_dataset_id: e.class_id for e in class_table.entries}
    for path in sorted(root.rglob("*.skeleton")):
        seq = load_ntu_file(path)
        if seq.label + 1 in by_src:
            seqs.append(seq.replace(label=by_src[seq.label + 1]))
    if subjects is not None:
        seqs = [s for s in seqs if _subject_int(s.subject) in subjects]
    if not seqs:
        raise DataError(f"no sequences found under {root}")
    return seqs


def _subject_int(subject):
    try:
        return int(str(subject).lstrip("P"))
    except (TypeError, ValueError):
        return None


def _toggles(args, default=Toggles(normalization=True)) -> Toggles:
    return Toggles(noise=default.noise if args.noise is None else args.noise,
                   augmentation=default.augmentation if args.augmentation is None else args.augmentation,
                   normalization=default.normalization if args.normalization is None else args.normalization)


def cmd_convert(args):
    table = load_class_table(args.class_table) if args.class_table else None
    out = Path(args.out)
    inputs = [Path(p) for p in args.inputs]
    if len(inputs) > 1 or out.suffix != ".jsonl":
        out.mkdir(parents=True, exist_ok=True)
    for p in inputs:
        target = out if out.suffix == ".jsonl" and len(inputs) == 1 else out / (p.stem + ".jsonl")
        ntu_to_recording(p, target, table)
        print(target)
    return EXIT_OK


def cmd_synth(args):
    table = load_class_table("synth_classes")
    cfg = SynthConfig(samples_per_class=args.samples_per_class, seed=args.seed,
                      duration_seconds=args.duration)
    seqs = generate(cfg, table)
    if args.scale != 1.0 or args.yaw != 0.0:
        seqs = domain_shift(seqs, (args.scale, args.yaw))
    paths = write_dataset(seqs, args.out, table)
    print(f"wrote {len(paths)} recordings to {args.out}")
    return EXIT_OK


def _meta(cfg, toggles, table, jmap_target):
    return {"class_names": table.names, "toggles": dataclasses.asdict(toggles),
            "joint_set": jmap_target, "config": cfg.to_dict()}


def cmd_train(args):
    cfg = _config(args)
    table = cfg.load_class_table()
    subjects = ntu_cross_subject_train_ids() if args.cross_subject else None
    seqs = _load_data(args.data, table, subjects)
    toggles = _toggles(args)
    pipe = _pipeline(cfg)
    target = (pipe.joint_map.target if pipe.joint_map else COMMON)
    model_cfg = cfg.model.build(3 * target.joint_count, len(table))

    def progress(epoch, hist):
        log.info("epoch %d loss %.4f train acc %.3f", epoch, hist.loss[-1], hist.train_accuracy[-1])

    params, hist = train(model_cfg, cfg.train, toggles, seqs, pipe, cfg.augmentation,
                         progress=progress)
    save_checkpoint(params, args.out, _meta(cfg, toggles, table, target.name))
    print(json.dumps({"checkpoint": str(args.out), "epochs": hist.epochs,
                      "final_loss": hist.loss[-1] if hist.loss else None,
                      "train_accuracy": hist.train_accuracy[-1] if hist.train_accuracy else None}))
    return EXIT_OK


def _from_meta(meta, args):
    """Toggles and config a checkpoint was trained with; CLI window overrides
    still apply."""
    toggles = Toggles(**meta.get("toggles", {"normalization": True}))
    cfg = config_from_dict(meta["config"]) if "config" in meta else _config(args)
    overrides = {k: getattr(args, k) for k in ("window_seconds", "hop_seconds")
                 if getattr(args, k, None) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, window=dataclasses.replace(cfg.window, **overrides))
    return toggles, cfg


def cmd_eval(args):
    params, meta = load_checkpoint(args.checkpoint)
    toggles, cfg = _from_meta(meta, args)
    table = cfg.load_class_table()
    seqs = _load_data(args.data, table)
    report = evaluate(params, seqs, toggles, _pipeline(cfg))
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(f"accuracy {report.accuracy:.4f} ({np.trace(report.confusion)}/{report.total})")
        print("confusion (rows = true class):")
        for name, row in zip(table.names, report.confusion):
            print(f"  {name:<28} {' '.join(f'{v:3d}' for v in row)}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    table = cfg.load_class_table()
    train_seqs = _load_data(args.train, table)
    shifted = _load_data(args.test_shifted, table)
    if args.test:
        in_domain = _load_data(args.test, table)
    else:
        in_domain = train_seqs[4::5]
        train_seqs = [s for i, s in enumerate(train_seqs) if i % 5 != 4]
    pipe = _pipeline(cfg)
    target = pipe.joint_map.target if pipe.joint_map else COMMON
    model_cfg = cfg.model.build(3 * target.joint_count, len(table))
    rows = run_ablation(model_cfg, cfg.train, train_seqs, in_domain, shifted, pipe,
                        cfg.augmentation,
                        progress=lambda r: log.info("%s: %.3f / %.3f", r.label,
                                                    r.acc_in_domain, r.acc_shifted))
    Path(args.out).write_text(ablation_csv(rows))
    print(ablation_table(rows))
    return EXIT_OK


def cmd_stream(args):
    params, meta = load_checkpoint(args.checkpoint)
    toggles, cfg = _from_meta(meta, args)
    if args.input:
        source = replay_source(args.input, args.speed)
        header = json.loads(Path(args.input).read_text().split("\n", 1)[0])
        source_set = header["joint_set"]
    else:
        host, _, port = args.tcp.rpartition(":")
        source = tcp_source(host or "127.0.0.1", int(port))
        source_set = args.joint_set
    jmap = cfg.load_joint_map() or default_joint_map(source_set)
    norm = dataclasses.replace(cfg.normalization, enabled=toggles.normalization)
    sink = TcpSink(args.listen) if args.listen is not None else JsonLinesSink(sys.stdout)
    try:
        stats = run_stream(source, jmap, norm, cfg.window, params, sink,
                           class_names=meta.get("class_names"),
                           lossless=args.speed == 0 and args.input is not None)
    finally:
        if isinstance(sink, TcpSink):
            sink.close()
    print(json.dumps({k: dataclasses.asdict(v) for k, v in stats.items()}), file=sys.stderr)
    return EXIT_OK


def cmd_model_info(args):
    cfg = _config(args)
    table = cfg.load_class_table()
    classes = args.classes or len(table)
    info = model_info(cfg.model.build(args.input_channels, classes))
    if args.json:
        print(json.dumps(info))
    else:
        print(f"parameters: {info['parameters']:,}")
        for name, shape in info["layers"].items():
            print(f"  {name:<24} {shape}")
    return EXIT_OK


def _bool_flag(p, name, help_):
    p.add_argument(f"--{name}", dest=name, action="store_true", default=None, help=help_)
    p.add_argument(f"--no-{name}", dest=name, action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skelact", description="Skeleton-based action recognition pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--config", help="pipeline config JSON file")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config and exit")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("convert", help="transcode NTU .skeleton files to SKELREC-JSONL")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output .jsonl file or directory")
    p.add_argument("--class-table", help="label the output via this class table")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic SKELREC-JSONL dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="domain shift scale multiplier")
    p.add_argument("--yaw", type=float, default=0.0, help="domain shift yaw offset (radians)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", "--checkpoint", dest="out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--cross-subject", action="store_true",
                   help="keep only NTU cross-subject training performers")
    _bool_flag(p, "noise", "train with Gaussian joint noise")
    _bool_flag(p, "augmentation", "train with shift/crop augmentation")
    _bool_flag(p, "normalization", "normalize sequences (default on)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the 8-configuration ablation")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test-shifted", required=True)
    p.add_argument("--test", help="in-domain test set (default: hold out every 5th training file)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stream", help="run the live pipeline on a replay or TCP feed")
    common(p, seed=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="SKELREC-JSONL recording to replay")
    src.add_argument("--tcp", help="HOST:PORT streaming SKELREC-JSONL")
    p.add_argument("--joint-set", default="TRACKER19", help="joint set of a TCP feed")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--speed", type=float, default=1.0, help="replay speed; 0 = as fast as possible")
    p.add_argument("--listen", type=int, help="serve label messages on this TCP port")
    p.add_argument("--window-seconds", type=float)
    p.add_argument("--hop-seconds", type=float)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("model-info", help="print parameter count and layer shapes")
    common(p, seed=False)
    p.add_argument("--input-channels", type=int, default=3 * COMMON.joint_count)
    p.add_argument("--classes", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_model_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "print_config", False):
            print(_config(args).to_json())
            return EXIT_OK
        return args.func(args)
    except (DataError, ConfigError) as e:
        print(f"skelact: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SkelactError, RuntimeError, OSError) as e:
        print(f"skelact: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
