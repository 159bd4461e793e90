"""Command-line entry point.

Exit codes: 0 success, 1 I/O, 2 parse/validation, 3 model/state. Failures
print a JSON object to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .curves import fake_curve, render_curve, render_samples
from .errors import ParavoxError
from .evaluation import eval_run, write_report


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file overriding default settings")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paravox", description="Controllable voice conversion toolkit")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="speed and pitch control followed by a synthesis engine")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--speed-curve", help="preset:<name> or curve file (default identity)")
    p.add_argument("--pitch-curve", help="preset:<name> or curve file (default identity)")
    p.add_argument("--engine", default="plpc", choices=["plpc"])
    p.add_argument("--out", required=True, help="output WAV; the sidecar goes next to it as .json")
    _add_common(p)

    p = sub.add_parser("analyze", help="write the pitch-code / unit / speaker bundle")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vq-model")
    p.add_argument("--unit-codebook")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train the VQ pitch model or the unit codebook")
    p.add_argument("kind", choices=["vq", "units"])
    p.add_argument("--corpus", required=True, help="directory of WAV files")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch/iteration CSV (default <out>.log.csv)")
    _add_common(p)

    p = sub.add_parser("eval", help="score a manifest of converted utterances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("curves", help="render presets or make fake curves")
    cs = p.add_subparsers(dest="action", required=True)
    r = cs.add_parser("render")
    r.add_argument("--curve", required=True)
    r.add_argument("--samples", type=int, default=101)
    r.add_argument("--out")
    f = cs.add_parser("fake")
    f.add_argument("--curve", required=True)
    f.add_argument("--mode", required=True, choices=["flip", "shift"])
    f.add_argument("--amount", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--out")

    p = sub.add_parser("baseline", help="run the P-LPC baseline converter")
    bs = p.add_subparsers(dest="engine", required=True)
    b = bs.add_parser("plpc")
    b.add_argument("--source", required=True)
    b.add_argument("--target", required=True)
    b.add_argument("--speed-curve")
    b.add_argument("--pitch-curve")
    b.add_argument("--out", required=True)
    _add_common(b)
    return ap


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _run(args) -> None:
    config = pipeline.load_config(getattr(args, "config", None))
    cmd = args.command
    if cmd == "convert":
        pipeline.convert(args.source, args.target, pipeline.load_curve(args.speed_curve),
                         pipeline.load_curve(args.pitch_curve), args.out, config, args.engine)
    elif cmd == "baseline":
        pipeline.baseline(args.source, args.target, args.out, config,
                          pipeline.load_curve(args.speed_curve), pipeline.load_curve(args.pitch_curve))
    elif cmd == "analyze":
        config = pipeline.with_overrides(config, vq_model=args.vq_model,
                                         unit_codebook=args.unit_codebook)
        pipeline.analyze(args.source, args.target, args.out, config)
    elif cmd == "train":
        log_path = args.log or str(args.out) + ".log.csv"
        train = pipeline.train_vq if args.kind == "vq" else pipeline.train_units
        train(args.corpus, args.out, log_path, config)
    elif cmd == "eval":
        write_report(eval_run(args.manifest), args.out_dir)
    elif cmd == "curves":
        curve = pipeline.load_curve(args.curve)
        if args.action == "render":
            rows = ["t,ratio"] + [f"{t:.6f},{v:.6f}" for t, v in render_samples(curve, args.samples)]
            _emit("\n".join(rows) + "\n", args.out)
        else:
            seed = config.seed if args.seed is None else args.seed
            fake = fake_curve(curve, args.mode, args.amount, seed)
            note = f"fake curve: mode={args.mode} source={args.curve}"
            if args.mode == "shift":
                note += f" amount={args.amount if args.amount is not None else 'seeded'} seed={seed}"
            _emit(render_curve(fake, comments=[note]), args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ParavoxError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
