"""Command-line entry point: ``hnrsim {gencode,sweep,train,payload,inspect}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .. import fec
from ..hnr.model import param_count_formula
from ..hnr.receiver import FingerprintError
from ..phy import constellation
from . import payload as pl
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .sweep import format_rows, run_sweep, write_atomic
from .training import run_all, run_stage


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="default",
                   help="config file, or a name looked up in the config directory")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output path override")
    p.add_argument("--scale", type=float, help="training data budget multiplier")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hnrsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gencode", help="build a regular LDPC code and write it as alist")
    _common(p)
    p.add_argument("--n", type=int, help="code length (default: the config's code)")
    p.add_argument("--dv", type=int, default=3)
    p.add_argument("--dc", type=int, default=6)
    p.add_argument("--code-seed", type=int, default=0)

    p = sub.add_parser("sweep", help="Monte Carlo BER/BLER versus SNR, written as CSV")
    _common(p)
    p.add_argument("--receiver", choices=("baseline", "perfect_csi", "hnr"))
    p.add_argument("--snr", type=float, nargs="+", help="SNR points in dB")
    p.add_argument("--frames", type=int)
    p.add_argument("--checkpoint", help="H-NR checkpoint for --receiver hnr")
    p.add_argument("--noiseless", action="store_true")

    p = sub.add_parser("train", help="train H-NR stage 1, 2, 3 or all three")
    _common(p)
    p.add_argument("stage", choices=("1", "2", "3", "all"))
    p.add_argument("--checkpoint", help="starting checkpoint for stage 2 or 3")
    p.add_argument("--steps", type=int, help="override the step count of a single stage")

    p = sub.add_parser("payload", help="send a file (or a synthetic payload) over the link")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("file", nargs="?", help="payload file")
    src.add_argument("--synthetic", choices=("image", "audio"))
    p.add_argument("--image-shape", type=int, nargs=3, metavar=("W", "H", "C"),
                   help="treat the payload as a W x H x C 8-bit image")
    p.add_argument("--receiver", choices=("baseline", "perfect_csi", "hnr"))
    p.add_argument("--snr", type=float)
    p.add_argument("--checkpoint")
    p.add_argument("--noiseless", action="store_true")

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="also verify the fingerprint against this config")
    return ap


def _config(args):
    cfg = load_config(args.config)
    kw = {"seed": args.seed, "scale": args.scale}
    for name in ("receiver", "frames", "checkpoint"):
        kw[name] = getattr(args, name, None)
    if getattr(args, "noiseless", False):
        kw["noiseless"] = True
    if getattr(args, "snr", None) is not None:
        snr = args.snr
        kw["snr_db"] = tuple(snr) if isinstance(snr, list) else (snr,)
    return cfg.override(**kw)


def cmd_gencode(args) -> int:
    cfg = _config(args)
    H = fec.build_regular_ldpc(args.n, args.dv, args.dc, args.code_seed) if args.n else cfg.pcm()
    if H is None:
        raise ConfigError("the config has no channel code (code = none)")
    text = fec.dump_alist(H)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else cfg.out_path(f"sweep_{cfg.receiver}.csv")
    rows = run_sweep(cfg, out)
    sys.stdout.write(format_rows(rows))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.out:
        cfg = cfg.override(out=args.out)
    if args.stage == "all":
        ckpt = run_all(cfg)
    else:
        start = load_checkpoint(args.checkpoint) if args.checkpoint else None
        ckpt = run_stage(cfg, int(args.stage), start, args.steps)
    print(json.dumps({"stage": ckpt.metadata["stage"], "out": cfg.out,
                      "parameters": ckpt.num_parameters()}))
    return 0


def cmd_payload(args) -> int:
    cfg = _config(args)
    shape = tuple(args.image_shape) if args.image_shape else None
    if args.synthetic == "image":
        data, shape = pl.synthetic_image()
    elif args.synthetic == "audio":
        data = pl.audio_tone()
    else:
        data = Path(args.file).read_bytes()
    out = Path(args.out) if args.out else cfg.out_path("payload_report.json")
    l1 = out.with_suffix(".l1.pgm") if shape is not None else None
    rep = pl.run_payload(data, cfg, image_shape=shape, l1_path=l1)
    text = json.dumps(asdict(rep), indent=2, sort_keys=True) + "\n"
    write_atomic(out, text)
    sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    meta = ckpt.metadata
    counts = {"transformer": sum(a.size for k, a in ckpt.params.items() if k.startswith("tf.")),
              "gnn": sum(a.size for k, a in ckpt.params.items() if k.startswith("gnn."))}
    counts["total"] = counts["transformer"] + counts["gnn"]
    summary = {"fingerprint": ckpt.fingerprint, "stage": meta.get("stage"),
               "arrays": len(ckpt.params), "parameters": counts,
               "optimizer": meta.get("optimizer", {}).get("kind")}
    if "hnr" in meta:
        from ..hnr.model import HnrConfig
        hc = HnrConfig(**meta["hnr"])
        bps = constellation(meta["constellation"]).bits_per_symbol
        summary["formula"] = param_count_formula(hc, meta["num_rx"], bps)
        summary["formula_matches"] = summary["formula"] == counts
    if args.config:
        from .training import make_setup
        from ..hnr.receiver import layout_fingerprint
        cfg = load_config(args.config)
        ckpt.check_fingerprint(layout_fingerprint(cfg.hnr, make_setup(cfg).layout,
                                                  cfg.channel.num_rx))
        summary["fingerprint_ok"] = True
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


COMMANDS = {"gencode": cmd_gencode, "sweep": cmd_sweep, "train": cmd_train,
            "payload": cmd_payload, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (FingerprintError, CheckpointError, ConfigError, ValueError, OSError,
            FloatingPointError) as err:
        kinds = {FingerprintError: "fingerprint", ConfigError: "config"}
        kind = next((v for k, v in kinds.items() if isinstance(err, k)), type(err).__name__)
        print(json.dumps({"error": kind, "message": str(err)}), file=sys.stderr)
        return 1

if __name__ == "__main__":
    sys.exit(main())
