"""Command-line entry point: ``deepframe {synth,train,predict,encode,decode,eval,rerun}``.

Every run writes a JSON manifest next to its main output recording the
resolved settings, seed, input and output paths, tool version and weights
hash, together with the argument list so the run can be repeated.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("deepframe")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    config: dict
    seed: int | None
    inputs: list
    outputs: list
    version: str = __version__
    weights_hash: str | None = None
    results: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path


def manifest_path(output) -> Path:
    """Manifest location for a file output: the file name plus ``.manifest.json``."""
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def _weights_hash(path) -> str | None:
    if path is None:
        return None
    from .codec.blocks import DeepModel

    return DeepModel.coerce(path).hash.hex()


def _load_frames(path, size, frames=None):
    from .video_io import read_yuv

    seq = read_yuv(path, *size)
    if not seq:
        raise ValueError(f"{path}: no frames")
    return seq[:frames] if frames else seq


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, argv):
    from .video_io import SyntheticSpec, generate_synthetic, load_synthetic_spec, write_motion_sidecar, write_yuv

    spec = load_synthetic_spec(args.config) if args.config else SyntheticSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.size:
        spec.width, spec.height = args.size
    if args.frames:
        spec.frames = args.frames
    spec.validate()
    frames, motion = generate_synthetic(spec)
    out = Path(args.out)
    write_yuv(out, frames)
    sidecar = out.with_suffix(".motion.csv")
    write_motion_sidecar(sidecar, motion)
    RunManifest("synth", argv, {"spec": spec.to_text()}, spec.seed, [args.config] if args.config else [],
                [str(out), str(sidecar)]).write(manifest_path(out))
    print(f"wrote {len(frames)} frames {spec.width}x{spec.height} to {out}")


def cmd_train(args, argv):
    from .kvconfig import read_kv
    from .trainer import TrainConfig, load_dataset, train

    values = read_kv(args.config)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.ablation:
        values["ablation"] = args.ablation
    cfg = TrainConfig.from_kv(values)
    train_set, val_set = load_dataset(values, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = cfg.ablation or "full"
    log_path = out / f"train_{tag}.csv"
    weights = out / "weights.dfpw"
    result = train(cfg, train_set, val_set, log_path=log_path)
    result.model.save(weights)
    final = result.final_psnr
    RunManifest(
        "train", argv, dict(values, ablation_id=tag), cfg.seed, [args.config], [str(weights), str(log_path)],
        weights_hash=_weights_hash(weights),
        results={"final_val_psnr": final, "train_triplets": len(train_set), "val_triplets": len(val_set)},
    ).write(out / "manifest.json")
    print(f"[{tag}] {cfg.iterations} iterations, final validation PSNR {final:.3f} dB, weights {weights}")


def _parse_indices(text):
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"--indices expects t1,t2,t integers, got {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"--indices expects three values t1,t2,t, got {text!r}")
    return parts


def cmd_predict(args, argv):
    from .analysis import psnr
    from .predictor import FramePredictor, predict_frame, temporal_index_constants
    from .video_io import write_yuv

    t1, t2, t = _parse_indices(args.indices)
    temporal_index_constants(t1, t2, t)
    ref1 = _load_frames(args.ref1, args.size)[0]
    ref2 = _load_frames(args.ref2, args.size)[0]
    model = FramePredictor.load(args.weights)
    pred = predict_frame(ref1, ref2, t1, t2, t, model)
    out = Path(args.out)
    write_yuv(out, [pred])
    results = {}
    if args.truth:
        truth = _load_frames(args.truth, args.size)[0]
        results["psnr_y"] = psnr(truth, pred)
        print(f"PSNR-Y {results['psnr_y']:.4f} dB")
    RunManifest("predict", argv, {"indices": [t1, t2, t], "size": list(args.size)}, None,
                [args.ref1, args.ref2, args.weights] + ([args.truth] if args.truth else []), [str(out)],
                weights_hash=_weights_hash(args.weights), results=results).write(manifest_path(out))
    print(f"wrote predicted frame {pred.width}x{pred.height} to {out}")


def cmd_encode(args, argv):
    from .analysis import psnr_yuv
    from .codec import CodingConfig, encode
    from .video_io import write_yuv

    frames = _load_frames(args.input, args.size, args.frames)
    dfp = args.dfp == "on"
    if dfp and not args.weights:
        raise UsageError("--dfp on requires --weights")
    cfg = CodingConfig(profile=args.profile, qp=args.qp, dfp=dfp, threads=args.threads, search=args.search)
    result = encode(frames, cfg, args.weights if dfp else None)
    out = Path(args.out)
    out.write_bytes(result.stream)
    outputs = [str(out)]
    if args.recon:
        write_yuv(args.recon, result.recon)
        outputs.append(args.recon)
    q = np.array([psnr_yuv(a, b) for a, b in zip(frames, result.recon)])
    q = np.where(np.isfinite(q), q, np.nan)
    bits = result.category_bits()
    results = {
        "bytes": len(result.stream),
        "payload_bits": result.payload_bits,
        "category_bits": bits,
        "psnr_yuv": [float(v) for v in np.nanmean(q, axis=0)] if np.isfinite(q).any() else None,
        "encode_seconds": result.elapsed,
        "modes": [f.modes.tolist() for f in result.frames],
        "block": cfg.block,
    }
    RunManifest("encode", argv, asdict(cfg), None, [args.input] + ([args.weights] if dfp else []), outputs,
                weights_hash=result.header.weights_hash.hex() if dfp else None, results=results,
                ).write(manifest_path(out))
    print(f"{args.profile} QP{args.qp} DFP {args.dfp}: {len(result.stream)} bytes, {len(frames)} frames, "
          f"{result.elapsed:.2f} s")
    print("bits " + " ".join(f"{k}={v}" for k, v in bits.items() if v))


def cmd_decode(args, argv):
    from .codec import decode
    from .video_io import write_yuv

    result = decode(Path(args.input).read_bytes(), args.weights)
    out = Path(args.out)
    write_yuv(out, result.frames)
    RunManifest("decode", argv, {}, None, [args.input] + ([args.weights] if args.weights else []), [str(out)],
                weights_hash=result.header.weights_hash.hex(),
                results={"frames": len(result.frames), "decode_seconds": result.elapsed,
                         "category_bits": result.category_bits()}).write(manifest_path(out))
    print(f"decoded {len(result.frames)} frames {result.header.width}x{result.header.height} to {out}")


def _eval_side(streams, source, weights):
    from .analysis import psnr_yuv
    from .codec import decode

    points, bits, modes, dec_time, enc_time = [], {}, {}, 0.0, 0.0
    for path in streams:
        result = decode(Path(path).read_bytes(), weights)
        n = len(result.frames)
        if len(source) < n:
            raise ValueError(f"{path}: stream has {n} frames but the source only {len(source)}")
        q = np.array([psnr_yuv(a, b) for a, b in zip(source[:n], result.frames)])
        q = np.where(np.isfinite(q), q, np.inf)
        qp = result.header.qp
        total = sum(result.category_bits().values())
        points.append((qp, total, q.mean(axis=0)))
        for k, v in result.category_bits().items():
            bits[k] = bits.get(k, 0) + v
        modes[qp] = ([s.modes for s in result.stats], [result.header.block] * n)
        dec_time += result.elapsed
        man = manifest_path(path)
        if man.exists():
            enc_time += json.loads(man.read_text()).get("results", {}).get("encode_seconds", 0.0)
    points.sort()
    return points, bits, modes, dec_time, enc_time


def cmd_eval(args, argv):
    from . import analysis as an
    from .video_io import read_yuv

    if len(args.anchor) != len(args.test):
        raise UsageError("--anchor and --test need the same number of streams")
    source = read_yuv(args.source, *args.size)
    a_pts, a_bits, _, a_dec, a_enc = _eval_side(args.anchor, source, None)
    t_pts, t_bits, t_modes, t_dec, t_enc = _eval_side(args.test, source, args.weights)
    bd = [an.bd_rate([(b, q[c]) for _, b, q in a_pts], [(b, q[c]) for _, b, q in t_pts]) for c in range(3)]
    bd_rows = an.bd_rows([(args.seq_class, args.name, args.profile or "", *bd)])
    bits_rows = an.bits_rows([(args.name, an.BitReport(a_bits, t_bits))])
    per_qp = {qp: an.mode_area(*t_modes[qp]) for qp in sorted(t_modes)}
    area_rows = an.area_rows(per_qp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bd_rate.csv").write_text(an.to_csv(an.BD_HEADER, bd_rows))
    (out / "bits.csv").write_text(an.to_csv(an.BITS_HEADER, bits_rows))
    (out / "mode_area.csv").write_text(an.to_csv(an.AREA_HEADER, area_rows))
    text = [an.format_table(an.BD_HEADER, bd_rows), an.format_table(an.BITS_HEADER, bits_rows)]
    timing = []
    if a_dec > 0:
        timing.append(("ΔT_Dec", an.timing_ratio(t_dec, a_dec)))
    if a_enc > 0:
        timing.insert(0, ("ΔT_Enc", an.timing_ratio(t_enc, a_enc)))
    if timing:
        text.append(an.format_table(("timing", "percent"), timing))
    report = "\n".join(text)
    (out / "report.txt").write_text(report)
    RunManifest("eval", argv, {"size": list(args.size), "name": args.name}, None,
                list(args.anchor) + list(args.test) + [args.source], [str(out)],
                weights_hash=_weights_hash(args.weights),
                results={"bd_rate_yuv": bd, "timing": dict(timing)}).write(out / "manifest.json")
    print(report, end="")


def cmd_rerun(args, argv):
    data = json.loads(Path(args.manifest).read_text())
    return main(list(data["argv"]))


# ---------------------------------------------------------------------------
# argument parsing


def _size(text):
    from .video_io import parse_size

    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepframe", description="Deep frame prediction for block-based video coding.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic YUV420 test clip")
    s.add_argument("--config", help="key=value synthetic clip description")
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=_size, help="WxH")
    s.add_argument("--frames", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train the frame predictor")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--ablation", choices=("no_temporal_index", "no_b1", "no_b2_b10_skips", "no_geometric_loss"))
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("predict", help="predict one frame from two references")
    s.add_argument("--ref1", required=True)
    s.add_argument("--ref2", required=True)
    s.add_argument("--indices", required=True, help="t1,t2,t picture order counts")
    s.add_argument("--weights", required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--truth", help="ground-truth frame for a PSNR report")
    s.add_argument("--out", required=True)

    s = sub.add_parser("encode", help="encode a YUV420 clip")
    s.add_argument("--input", required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--frames", type=int)
    s.add_argument("--profile", choices=("LP", "LD", "RA"), default="LP")
    s.add_argument("--qp", type=int, default=32)
    s.add_argument("--dfp", choices=("on", "off"), default="off")
    s.add_argument("--weights")
    s.add_argument("--search", type=int, default=24)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--recon", help="write the encoder reconstruction here")
    s.add_argument("--out", required=True)

    s = sub.add_parser("decode", help="decode a stream to YUV420")
    s.add_argument("--input", required=True)
    s.add_argument("--weights")
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="compare anchor and test streams against the source")
    s.add_argument("--anchor", nargs="+", required=True)
    s.add_argument("--test", nargs="+", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--weights")
    s.add_argument("--profile")
    s.add_argument("--name", default="clip")
    s.add_argument("--seq-class", default="synthetic")
    s.add_argument("--out", required=True, help="report directory")

    s = sub.add_parser("rerun", help="repeat a run from its manifest")
    s.add_argument("manifest")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "rerun": cmd_rerun,
}


def _data_errors():
    from .codec import DecodeError, WeightsMismatch
    from .kvconfig import ConfigError
    from .trainer import DatasetExhausted, TrainingDiverged

    return (DecodeError, WeightsMismatch, ConfigError, DatasetExhausted, TrainingDiverged, ValueError, OSError)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("DFC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        t0 = time.perf_counter()
        rc = COMMANDS[args.command](args, argv)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
        return rc or EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except _data_errors() as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
