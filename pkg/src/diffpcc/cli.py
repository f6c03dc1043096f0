"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 model mismatch,
4 corrupt or unreadable data.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import codec, geometry, metrics, training
from .diffnet.checkpoint import load_checkpoint
from .errors import (ConfigurationError, CorruptStreamError, DegenerateInputError, EmptyCloudError,
                     ParseError, WrongModelError)

EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_DATA = 4

RD_FIELDS = ("C", "N", "P", "bpp", "chamfer", "emd", "psnr_db", "samples")
RD_HELP = f"""\
rd-curve CSV columns: {', '.join(RD_FIELDS)}
  one row per model, metrics averaged over the corpus, rows sorted by bpp.
  bpp = C*log2(N)/P (header and padding excluded); chamfer uses
  {metrics.CHAMFER_CONVENTION}; emd is the mean unsquared matching distance;
  psnr_db is point-to-plane PSNR with peak = longest bounding-box edge.
"""


class UsageError(Exception):
    pass


def _cloud_files(directory):
    manifest = os.path.join(directory, "manifest.csv")
    if os.path.exists(manifest):
        with open(manifest, newline="") as fh:
            return [os.path.join(directory, row["file"]) for row in csv.DictReader(fh)]
    return sorted(
        os.path.join(directory, f) for f in os.listdir(directory)
        if f.lower().endswith((".xyz", ".ply"))
    )


def cmd_gen_shapes(args):
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    unknown = [c for c in classes if c not in geometry.SHAPE_KINDS]
    if unknown or not classes:
        raise UsageError(f"unknown shape class(es): {', '.join(unknown) or '(none given)'}; "
                         f"choose from {', '.join(geometry.SHAPE_KINDS)}")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for kind in classes:
        for j in range(args.per_class):
            seed = training.shape_seed(args.seed, geometry.SHAPE_KINDS.index(kind), j)
            pc = training.make_shape(kind, args.points, args.jitter, args.stretch, seed)
            name = f"{kind}_{j:04d}.xyz"
            geometry.save_xyz(pc, os.path.join(args.out, name))
            rows.append({"file": name, "class": kind, "instance": j, "seed": seed, "points": args.points})
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["file", "class", "instance", "seed", "points"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} clouds to {args.out}")
    return 0


def cmd_train(args):
    cfg = training.load_config(args.config)
    log_path = args.log or f"{args.out}.log.csv"
    result = training.train(cfg, checkpoint_path=args.out, log_path=log_path, resume=args.resume)
    last = result.log[-1] if result.log else None
    msg = f"trained to step {result.params.step}; checkpoint {args.out}; log {log_path}"
    if last:
        msg += f"; final loss {last['loss_total']:.4f}"
    print(msg)
    return 0


def _load_model(path):
    try:
        params, _ = load_checkpoint(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from None
    return params


def cmd_encode(args):
    params = _load_model(args.model)
    pc = geometry.load_point_cloud(args.input)
    if args.points:
        pc = geometry.sample_points(pc, args.points, args.seed)
    stream = codec.compress(pc, params)
    tmp = f"{args.out}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(stream.to_bytes())
    os.replace(tmp, args.out)
    print(f"P={stream.P} C={stream.C} N={stream.N} bpp={codec.bpp(stream):.9g} "
          f"wire_bpp={codec.wire_bpp(stream):.9g}")
    return 0


def _read_stream(path):
    with open(path, "rb") as fh:
        return codec.Bitstream.from_bytes(fh.read())


def cmd_decode(args):
    params = _load_model(args.model)
    stream = _read_stream(args.input)
    pc = codec.decompress(stream, params, seed=args.seed)
    geometry.save_xyz(pc, args.out)
    print(f"decoded {len(pc)} points to {args.out}")
    return 0


def cmd_evaluate(args):
    ref = geometry.load_point_cloud(args.ref)
    rec = geometry.load_point_cloud(args.rec)
    stream = _read_stream(args.stream) if args.stream else None
    report = metrics.evaluate(ref, rec, stream)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=list(metrics.CSV_FIELDS))
        writer.writeheader()
        writer.writerow(report.csv_row(args.sample_id or os.path.basename(args.ref)))
    finally:
        if args.out:
            out.close()
    return 0


def rd_point(params, clouds, seed=0, sample_ids=None, sample_rows=None):
    """Compress, reconstruct and score every cloud with one model; returns an RD row."""
    streams = [codec.compress(pc, params) for pc in clouds]
    by_p = {}
    for i, s in enumerate(streams):
        by_p.setdefault(s.P, []).append(i)
    recs = [None] * len(streams)
    for idx in by_p.values():
        for i, rec in zip(idx, codec.decompress_many([streams[i] for i in idx], params, seed)):
            recs[i] = rec
    reports = [metrics.evaluate(pc, rec, s) for pc, rec, s in zip(clouds, recs, streams)]
    if sample_rows is not None:
        ids = sample_ids or [str(i) for i in range(len(clouds))]
        sample_rows.extend(r.csv_row(sid) for r, sid in zip(reports, ids))
    Ps = {len(pc) for pc in clouds}
    return {
        "C": params.config.C,
        "N": params.config.N,
        "P": Ps.pop() if len(Ps) == 1 else "mixed",
        "bpp": float(np.mean([r.bpp for r in reports])),
        "chamfer": float(np.mean([r.chamfer for r in reports])),
        "emd": float(np.mean([r.emd for r in reports])),
        "psnr_db": float(np.mean([r.psnr_p2plane for r in reports])),
        "samples": len(reports),
    }


def cmd_rd_curve(args):
    files = _cloud_files(args.corpus) if os.path.isdir(args.corpus) else []
    if not files:
        raise UsageError(f"corpus {args.corpus!r} contains no .xyz/.ply clouds")
    clouds = [geometry.load_point_cloud(f) for f in files]
    ids = [os.path.basename(f) for f in files]
    rows, sample_rows = [], []
    for path in args.models:
        params = _load_model(path)
        logging.getLogger(__name__).info("evaluating %s (C=%d)", path, params.config.C)
        rows.append(rd_point(params, clouds, args.seed, ids, sample_rows))
    rows.sort(key=lambda r: r["bpp"])
    write_rd_csv(rows, args.out)
    if args.samples_out:
        metrics.write_csv(sample_rows, args.samples_out)
    for r in rows:
        print(f"C={r['C']:<4} bpp={r['bpp']:.6f} chamfer={r['chamfer']:.6f} emd={r['emd']:.6f} "
              f"psnr={r['psnr_db']:.2f}dB")
    return 0


def write_rd_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(RD_FIELDS))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_rd_dat(args):
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ("bpp", "chamfer", "emd", "psnr_db", "C")
    lines = ["# " + " ".join(cols)] + [" ".join(r[c] for c in cols) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="diffpcc", description="Diffusion-decoded point cloud geometry codec.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-shapes", help="write a synthetic primitive corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", default=",".join(geometry.SHAPE_KINDS))
    g.add_argument("--per-class", type=int, default=10)
    g.add_argument("--points", type=int, default=2048)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jitter", type=float, default=0.01)
    g.add_argument("--stretch", type=float, default=0.3)
    g.set_defaults(func=cmd_gen_shapes)

    t = sub.add_parser("train", help="train one model (one rate) from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log CSV (default: CKPT.log.csv)")
    t.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="compress a cloud to a bitstream")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--points", type=int, default=0, help="resample to this many points first")
    e.add_argument("--seed", type=int, default=0, help="resampling seed")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct a cloud from a bitstream")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("evaluate", help="score a reconstruction against its reference (one CSV row)")
    v.add_argument("--ref", required=True)
    v.add_argument("--rec", required=True)
    v.add_argument("--stream")
    v.add_argument("--sample-id")
    v.add_argument("--out")
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rd-curve", help="rate-distortion table over a corpus",
                       epilog=RD_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--models", nargs="+", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--samples-out", help="also write per-sample metric rows here")
    r.set_defaults(func=cmd_rd_curve)

    q = sub.add_parser("rd-dat", help="convert an rd-curve CSV to gnuplot data columns")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_rd_dat)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WrongModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (CorruptStreamError, ParseError, EmptyCloudError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
