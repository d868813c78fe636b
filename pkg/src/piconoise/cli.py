"""Command-line interface: ``piconoise {run,compare,render,certify,info}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 file or format error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__, tv
from .analysis import certify_sequence, nrmse
from .errors import ConfigError, PicoError, ShapeMismatch
from .estimators import default_workers
from .experiments import ExperimentConfig, run_experiment
from .fileio import read_array, read_config, read_csv, read_header, write_pgm


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_run(args) -> int:
    values = read_config(args.config)
    values.update(_parse_sets(args.set))
    out_dir = args.out or values.pop("out", None)
    values.pop("out", None)
    cfg = ExperimentConfig.from_mapping(values)
    out_dir = out_dir or f"runs/{cfg.kind}"
    workers = args.workers or default_workers()
    result = run_experiment(cfg, out_dir, workers)
    for name in result.files:
        print(f"{out_dir}/{name}")
    print(f"{out_dir}/manifest.txt")
    return 0


def _load_map(path) -> np.ndarray:
    x = read_array(path)
    return np.abs(x).astype(np.float64) if np.iscomplexobj(x) else x.astype(np.float64)


def cmd_compare(args) -> int:
    ref, est = _load_map(args.reference), _load_map(args.estimate)
    if ref.shape != est.shape:
        raise ShapeMismatch(f"map shapes differ: {ref.shape} vs {est.shape}")
    mask = _load_map(args.mask) > 0.5 if args.mask else None
    if args.metric == "nrmse":
        value = nrmse(est, ref, mask)
    else:
        m = np.ones(ref.shape, bool) if mask is None else mask
        value = float(np.max(np.abs(est[m] - ref[m]))) if m.any() else 0.0
    print(repr(value))
    return 0


def cmd_render(args) -> int:
    x = _load_map(args.map)
    if x.ndim == 3:
        x = x[args.index]
    lo = hi = None
    if args.scale:
        try:
            lo, hi = (float(v) for v in args.scale.split(","))
        except ValueError:
            raise ConfigError("scale", "expected lo,hi") from None
    write_pgm(args.out, x, lo, hi)
    print(args.out)
    return 0


def cmd_certify(args) -> int:
    snaps = _load_map(args.snapshots)
    if snaps.ndim != 3:
        raise ShapeMismatch("snapshot file must be rank 3 (checkpoint, rows, cols)")
    ns_path = args.ns or str(args.snapshots).replace(".picv", ".csv")
    _, rows = read_csv(ns_path)
    ns = [int(r[0]) for r in rows]
    if len(ns) != len(snaps):
        raise ShapeMismatch(f"{len(ns)} sample counts for {len(snaps)} snapshots")
    gold = _load_map(args.gold)
    mask = _load_map(args.mask) > 0.5 if args.mask else None
    roi = _load_map(args.roi) > 0.5 if args.roi else np.ones(gold.shape, bool)
    errs = [nrmse(s, gold, mask) for s in snaps]
    rois = [float(s[roi].mean()) for s in snaps]
    rep = certify_sequence(ns, errs, rois, args.gold_n or max(ns))
    print(f"certified_N = {rep.certified_N}")
    print(f"nrmse_at_N = {rep.nrmse_at_N!r}")
    print(f"delta_roi_at_N = {rep.delta_roi_at_N!r}")
    print(f"gold_N = {rep.gold_N}")
    return 0


def cmd_info(args) -> int:
    if not args.file:
        print(f"piconoise {__version__}")
        print(f"tv_backend = {tv.BACKEND}")
        print(f"workers = {default_workers()}")
        return 0
    with open(args.file, "rb") as fh:
        head = fh.read(64)
    dtype, dims, _ = read_header(head, args.file)
    x = read_array(args.file)
    mag = np.abs(x)
    print(f"dtype = {'complex64' if dtype.kind == 'c' else 'float32'}")
    print(f"dims = {'x'.join(map(str, dims))}")
    print(f"min = {float(mag.min())!r}")
    print(f"max = {float(mag.max())!r}")
    print(f"mean = {float(mag.mean())!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="piconoise", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"piconoise {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a key=value config or manifest")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    r.add_argument("--out", help="output directory")
    r.add_argument("--workers", type=int, help="worker threads (default: PICO_WORKERS or all cores)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="print a metric between two map files")
    c.add_argument("reference")
    c.add_argument("estimate")
    c.add_argument("--mask")
    c.add_argument("--metric", choices=("nrmse", "max-abs"), default="nrmse")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("render", help="write a 16-bit PGM preview of a map")
    d.add_argument("map")
    d.add_argument("--out", required=True)
    d.add_argument("--scale", help="lo,hi intensity window")
    d.add_argument("--index", type=int, default=0, help="slice of a rank-3 file")
    d.set_defaults(func=cmd_render)

    e = sub.add_parser("certify", help="apply the replica-doubling rule to snapshot maps")
    e.add_argument("snapshots")
    e.add_argument("gold")
    e.add_argument("--ns", help="CSV whose first column lists the snapshot sample counts")
    e.add_argument("--roi")
    e.add_argument("--mask")
    e.add_argument("--gold-n", type=int)
    e.set_defaults(func=cmd_certify)

    i = sub.add_parser("info", help="describe a map file, or the installation")
    i.add_argument("file", nargs="?")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PicoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
