"""Command line entry point: ``lcmm run | converge | profile``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io, study
from . import sim as simmod
from .config import RunConfig, dump_config, load_config
from .mmpde import MONITOR_KINDS

DEFAULT_COUNTS = (122, 162, 218, 286, 342)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    kw = {}
    if getattr(args, "out", None):
        kw["out_dir"] = args.out
    if getattr(args, "threads", None):
        kw["threads"] = args.threads
    if getattr(args, "frozen_mesh", False):
        kw["frozen_mesh"] = True
    if getattr(args, "monitor", None):
        kw["monitor_kind"] = args.monitor
    return cfg.with_(**kw) if kw else cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--out", help="output directory (overrides [output] out_dir)")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    p.add_argument("--frozen-mesh", action="store_true", help="disable mesh motion")
    p.add_argument("--monitor", choices=MONITOR_KINDS, help="monitor function")


def _counts(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not vals or min(vals) < 2:
        raise argparse.ArgumentTypeError("element counts must be >= 2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lcmm", description="Moving-mesh Q-tensor nematic simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    _add_common(p)
    p.add_argument("--elements", type=int, help="approximate element count (square grid)")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")

    p = sub.add_parser("converge", help="spatial convergence study against a fine reference")
    _add_common(p)
    p.add_argument("--elements", type=_counts, default=list(DEFAULT_COUNTS),
                   help="comma-separated element counts (default 122,162,218,286,342)")
    p.add_argument("--reference-elements", type=int, default=2048, help="reference element count")
    p.add_argument("--uniform", action="store_true", help="also run fixed uniform meshes for comparison")

    p = sub.add_parser("profile", help="sample S, beta and eigenvalues along y = c")
    _add_common(p)
    p.add_argument("--snapshot", type=Path, help="VTK snapshot to sample (otherwise run --config first)")
    p.add_argument("--y", type=float, default=0.0, help="line position in solver length units")
    p.add_argument("--samples", type=int, default=201)
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.elements:
        nx, ny = study.grid_for(args.elements)
        cfg = cfg.with_(nx=nx, ny=ny)
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return 0
    rep = simmod.run(cfg, keep=False)
    for k, v in rep.summary.items():
        print(f"{k}={v}")
    return 0 if rep.ok else 1


def cmd_converge(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    nx, ny = study.grid_for(args.reference_elements)
    ref, _ = study.final_snapshot(cfg.with_(nx=nx, ny=ny, frozen_mesh=False))
    res = study.convergence_study(cfg, args.elements, ref)
    io.atomic_write(out / "convergence.csv", res.table())
    print(res.table(), end="")
    if args.uniform:
        uni = study.convergence_study(cfg.with_(frozen_mesh=True), args.elements, ref)
        io.atomic_write(out / "convergence_uniform.csv", uni.table())
        print("uniform")
        print(uni.table(), end="")
    return 0


def cmd_profile(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    if args.snapshot:
        snap = io.read_snapshot(args.snapshot)
    else:
        rep = simmod.run(cfg, write=False)
        if not rep.ok:
            print(rep.error, file=sys.stderr)
            return 1
        snap = rep.snapshots[-1]
    path = out / "profile.csv"
    io.profile_line(snap, args.y, args.samples, path=path)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"run": cmd_run, "converge": cmd_converge, "profile": cmd_profile}[args.command](args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"lcmm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
