"""``iochain`` command line: build trees, verify programs, run benchmarks.

Exit codes: 0 success, 1 verifier rejection, 2 usage/config/input errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .blockdev import BLOCK_SIZE
from .btree import TreeImage, build, demo_keys
from .config import ConfigError, RunConfig, read_profile
from .iostack import LatencyProfile, Mode, chain_latency
from .sfunc import AsmError, assemble, verify_all
from .xcache import Extent, ExtentMap

FIG_DEPTHS = tuple(range(1, 11))
FIG_BATCHES = (1, 2, 4, 8)


class CliError(Exception):
    pass


# ---- extent sidecar --------------------------------------------------------------

def sidecar_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.name + ".extents")


def write_extents(path: Path, extents: ExtentMap) -> None:
    lines = ["# file_off pba len"]
    lines += [f"{e.file_off} {e.pba} {e.len}" for e in extents.extents]
    path.write_text("\n".join(lines) + "\n")


def read_extents(path: Path, file_len: int) -> ExtentMap:
    exts = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            off, pba, length = (int(x) for x in line.split())
        except ValueError:
            raise CliError(f"{path}:{n}: expected 'file_off pba len'") from None
        exts.append(Extent(off, pba, length))
    try:
        return ExtentMap(exts, file_len)
    except ValueError as e:
        raise CliError(f"{path}: {e}") from None


def load_image(path: Path, page_size: int = 512, scatter: int = 1):
    if not path.is_file():
        raise CliError(f"image not found: {path}")
    try:
        image = TreeImage.load(path, page_size)
    except (OSError, ValueError) as e:
        raise CliError(f"{path}: {e}") from None
    side = sidecar_path(path)
    if side.is_file():
        extents = read_extents(side, len(image.data))
    elif scatter > 1:
        extents = ExtentMap.scattered(len(image.data), scatter, avoid_align=page_size)
    else:
        extents = ExtentMap.single(0, len(image.data))
    return image, extents


# ---- commands --------------------------------------------------------------------

def cmd_build_tree(args) -> int:
    fanout = args.fanout
    if args.keys is None and args.depth is None:
        raise CliError("give --keys or --depth")
    n = args.keys if args.keys is not None else fanout ** args.depth
    if n < 1:
        raise CliError("--keys must be >= 1")
    keys, values = demo_keys(n)
    try:
        image = build(keys, values, depth=args.depth, fanout=fanout, page_size=args.page_size)
        extents = (ExtentMap.scattered(len(image.data), args.scatter, avoid_align=args.page_size)
                   if args.scatter > 1 else ExtentMap.single(0, len(image.data)))
    except ValueError as e:
        raise CliError(str(e)) from None
    out = Path(args.out)
    try:
        image.save(out)
        side = sidecar_path(out)
        if args.scatter > 1:
            write_extents(side, extents)
        elif side.exists():
            side.unlink()
    except OSError as e:
        raise CliError(f"{out}: {e.strerror or e}") from None
    print(f"depth={image.depth} fanout={fanout} pages={image.pages} "
          f"root_offset={image.root_offset} keys={image.key_count} "
          f"extents={len(extents.extents)}")
    return 0


def cmd_verify(args) -> int:
    path = Path(args.program)
    try:
        text = path.read_text()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None
    try:
        program = assemble(text)
    except AsmError as e:
        print(f"{path}: {e}", file=sys.stderr)
        return 2
    errors = verify_all(program)
    if not errors:
        print(f"ok: {len(program)} instructions, max return {program.max_return} B")
        return 0
    for err in errors:
        print(f"insn {err.index}: {err.reason}: {err.detail}")
    print(f"rejected: {len(errors)} problem(s)")
    return 1


def _run_cells(cfg: RunConfig, image=None, extents=None) -> list[bench.Metrics]:
    depths = cfg.depths if cfg.depths else [image.depth if image else 3]
    if image is not None and any(d != image.depth for d in depths):
        raise CliError(f"depths {depths} do not match image depth {image.depth}")
    batches = cfg.batch if cfg.interface == "uring" else [None]
    rows = []
    for mode in cfg.modes:
        for d in depths:
            for w in cfg.workers:
                for k in batches:
                    run_id = f"{mode.value}-d{d}-w{w}" + (f"-k{k}" if k else "") + f"-s{cfg.seed}"
                    bc = bench.BenchConfig(
                        depth=d, mode=mode, workers=w, interface=cfg.interface, batch_size=k,
                        duration_s=cfg.duration_us / 1e6, seed=cfg.seed, profile=cfg.profile,
                        device=cfg.device, cores=cfg.cores, hop_limit=cfg.hop_limit,
                        invalidate_mean_s=(cfg.invalidate_mean_us / 1e6
                                           if cfg.invalidate_mean_us else None),
                        max_lookups=cfg.lookups, run_id=run_id, image=image, extents=extents)
                    try:
                        rows.append(bench.run(bc))
                    except ValueError as e:
                        raise CliError(f"{run_id}: {e}") from None
    return rows


def cmd_bench(args) -> int:
    cfg = _base_config(args)
    try:
        cfg = read_profile(args.config, cfg)
    except ConfigError as e:
        raise CliError(str(e)) from None
    if args.seed is not None:
        cfg.seed = args.seed
    image = extents = None
    if cfg.file is not None:
        spec = cfg.files[cfg.file]
        image, extents = load_image(spec.path, spec.page_size, spec.scatter)
    rows = _run_cells(cfg, image, extents)
    if args.csv:
        path = Path(args.csv)
        append = args.append and path.exists() and path.stat().st_size > 0
        text = bench.csv_text(rows)
        if append:
            text = text.split("\n", 1)[1]
        with open(path, "a" if append else "w", newline="") as fh:
            fh.write(text)
        for m in rows:
            print(f"{m.run_id}: {m.lookups_per_sec:.0f} lookups/s, mean {m.mean_lat_ns:.0f} ns, "
                  f"p99 {m.p99_lat_ns} ns, cpu {100 * m.cpu_util:.1f}%")
    else:
        sys.stdout.write(bench.csv_text(rows))
    return 0


def cmd_figures(args) -> int:
    cfg = _base_config(args)
    seed = args.seed or 0
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"{out}: {e.strerror or e}") from None
    base = bench.BenchConfig(depth=1, seed=seed, profile=cfg.profile, device=cfg.device,
                             duration_s=args.duration_us / 1e6)
    workers = tuple(args.workers)

    # Baseline cells are shared by the two thread sweeps.
    base_runs = {}
    hooked = {Mode.SYSCALL: {}, Mode.DRIVER: {}}
    for d in FIG_DEPTHS:
        for w in workers:
            base_runs[(d, w)] = bench.run(replace(base, depth=d, workers=w, mode=Mode.BASELINE,
                                                  run_id=f"baseline-d{d}-w{w}"))
            for mode in hooked:
                hooked[mode][(d, w)] = bench.run(replace(
                    base, depth=d, workers=w, mode=mode, run_id=f"{mode.value}-d{d}-w{w}"))

    heads = []
    for name, mode in (("fig3a", Mode.SYSCALL), ("fig3b", Mode.DRIVER)):
        rows = []
        for key in sorted(base_runs):
            rows += [base_runs[key], hooked[mode][key]]
        bench.write_csv(rows, out / f"{name}.csv")
        ratios = {k: hooked[mode][k].lookups_per_sec / base_runs[k].lookups_per_sec
                  for k in base_runs}
        best = max(ratios, key=lambda k: (ratios[k], k))
        heads.append(f"{name}: max {mode.value} throughput ratio {ratios[best]:.3f} "
                     f"(depth {best[0]}, {best[1]} workers)")

    lat = bench.latency_sweep(FIG_DEPTHS, base=base)
    bench.write_csv([lat[(m, d)] for d in FIG_DEPTHS for m in Mode], out / "fig3c.csv")
    red = {d: 1 - lat[(Mode.DRIVER, d)].mean_lat_ns / lat[(Mode.BASELINE, d)].mean_lat_ns
           for d in FIG_DEPTHS}
    dmax = max(red, key=lambda d: (red[d], d))
    prof = cfg.profile
    ceiling = 1 - (chain_latency(prof, Mode.DRIVER, 2) - prof.total_path_ns()) / prof.total_path_ns()
    heads.append(f"fig3c: max driver latency reduction {100 * red[dmax]:.1f}% at depth {dmax} "
                 f"(closed-form limit {100 * ceiling:.1f}% as depth grows)")

    ur = bench.uring_sweep(FIG_DEPTHS, FIG_BATCHES, base=base)
    rows = []
    for key in sorted(ur):
        rows += [ur[key]["baseline"], ur[key]["hooked"]]
    bench.write_csv(rows, out / "fig3d.csv")
    best = max(ur, key=lambda k: (ur[k]["ratio"], k))
    heads.append(f"fig3d: max io_uring driver ratio {ur[best]['ratio']:.3f} "
                 f"(depth {best[0]}, batch {best[1]})")
    for line in heads:
        print(line)
    print("note: worker counts " + ",".join(map(str, workers)) + " are a stand-in sweep; "
          "latency reductions are bounded by the per-hop cost table (see README, model notes)")
    return 0


def _base_config(args) -> RunConfig:
    cfg = RunConfig(depths=None)
    if args.profile:
        try:
            cfg = read_profile(args.profile, cfg)
        except ConfigError as e:
            raise CliError(str(e)) from None
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the run seed")
    common.add_argument("--profile", default=argparse.SUPPRESS,
                        help="INI file with [profile]/[device] overrides")

    p = argparse.ArgumentParser(prog="iochain", parents=[common],
                                description="Dependent-read offload simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-tree", parents=[common], help="write a B+-tree image")
    b.add_argument("--keys", type=int)
    b.add_argument("--depth", type=int)
    b.add_argument("--fanout", type=int, default=31)
    b.add_argument("--page-size", type=int, default=BLOCK_SIZE)
    b.add_argument("--scatter", type=int, default=1,
                   help="lay the image out over this many discontiguous extents")
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_tree)

    v = sub.add_parser("verify", parents=[common], help="check a storage-function program")
    v.add_argument("program")
    v.set_defaults(fn=cmd_verify)

    r = sub.add_parser("bench", parents=[common], help="run benchmark cells from a config")
    r.add_argument("config")
    r.add_argument("--csv")
    r.add_argument("--append", action="store_true", help="append rows to an existing CSV")
    r.set_defaults(fn=cmd_bench)

    f = sub.add_parser("figures", parents=[common], help="write the four sweep CSVs")
    f.add_argument("--out", required=True)
    f.add_argument("--duration-us", type=int, default=5000)
    f.add_argument("--workers", type=int, nargs="+", default=list(bench.SWEEP_WORKERS))
    f.set_defaults(fn=cmd_figures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.seed = getattr(args, "seed", None)
    args.profile = getattr(args, "profile", None)
    if args.command == "build-tree" and args.scatter < 1:
        print("iochain: --scatter must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except CliError as e:
        print(f"iochain: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
