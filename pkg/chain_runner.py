#!/usr/bin/env python3
"""Loop-chain benchmark driver: run an app in a flush mode, verify it, report."""

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import config
import oracle
from apps import APPS, JACOBI_VARIANTS, AppInstance, build_app, make_runtime
from database import ResultsDatabase
from errors import LoopChainError
from executor import ExecutionReport
from lazy_queue import Distributed, FlushMode, Sequential, Tiled, TiledAuto, Untiled

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME_ERROR = 3

logger = logging.getLogger("chain_runner")


@dataclass(frozen=True)
class AppConfig:
    app: str
    sizes: Tuple[int, ...]
    iterations: int = 1
    variant: Optional[str] = None
    tile_sizes: Optional[Tuple[int, ...]] = None
    auto_tile: bool = False
    cache_kb: int = config.DEFAULT_CACHE_KB
    threads: int = config.DEFAULT_THREADS
    rank_grid: Optional[Tuple[int, ...]] = None
    verify: bool = False
    dump_plan: Optional[str] = None
    report: bool = False
    seed: int = 0
    loops: int = 153
    db_path: Optional[str] = None
    compare_messages: bool = False

    def __post_init__(self):
        if self.tile_sizes is not None and self.auto_tile:
            raise ValueError("choose either explicit tile sizes or auto tiling, not both")

    @property
    def tiled(self) -> bool:
        return self.tile_sizes is not None or self.auto_tile

    @property
    def mode(self) -> FlushMode:
        if self.rank_grid is not None:
            return Distributed(self.rank_grid, self.tile_sizes, self.auto_tile)
        if self.tile_sizes is not None:
            return Tiled(self.tile_sizes)
        if self.auto_tile:
            return TiledAuto()
        return Untiled()


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"values must be positive, got '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Loop-chain tiling benchmark driver")
    parser.add_argument("--app", choices=APPS, default="jacobi2d", help="Application to run")
    parser.add_argument("--variant", choices=JACOBI_VARIANTS, default="copy", help="Jacobi variant")
    parser.add_argument("--size", type=_int_list, default=None, help="Domain extents NX[,NY[,NZ]]")
    parser.add_argument("--iters", type=int, default=1, help="Iterations (time steps)")
    modes = parser.add_mutually_exclusive_group()
    modes.add_argument("--tile", type=_int_list, help="Tile sizes TX[,TY[,TZ]]")
    modes.add_argument("--auto-tile", action="store_true", help="Pick tile sizes from the cache model")
    modes.add_argument("--untiled", action="store_true", help="Loop-at-a-time execution (default)")
    parser.add_argument("--cache-kb", type=int, default=config.DEFAULT_CACHE_KB, help="Cache size for auto tiling")
    parser.add_argument("--threads", type=int, default=config.DEFAULT_THREADS, help="Worker threads")
    parser.add_argument("--ranks", type=_int_list, help="Simulated rank grid PX[,PY]")
    parser.add_argument("--verify", action="store_true", help="Compare against a reference execution")
    parser.add_argument("--dump-plan", metavar="PATH", help="Write the tiling plan to PATH")
    parser.add_argument("--report", action="store_true", help="Print the report as key=value lines")
    parser.add_argument("--seed", type=int, default=0, help="Seed for initial data")
    parser.add_argument("--loops", type=int, default=153, help="Loop count of the synthetic chain")
    parser.add_argument("--compare-messages", action="store_true",
                        help="Also run the on-demand distributed baseline and compare halo traffic")
    parser.add_argument("--db", nargs="?", const=config.RESULTS_DB_PATH, default=None, metavar="PATH",
                        help="Record the run in a results database")
    parser.add_argument("--history", action="store_true", help="Show recorded runs and exit")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def config_from_args(args: argparse.Namespace) -> AppConfig:
    default_sizes = {"jacobi2d": (64, 64), "minihydro": (48, 48), "twoloop": (8,), "synthetic": (64, 64)}
    sizes = args.size or default_sizes[args.app]
    if len(sizes) != len(default_sizes[args.app]):
        raise ValueError(f"--size for {args.app} needs {len(default_sizes[args.app])} entries, got {len(sizes)}")
    if args.iters < 1:
        raise ValueError("--iters must be at least 1")
    if args.tile is not None and len(args.tile) != len(sizes):
        raise ValueError(f"--tile has {len(args.tile)} entries for a {len(sizes)}D domain")
    if args.ranks is not None and len(args.ranks) != len(sizes):
        raise ValueError(f"--ranks has {len(args.ranks)} entries for a {len(sizes)}D domain")
    if args.dump_plan and args.tile is None and not args.auto_tile:
        raise ValueError("--dump-plan needs a tiled mode (--tile or --auto-tile)")
    if args.compare_messages and args.ranks is None:
        raise ValueError("--compare-messages needs --ranks")
    return AppConfig(
        app=args.app,
        sizes=tuple(sizes),
        iterations=args.iters,
        variant=args.variant if args.app == "jacobi2d" else None,
        tile_sizes=args.tile,
        auto_tile=args.auto_tile,
        cache_kb=args.cache_kb,
        threads=args.threads,
        rank_grid=args.ranks,
        verify=args.verify,
        dump_plan=args.dump_plan,
        report=args.report,
        seed=args.seed,
        loops=args.loops,
        db_path=args.db,
        compare_messages=args.compare_messages,
    )


def run_app(cfg: AppConfig, mode: Optional[FlushMode] = None) -> Tuple[AppInstance, ExecutionReport]:
    """Build the app, flush whatever is still queued, and fold all flushes into one report."""
    runtime = make_runtime(len(cfg.sizes), mode=mode or cfg.mode, threads=cfg.threads, cache_kb=cfg.cache_kb)
    try:
        app = build_app(cfg.app, runtime, cfg.sizes, cfg.iterations, cfg.variant, cfg.seed, cfg.loops)
        runtime.flush()
    finally:
        runtime.close()
    return app, runtime.total_report()


def reference_mode(cfg: AppConfig) -> FlushMode:
    """Point-by-point reference on small instances, loop-at-a-time otherwise."""
    small = max(cfg.sizes) <= config.ORACLE_MAX_POINTS_PER_DIM and cfg.app != "synthetic"
    return Sequential() if small else Untiled()


def verify_run(cfg: AppConfig, app: AppInstance, report: ExecutionReport) -> bool:
    reference, ref_report = run_app(cfg, reference_mode(cfg))
    report.max_abs_diff = oracle.max_abs_diff(app.fields, reference.fields)
    ok = report.max_abs_diff == 0.0
    got, want = report.reduction_values(), ref_report.reduction_values()
    if len(got) != len(want):
        return False
    for a, b in zip(got, want):
        if not math.isclose(a, b, rel_tol=config.REDUCTION_RTOL, abs_tol=0.0):
            logger.warning("reduction mismatch: %r vs reference %r", a, b)
            ok = False
    return ok


def plan_dump(app: AppInstance, cfg: AppConfig) -> str:
    runtime = app.runtime
    if cfg.rank_grid is None:
        return runtime.last_plan.dump() if runtime.last_plan is not None else ""
    plans = sorted(runtime.rank_plan_cache.items(), key=lambda item: item[0][3])
    chunks = []
    for key, plan in plans:
        chunks.append("".join(f"rank={key[3]} {line}\n" for line in plan.dump().splitlines()))
    return "".join(chunks)


def print_banner(cfg: AppConfig):
    print("\n" + "=" * 60)
    print("  LOOP-CHAIN TILING BENCHMARK")
    print(f"  App: {cfg.app}" + (f" ({cfg.variant})" if cfg.variant else ""))
    print(f"  Size: {'x'.join(map(str, cfg.sizes))}   Iterations: {cfg.iterations}")
    print(f"  Mode: {cfg.mode.name}" + (f"   Ranks: {'x'.join(map(str, cfg.rank_grid))}" if cfg.rank_grid else ""))
    print("=" * 60 + "\n")


def print_summary(report: ExecutionReport):
    print(f"📊 {len(report.loop_stats)} loop executions in {report.flushes} flush(es)")
    if report.tile_sizes:
        print(f"   Tiles: {report.tile_count} of {'x'.join(map(str, report.tile_sizes))}   "
              f"skew: {','.join(map(str, report.skew)) or 'none'}")
    print(f"   Planning: {report.plan_seconds:.4f}s ({report.plan_fraction * 100:.2f}% of {report.total_seconds:.4f}s)"
          f"   plan cache hit: {'yes' if report.cache_hit else 'no'}")
    print(f"   Bandwidth: {report.bandwidth_gbs:.3f} GB/s over {report.bytes_moved:,} bytes")
    if report.messages_sent or report.rank_traffic:
        print(f"   Halo traffic: {report.messages_sent} messages, {report.bytes_sent:,} bytes")
    for value in report.reduction_values():
        print(f"   Reduction: {value!r}")
    if report.max_abs_diff is not None:
        print(f"   Max abs diff vs reference: {report.max_abs_diff!r}")


def print_history(db: ResultsDatabase):
    runs = db.get_runs()
    if not runs:
        print("No recorded runs.")
        return
    print(f"\n{'#':<5} {'App':<11} {'Mode':<20} {'Size':<10} {'Iters':<6} {'Seconds':<10} {'GB/s':<8} {'Verified':<8}")
    print("-" * 80)
    for run in runs:
        verified = {None: "-", 1: "yes", 0: "NO"}[run["verified"]]
        print(f"{run['id']:<5} {run['app']:<11} {run['mode']:<20} {run['sizes']:<10} {run['iterations']:<6} "
              f"{run['total_seconds']:<10.4f} {run['bandwidth_gbs']:<8.3f} {verified:<8}")
    stats = db.get_performance_stats()
    print(f"\nTotal runs: {stats['total_runs']}  verified: {stats['verified_runs']}  "
          f"failed: {stats['failed_verifications']}")
    for mode, m in stats["modes"].items():
        print(f"   {mode:<20} runs: {m['runs']:<4} mean {m['avg_seconds']:.4f}s  "
              f"{m['avg_bandwidth_gbs']:.3f} GB/s  plan {m['avg_plan_fraction'] * 100:.2f}%")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    if args.history:
        print_history(ResultsDatabase(args.db or config.RESULTS_DB_PATH))
        return EXIT_OK

    try:
        cfg = config_from_args(args)
    except ValueError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if not args.report:
        print_banner(cfg)

    try:
        app, report = run_app(cfg)
        verified = verify_run(cfg, app, report) if cfg.verify else None

        if cfg.compare_messages:
            baseline_cfg = AppConfig(**{**cfg.__dict__, "tile_sizes": None, "auto_tile": False,
                                        "verify": False, "dump_plan": None})
            _, baseline = run_app(baseline_cfg)
            print(f"Halo messages: {report.mode} {report.messages_sent} vs "
                  f"{baseline.mode} {baseline.messages_sent}")

        if cfg.dump_plan:
            with open(cfg.dump_plan, "w") as f:
                f.write(plan_dump(app, cfg))
    except LoopChainError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR

    if args.report:
        sys.stdout.write(report.to_lines())
    else:
        print_summary(report)

    if cfg.db_path:
        db = ResultsDatabase(cfg.db_path)
        run_id = db.add_run(cfg.app, report.mode, cfg.sizes, cfg.iterations, report, variant=cfg.variant,
                            tile_sizes=report.tile_sizes, ranks=cfg.rank_grid, threads=cfg.threads,
                            verified=verified)
        logger.info("recorded run %d in %s", run_id, cfg.db_path)

    if verified is False:
        print("❌ Verification failed", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    if verified:
        print("✅ Verified against reference" if not args.report else "verified=true")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
