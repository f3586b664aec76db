"""Execution of loop chains: tile by tile over a plan, or loop at a time."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

import config
from errors import MeshError, PlanError
from mesh import (ArgAccessor, Field, LoopRecord, Range, WriteHook, elem_bytes_of,
                  estimate_bytes_moved, intersect_ranges, range_is_empty, range_points, range_shape)

logger = logging.getLogger(__name__)


@dataclass
class LoopStat:
    loop_id: int
    kernel: str
    seconds: float = 0.0
    bytes_moved: int = 0
    calls: int = 0
    points: int = 0

    @property
    def bandwidth_gbs(self) -> float:
        return self.bytes_moved / self.seconds / 1e9 if self.seconds > 0 else 0.0


@dataclass
class ExecutionReport:
    mode: str = "untiled"
    loop_stats: List[LoopStat] = field(default_factory=list)
    tile_count: int = 0
    tile_sizes: Optional[Tuple[int, ...]] = None
    cache_hit: bool = False
    plans_built: int = 0
    plan_seconds: float = 0.0
    total_seconds: float = 0.0
    skew: Tuple[int, ...] = ()
    empty_ranges: int = 0
    reductions: List[Tuple[int, float]] = field(default_factory=list)
    messages_sent: int = 0
    bytes_sent: int = 0
    rank_traffic: Dict[int, Tuple[int, int]] = field(default_factory=dict)
    exchange_calls: int = 0
    flushes: int = 0
    max_abs_diff: Optional[float] = None

    @property
    def bytes_moved(self) -> int:
        return sum(s.bytes_moved for s in self.loop_stats)

    @property
    def exec_seconds(self) -> float:
        return sum(s.seconds for s in self.loop_stats)

    @property
    def bandwidth_gbs(self) -> float:
        secs = self.exec_seconds
        return self.bytes_moved / secs / 1e9 if secs > 0 else 0.0

    @property
    def plan_fraction(self) -> float:
        return self.plan_seconds / self.total_seconds if self.total_seconds > 0 else 0.0

    @property
    def is_empty(self) -> bool:
        return not self.loop_stats

    def reduction_values(self) -> List[float]:
        return [v for _, v in self.reductions]

    def merge(self, other: "ExecutionReport") -> "ExecutionReport":
        """Accumulate another flush into this report."""
        if other.is_empty and not other.messages_sent and not other.reductions and other.flushes == 0:
            return self
        if self.is_empty and self.flushes == 0:
            self.mode = other.mode
        self.loop_stats.extend(other.loop_stats)
        self.tile_count = max(self.tile_count, other.tile_count)
        self.tile_sizes = other.tile_sizes or self.tile_sizes
        self.cache_hit = self.cache_hit or other.cache_hit
        self.plans_built += other.plans_built
        self.plan_seconds += other.plan_seconds
        self.total_seconds += other.total_seconds
        if other.skew:
            self.skew = tuple(max(a, b) for a, b in zip(self.skew, other.skew)) if self.skew else other.skew
        self.empty_ranges += other.empty_ranges
        self.reductions.extend(other.reductions)
        self.messages_sent += other.messages_sent
        self.bytes_sent += other.bytes_sent
        for rank, (msgs, nbytes) in other.rank_traffic.items():
            m0, b0 = self.rank_traffic.get(rank, (0, 0))
            self.rank_traffic[rank] = (m0 + msgs, b0 + nbytes)
        self.exchange_calls += other.exchange_calls
        self.flushes += max(1, other.flushes)
        return self

    def to_pairs(self) -> List[Tuple[str, str]]:
        pairs = [
            ("mode", self.mode),
            ("flushes", str(self.flushes)),
            ("loops_executed", str(len(self.loop_stats))),
            ("tile_count", str(self.tile_count)),
            ("tile_sizes", ",".join(map(str, self.tile_sizes)) if self.tile_sizes else "none"),
            ("cache_hit", str(self.cache_hit).lower()),
            ("plans_built", str(self.plans_built)),
            ("skew", ",".join(map(str, self.skew)) if self.skew else "none"),
            ("empty_ranges", str(self.empty_ranges)),
            ("plan_seconds", f"{self.plan_seconds:.6f}"),
            ("exec_seconds", f"{self.exec_seconds:.6f}"),
            ("total_seconds", f"{self.total_seconds:.6f}"),
            ("plan_fraction", f"{self.plan_fraction:.6f}"),
            ("bytes_moved", str(self.bytes_moved)),
            ("bandwidth_gbs", f"{self.bandwidth_gbs:.4f}"),
            ("messages_sent", str(self.messages_sent)),
            ("bytes_sent", str(self.bytes_sent)),
        ]
        for rank in sorted(self.rank_traffic):
            msgs, nbytes = self.rank_traffic[rank]
            pairs.append((f"rank{rank}_messages", str(msgs)))
            pairs.append((f"rank{rank}_bytes", str(nbytes)))
        for i, value in enumerate(self.reduction_values()):
            pairs.append((f"reduction{i}", repr(value)))
        if self.max_abs_diff is not None:
            pairs.append(("max_abs_diff", repr(self.max_abs_diff)))
        return pairs

    def to_lines(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.to_pairs()) + "\n"


class TiledExecutor:
    """Runs kernels over plan ranges.

    Within one (tile, loop) the range may be split into chunks along the
    last dimension and run on a thread pool; loops and tiles run strictly in
    order. Reduction partials are combined in chunk, tile and loop order.
    """

    def __init__(self, threads: Optional[int] = None, write_hook: Optional[WriteHook] = None):
        self.threads = max(1, threads if threads is not None else config.DEFAULT_THREADS)
        self.write_hook = write_hook
        self.kernel_calls = 0
        self._pool: Optional[ThreadPoolExecutor] = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def _chunks(self, rng: Range) -> List[Range]:
        s, e = rng[-1]
        parts = min(self.threads, e - s)
        if parts <= 1:
            return [rng]
        edges = np.linspace(s, e, parts + 1).round().astype(int)
        return [rng[:-1] + ((int(a), int(b)),) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def _invoke(self, loop: LoopRecord, rng: Range, fields: Mapping[str, Field], tile_id: Optional[int]):
        accessors = [ArgAccessor(fields[arg.dataset], arg, rng, loop.loop_id, tile_id, self.write_hook)
                     for arg in loop.args]
        return loop.kernel(*accessors)

    @staticmethod
    def _fold(loop: LoopRecord, rng: Range, contributions, reduction_box: Optional[Range]) -> float:
        if contributions is None:
            raise MeshError(f"loop {loop.loop_id} ({loop.name}) has a reduction but returned no contributions")
        values = np.broadcast_to(np.asarray(contributions, dtype=np.float64), range_shape(rng))
        if reduction_box is not None:
            sub = intersect_ranges(rng, reduction_box)
            if range_is_empty(sub):
                return loop.reduction.identity
            values = values[tuple(slice(s - r0, e - r0) for (s, e), (r0, _) in zip(sub, rng))]
        return loop.reduction.fold(values)

    def run_loop(self, loop: LoopRecord, rng: Range, fields: Mapping[str, Field],
                 tile_id: Optional[int] = None, reduction_box: Optional[Range] = None) -> Optional[float]:
        """Run one loop over rng; returns the folded reduction contribution, if any."""
        if range_is_empty(rng):
            return None
        chunks = self._chunks(rng)
        if len(chunks) == 1:
            results = [self._invoke(loop, chunks[0], fields, tile_id)]
        else:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=self.threads)
            results = list(self._pool.map(lambda c: self._invoke(loop, c, fields, tile_id), chunks))
        self.kernel_calls += len(chunks)
        if loop.reduction is None:
            return None
        value = loop.reduction.identity
        for chunk, result in zip(chunks, results):
            value = loop.reduction.combine(value, self._fold(loop, chunk, result, reduction_box))
        return value

    def _run_schedule(self, chain, schedule, fields: Mapping[str, Field], mode: str,
                      reduction_box: Optional[Range]) -> ExecutionReport:
        sizes = elem_bytes_of(fields)
        stats = [LoopStat(loop.loop_id, loop.name) for loop in chain.loops]
        partials: Dict[int, float] = {l.loop_id: l.reduction.identity for l in chain.loops if l.reduction}
        started = time.perf_counter()
        for tile_id, l, rng in schedule:
            if range_is_empty(rng):
                continue
            loop = chain.loops[l]
            t0 = time.perf_counter()
            part = self.run_loop(loop, rng, fields, tile_id, reduction_box)
            stat = stats[l]
            stat.seconds += time.perf_counter() - t0
            stat.bytes_moved += estimate_bytes_moved(loop, rng, sizes)
            stat.calls += 1
            stat.points += range_points(rng)
            if part is not None:
                partials[l] = loop.reduction.combine(partials[l], part)
        report = ExecutionReport(mode=mode, loop_stats=stats, flushes=1,
                                 total_seconds=time.perf_counter() - started,
                                 reductions=sorted(partials.items()))
        return report

    def execute_plan(self, plan, chain, fields: Mapping[str, Field],
                     reduction_box: Optional[Range] = None, mode: str = "tiled") -> ExecutionReport:
        """Tiles in order, and within each tile the loops in chain order over their tile ranges."""
        if plan.signature != chain.signature:
            raise PlanError("tiling plan was built for a different loop chain")
        if plan.num_loops != len(chain):
            raise PlanError(f"plan covers {plan.num_loops} loops, chain has {len(chain)}")
        schedule = ((t, l, plan.range_of(t, l)) for t in range(plan.num_tiles) for l in range(len(chain)))
        report = self._run_schedule(chain, schedule, fields, mode, reduction_box)
        report.tile_count = plan.num_tiles
        report.tile_sizes = plan.config.tile_sizes
        report.skew = plan.skew()
        report.empty_ranges = plan.empty_ranges()
        logger.debug("executed %d tiles x %d loops in %.6fs", plan.num_tiles, len(chain), report.total_seconds)
        return report

    def execute_untiled(self, chain, fields: Mapping[str, Field], reduction_box: Optional[Range] = None,
                        loop_ranges: Optional[List[Range]] = None, mode: str = "untiled") -> ExecutionReport:
        """Loop at a time, each over its full range (or the given replacement ranges)."""
        ranges = [loop.range for loop in chain.loops] if loop_ranges is None else loop_ranges
        schedule = ((None, l, ranges[l]) for l in range(len(chain)))
        report = self._run_schedule(chain, schedule, fields, mode, reduction_box)
        report.tile_count = 1 if len(chain) else 0
        return report
