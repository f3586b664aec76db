"""Simulated distributed-memory execution of loop chains.

Ranks live in one process. Each rank owns a block of the decomposed domain
and keeps a private copy of every dataset: its owned region (plus physical
padding on faces at the domain edge) and halo padding on faces shared with a
neighbour. Everything a rank does not own is poisoned with NaN before each
flush, so a read of a value that was never exchanged or computed shows up
in the results.

Tiled flushes exchange halos once, at the depth the whole chain needs, and
then run every rank's tiles without further communication; iterations near
a partition boundary are recomputed by the neighbour that needs them.
Untiled flushes exchange halos on demand before each loop that reads a
dataset written since its last exchange.
"""

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import DecompositionError, HaloAllocationError
from executor import ExecutionReport, LoopStat, TiledExecutor
from mesh import (Field, Range, elem_bytes_of, estimate_bytes_moved, format_range, hull_ranges,
                  intersect_ranges, range_is_empty, range_points, range_shape, shift_range)
from planner import PlanCache, TilingPlan, check_allocation, compute_union_bounds, construct_plan

logger = logging.getLogger(__name__)

# Stand-in for an infinite bound on faces without a neighbour
UNBOUNDED = 1 << 40

LOWER, UPPER = 0, 1
SIDE_NAMES = ("lower", "upper")


@dataclass(frozen=True)
class RankPartition:
    rank: int
    coords: Tuple[int, ...]
    owned: Range
    neighbors: Tuple[Tuple[Optional[int], Optional[int]], ...]

    @property
    def dim(self) -> int:
        return len(self.owned)

    def neighbor(self, d: int, side: int) -> Optional[int]:
        return self.neighbors[d][side]

    @property
    def owned_ext(self) -> Range:
        """Owned region stretched to infinity on faces without a neighbour."""
        return tuple((s if lo is not None else -UNBOUNDED, e if hi is not None else UNBOUNDED)
                     for (s, e), (lo, hi) in zip(self.owned, self.neighbors))

    def owned_storage(self, f: Field) -> Range:
        """Part of a dataset's allocation this rank is authoritative for."""
        return intersect_ranges(self.owned_ext, f.base_range)

    def local_extent(self, f: Field) -> Range:
        out = []
        for d, ((s, e), (bs, be)) in enumerate(zip(self.owned, f.base_range)):
            pad_lo, pad_hi = f.padding(d)
            lo = bs if self.neighbors[d][LOWER] is None else s - pad_lo
            hi = be if self.neighbors[d][UPPER] is None else e + pad_hi
            out.append((lo, hi))
        return tuple(out)


@dataclass(frozen=True)
class RankLayout:
    """Block decomposition of a domain over a grid of ranks.

    Ranks are numbered in lexicographic order of their grid coordinates,
    dimension 0 most significant.
    """
    domain: Range
    grid: Tuple[int, ...]
    partitions: Tuple[RankPartition, ...]

    def __len__(self) -> int:
        return len(self.partitions)

    def __iter__(self) -> Iterator[RankPartition]:
        return iter(self.partitions)

    def __getitem__(self, rank: int) -> RankPartition:
        return self.partitions[rank]

    @property
    def size(self) -> int:
        return len(self.partitions)


def decompose(domain: Range, grid: Sequence[int]) -> RankLayout:
    """Near-equal block partition; remainders go to the lowest-coordinate ranks."""
    grid = tuple(int(g) for g in grid)
    if len(grid) != len(domain):
        raise DecompositionError(f"rank grid {grid} does not match the {len(domain)}D domain")
    edges_per_dim = []
    for d, ((s, e), g) in enumerate(zip(domain, grid)):
        if g < 1:
            raise DecompositionError(f"rank count must be at least 1, got {g} in dimension {d}")
        if g > e - s:
            raise DecompositionError(f"{g} ranks cannot split {e - s} points in dimension {d}")
        base, rem = divmod(e - s, g)
        edges = [s]
        for i in range(g):
            edges.append(edges[-1] + base + (1 if i < rem else 0))
        edges_per_dim.append(edges)

    all_coords = list(itertools.product(*(range(g) for g in grid)))
    rank_of = {c: r for r, c in enumerate(all_coords)}
    partitions = []
    for rank, coords in enumerate(all_coords):
        owned = tuple((edges_per_dim[d][c], edges_per_dim[d][c + 1]) for d, c in enumerate(coords))
        neighbors = []
        for d in range(len(grid)):
            below = coords[:d] + (coords[d] - 1,) + coords[d + 1:]
            above = coords[:d] + (coords[d] + 1,) + coords[d + 1:]
            neighbors.append((rank_of.get(below), rank_of.get(above)))
        partitions.append(RankPartition(rank, coords, owned, tuple(neighbors)))
    return RankLayout(tuple(domain), grid, tuple(partitions))


@dataclass(frozen=True)
class HaloSpec:
    """Exchange depth of one dataset per dimension and side."""
    dataset: str
    depth_lo: Tuple[int, ...]
    depth_hi: Tuple[int, ...]

    @property
    def needed(self) -> bool:
        return any(self.depth_lo) or any(self.depth_hi)

    def depth(self, d: int, side: int) -> int:
        return (self.depth_lo, self.depth_hi)[side][d]

    def merge(self, other: "HaloSpec") -> "HaloSpec":
        return HaloSpec(self.dataset,
                        tuple(map(max, self.depth_lo, other.depth_lo)),
                        tuple(map(max, self.depth_hi, other.depth_hi)))

    def __str__(self):
        faces = ",".join(f"{lo}/{hi}" for lo, hi in zip(self.depth_lo, self.depth_hi))
        return f"{self.dataset}: depth {faces}" + ("" if self.needed else " (no exchange)")


def no_halo(dataset: str, dim: int) -> HaloSpec:
    return HaloSpec(dataset, (0,) * dim, (0,) * dim)


@dataclass
class MessageLog:
    """Simulated transport accounting; traffic is attributed to the sending rank."""
    messages: int = 0
    bytes: int = 0
    per_rank: Dict[int, Tuple[int, int]] = field(default_factory=dict)
    calls: int = 0
    executing: bool = False
    calls_during_execution: int = 0

    def record(self, sender: int, nbytes: int):
        self.messages += 1
        self.bytes += nbytes
        msgs, total = self.per_rank.get(sender, (0, 0))
        self.per_rank[sender] = (msgs + 1, total + nbytes)


def rank_executed_ranges(chain, part: RankPartition) -> List[Range]:
    """Ranges a rank runs for each loop: its owned share plus whatever later loops read.

    Swept backwards; a loop writing a dataset that later loops read on this
    rank widens to cover those reads inside its own global range.
    """
    ext = part.owned_ext
    needed: Dict[str, Optional[Range]] = {}
    executed: List[Optional[Range]] = [None] * len(chain.loops)
    for l in reversed(range(len(chain.loops))):
        loop = chain.loops[l]
        own = intersect_ranges(loop.range, ext)
        x = None if range_is_empty(own) else own
        for arg in loop.args:
            if arg.mode.writes and needed.get(arg.dataset) is not None:
                x = hull_ranges(x, intersect_ranges(needed[arg.dataset], loop.range))
        if x is None:
            executed[l] = tuple((s, s) for s, _ in loop.range)
            continue
        executed[l] = x
        for arg in loop.args:
            if arg.mode.reads:
                needed[arg.dataset] = hull_ranges(needed.get(arg.dataset), arg.stencil.expand(x))
    return executed


def construct_rank_plan(chain, layout: RankLayout, rank: int, tile_sizes: Sequence[int]) -> TilingPlan:
    """Tiling plan for one rank.

    The tile grid covers the rank's owned share of the loops; the first and
    last tiles stretch to the rank's executed ranges, and tile ends are
    clamped to the loop's executed end, which leaves early loops empty in
    tiles that overshoot.
    """
    part = layout[rank]
    executed = rank_executed_ranges(chain, part)
    owned_ranges = [intersect_ranges(loop.range, part.owned_ext) for loop in chain.loops]
    config = compute_union_bounds(chain, tile_sizes, owned_ranges)
    plan = construct_plan(chain, config, loop_ranges=executed)
    logger.debug("rank %d plan %r executed=%s", rank, plan, [format_range(r) for r in executed])
    return plan


def compute_halo_depths(chain, part: RankPartition, executed: Sequence[Range],
                        fields: Mapping[str, Field]) -> Dict[str, HaloSpec]:
    """Exchange depth per dataset for one rank.

    A read is exposed when no earlier loop of the chain writes the point; it
    then needs the value from before the flush. Depth is how far exposed
    reads reach past the rank's owned storage. A dataset whose first access
    is a write covering its later reads has no exposed read and needs no
    exchange.
    """
    specs = {}
    for dataset in chain.datasets():
        f = fields[dataset]
        box = f.base_range
        written = np.zeros(range_shape(box), dtype=bool)
        exposed = np.zeros(range_shape(box), dtype=bool)
        for loop, x in zip(chain.loops, executed):
            args = [a for a in loop.args if a.dataset == dataset]
            if not args:
                continue
            if not range_is_empty(x):
                for arg in args:
                    if not arg.mode.reads:
                        continue
                    for point in arg.stencil.points:
                        sl = _slices(intersect_ranges(shift_range(x, point), box), box)
                        exposed[sl] |= ~written[sl]
            for arg in args:
                if arg.mode.writes:
                    written[_slices(intersect_ranges(loop.range, box), box)] = True

        own = part.owned_storage(f)
        depth_lo, depth_hi = [], []
        for d in range(len(box)):
            axes = tuple(i for i in range(len(box)) if i != d)
            profile = exposed.any(axis=axes) if axes else exposed
            idx = np.nonzero(profile)[0] + box[d][0]
            below = idx[idx < own[d][0]]
            above = idx[idx >= own[d][1]]
            depth_lo.append(int(own[d][0] - below.min()) if below.size else 0)
            depth_hi.append(int(above.max() - own[d][1] + 1) if above.size else 0)
        specs[dataset] = HaloSpec(dataset, tuple(depth_lo), tuple(depth_hi))
    return specs


def merge_halo_specs(per_rank: Sequence[Mapping[str, HaloSpec]]) -> Dict[str, HaloSpec]:
    """Depth per (dataset, dimension, side) is the maximum over ranks."""
    merged: Dict[str, HaloSpec] = {}
    for specs in per_rank:
        for name, spec in specs.items():
            merged[name] = merged[name].merge(spec) if name in merged else spec
    return merged


def _slices(rng: Range, box: Range) -> Tuple[slice, ...]:
    return tuple(slice(s - b, e - b) for (s, e), (b, _) in zip(rng, box))


def halo_strip(part: RankPartition, f: Field, spec: HaloSpec, d: int, side: int) -> Range:
    """Region a rank receives for one face.

    Exchange runs dimension by dimension: strips in dimension d span the halos
    already received in lower dimensions, so corner values travel with them.
    """
    own = part.owned_storage(f)
    depth = spec.depth(d, side)
    out = []
    for k, (s, e) in enumerate(own):
        if k == d:
            out.append((s - depth, s) if side == LOWER else (e, e + depth))
        elif k < d:
            lo = spec.depth_lo[k] if part.neighbors[k][LOWER] is not None else 0
            hi = spec.depth_hi[k] if part.neighbors[k][UPPER] is not None else 0
            out.append((s - lo, e + hi))
        else:
            out.append((s, e))
    return tuple(out)


def check_halo_specs(specs: Mapping[str, HaloSpec], layout: RankLayout, fields: Mapping[str, Field]):
    """Depths must fit in the neighbour's owned block and in the receiver's padding."""
    for name, spec in specs.items():
        f = fields[name]
        for part in layout:
            for d in range(part.dim):
                for side in (LOWER, UPPER):
                    depth = spec.depth(d, side)
                    src = part.neighbor(d, side)
                    if depth == 0 or src is None:
                        continue
                    s, e = layout[src].owned[d]
                    if depth > e - s:
                        raise DecompositionError(
                            f"dataset '{name}' needs a halo of depth {depth} in dimension {d}, "
                            f"but rank {src} owns only {e - s} points there"
                        )
                    pad = f.padding(d)[side]
                    if depth > pad:
                        raise HaloAllocationError(name, d, depth, pad)


def exchange_halos(local: Mapping[int, Mapping[str, Field]], specs: Mapping[str, HaloSpec],
                   layout: RankLayout, log: MessageLog):
    """Copy owned strips into neighbours' padding; one message per received face."""
    log.calls += 1
    if log.executing:
        log.calls_during_execution += 1
    dim = len(layout.grid)
    for d in range(dim):
        for name in sorted(specs):
            spec = specs[name]
            if not spec.needed:
                continue
            for part in layout:
                for side in (LOWER, UPPER):
                    src = part.neighbor(d, side)
                    if src is None or spec.depth(d, side) == 0:
                        continue
                    dst = local[part.rank][name]
                    strip = halo_strip(part, dst, spec, d, side)
                    dst.copy_region(local[src][name], strip)
                    log.record(src, range_points(strip) * dst.elem_bytes)


def received_regions(part: RankPartition, f: Field, spec: Optional[HaloSpec]) -> List[Range]:
    """Boxes of a rank's copy that hold valid pre-flush values after the exchange."""
    regions = [part.owned_storage(f)]
    if spec is None:
        return regions
    for d in range(part.dim):
        for side in (LOWER, UPPER):
            if part.neighbor(d, side) is not None and spec.depth(d, side):
                regions.append(halo_strip(part, f, spec, d, side))
    return regions


def partition_fields(fields: Mapping[str, Field], layout: RankLayout) -> Dict[int, Dict[str, Field]]:
    """Fresh per-rank copies: owned storage from the global fields, NaN elsewhere."""
    local: Dict[int, Dict[str, Field]] = {}
    for part in layout:
        copies = {}
        for name, f in fields.items():
            copy = Field(name, f.block, f.size, elem_bytes=f.elem_bytes, fill=np.nan,
                         base_range=part.local_extent(f))
            copy.copy_region(f, part.owned_storage(f))
            copies[name] = copy
        local[part.rank] = copies
    return local


def gather(local: Mapping[int, Mapping[str, Field]], fields: Mapping[str, Field], layout: RankLayout):
    for part in layout:
        for name, f in fields.items():
            f.copy_region(local[part.rank][name], part.owned_storage(f))


def _combine_rank_reports(chain, reports: Sequence[ExecutionReport], mode: str) -> ExecutionReport:
    """Per-loop statistics summed over ranks; reductions combined in rank order."""
    stats = [LoopStat(loop.loop_id, loop.name) for loop in chain.loops]
    values = {l.loop_id: l.reduction.identity for l in chain.loops if l.reduction}
    for report in reports:
        for stat in report.loop_stats:
            total = stats[stat.loop_id]
            total.seconds += stat.seconds
            total.bytes_moved += stat.bytes_moved
            total.calls += stat.calls
            total.points += stat.points
        for loop_id, value in report.reductions:
            values[loop_id] = chain.loops[loop_id].reduction.combine(values[loop_id], value)
    combined = ExecutionReport(mode=mode, loop_stats=stats, flushes=1, reductions=sorted(values.items()))
    combined.tile_count = max((r.tile_count for r in reports), default=0)
    combined.empty_ranges = sum(r.empty_ranges for r in reports)
    skews = [r.skew for r in reports if r.skew]
    if skews:
        combined.skew = tuple(max(s[d] for s in skews) for d in range(len(skews[0])))
    return combined


def get_rank_plans(chain, layout: RankLayout, tile_sizes: Sequence[int], fields: Mapping[str, Field],
                   cache: Optional[PlanCache] = None) -> Tuple[List[TilingPlan], int, float]:
    """Rank plans keyed by (signature, tile sizes, grid, rank); halo specs are cached with them.

    Returns the plans, how many were built and the seconds spent building.
    """
    cache = cache if cache is not None else PlanCache()
    tile_sizes = tuple(int(t) for t in tile_sizes)
    plans, built, seconds = [], 0, 0.0
    for part in layout:
        key = (chain.signature, tile_sizes, layout.grid, part.rank)
        plan, hit = cache.get_or_build(key, lambda: construct_rank_plan(chain, layout, part.rank, tile_sizes))
        if not hit:
            started = time.perf_counter()
            plan.halo_specs = compute_halo_depths(chain, part, plan.loop_ranges, fields)
            plan.build_seconds += time.perf_counter() - started
            built += 1
            seconds += plan.build_seconds
        plans.append(plan)
    return plans, built, seconds


def run_distributed(chain, layout: RankLayout, tile_sizes: Sequence[int], fields: Mapping[str, Field],
                    executor: Optional[TiledExecutor] = None, cache: Optional[PlanCache] = None) -> ExecutionReport:
    """Tiled flush over all ranks: one wide halo exchange, then communication-free tiles."""
    started = time.perf_counter()
    executor = executor or TiledExecutor()
    plans, built, plan_seconds = get_rank_plans(chain, layout, tile_sizes, fields, cache)

    local = partition_fields(fields, layout)
    for part, plan in zip(layout, plans):
        reference = {name: part.owned_storage(fields[name]) for name in fields}
        check_allocation(chain, plan.loop_ranges, local[part.rank], reference)

    specs = merge_halo_specs([plan.halo_specs for plan in plans])
    check_halo_specs(specs, layout, fields)
    log = MessageLog()
    exchange_halos(local, specs, layout, log)

    log.executing = True
    reports = [executor.execute_plan(plan, chain, local[part.rank], reduction_box=part.owned_ext,
                                     mode="distributed-tiled")
               for part, plan in zip(layout, plans)]
    log.executing = False
    gather(local, fields, layout)

    report = _combine_rank_reports(chain, reports, "distributed-tiled")
    report.tile_sizes = tuple(int(t) for t in tile_sizes)
    report.cache_hit = built == 0
    report.plans_built = built
    report.plan_seconds = plan_seconds
    report.messages_sent = log.messages
    report.bytes_sent = log.bytes
    report.rank_traffic = dict(log.per_rank)
    report.exchange_calls = log.calls
    report.total_seconds = time.perf_counter() - started
    if log.calls_during_execution:
        logger.error("%d halo exchanges happened during tile execution", log.calls_during_execution)
    logger.info("distributed flush: %d ranks, %d messages, %d bytes", len(layout), log.messages, log.bytes)
    return report


def run_distributed_untiled(chain, layout: RankLayout, fields: Mapping[str, Field],
                            executor: Optional[TiledExecutor] = None) -> ExecutionReport:
    """Loop-at-a-time baseline: halos are refreshed right before the loops that read them."""
    started = time.perf_counter()
    executor = executor or TiledExecutor()
    dim = len(layout.grid)
    local = partition_fields(fields, layout)
    log = MessageLog()
    sizes = elem_bytes_of(fields)
    valid: Dict[str, HaloSpec] = {name: no_halo(name, dim) for name in fields}
    stats = [LoopStat(loop.loop_id, loop.name) for loop in chain.loops]
    values = {l.loop_id: l.reduction.identity for l in chain.loops if l.reduction}

    for loop in chain.loops:
        for name in loop.datasets():
            reads = [a for a in loop.args if a.dataset == name and a.mode.reads]
            if not reads:
                continue
            want = HaloSpec(name, tuple(max(a.stencil.reach(d)[LOWER] for a in reads) for d in range(dim)),
                            tuple(max(a.stencil.reach(d)[UPPER] for a in reads) for d in range(dim)))
            current = valid[name]
            if all(w <= c for w, c in zip(want.depth_lo + want.depth_hi, current.depth_lo + current.depth_hi)):
                continue
            spec = want.merge(current)
            check_halo_specs({name: spec}, layout, fields)
            exchange_halos(local, {name: spec}, layout, log)
            valid[name] = spec

        stat = stats[loop.loop_id]
        for part in layout:
            rng = intersect_ranges(loop.range, part.owned_ext)
            if range_is_empty(rng):
                continue
            t0 = time.perf_counter()
            part_value = executor.run_loop(loop, rng, local[part.rank])
            stat.seconds += time.perf_counter() - t0
            stat.bytes_moved += estimate_bytes_moved(loop, rng, sizes)
            stat.calls += 1
            stat.points += range_points(rng)
            if part_value is not None:
                values[loop.loop_id] = loop.reduction.combine(values[loop.loop_id], part_value)

        for arg in loop.args:
            if arg.mode.writes:
                valid[arg.dataset] = no_halo(arg.dataset, dim)

    gather(local, fields, layout)
    report = ExecutionReport(mode="distributed-untiled", loop_stats=stats, flushes=1,
                             tile_count=1 if len(chain) else 0, reductions=sorted(values.items()))
    report.messages_sent = log.messages
    report.bytes_sent = log.bytes
    report.rank_traffic = dict(log.per_rank)
    report.exchange_calls = log.calls
    report.total_seconds = time.perf_counter() - started
    return report
