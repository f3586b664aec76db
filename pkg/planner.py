"""Run-time dependency analysis that turns a loop chain into a skewed tiling plan.

The chain is swept backwards, one dimension at a time. For every tile the
end index of each loop is pushed out far enough that later loops in the same
tile find the values they read already computed (read-after-write), and that
no earlier-tile read is clobbered by a write the tiling reorders before it
(write-after-read/write). Start indices are the previous tile's end, so each
loop's range is partitioned exactly. Multi-dimensional tiles are the
Cartesian product of the per-dimension answers.
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

from errors import HaloAllocationError, PlanError
from mesh import Field, Range, range_contains, range_is_empty

logger = logging.getLogger(__name__)

Bounds = Tuple[int, int]


@dataclass(frozen=True)
class PlanConfig:
    tile_sizes: Tuple[int, ...]
    num_tiles: Tuple[int, ...]
    union_bounds: Range

    @property
    def total_tiles(self) -> int:
        return math.prod(self.num_tiles)

    def default_end(self, d: int, t: int) -> int:
        """Untouched tile boundary: union start plus (t + 1) tile widths."""
        return self.union_bounds[d][0] + (t + 1) * self.tile_sizes[d]


def compute_union_bounds(chain, tile_sizes: Sequence[int],
                         loop_ranges: Optional[Sequence[Range]] = None) -> PlanConfig:
    """Union of the loops' index sets and the tile grid laid over it."""
    ranges = [loop.range for loop in chain.loops] if loop_ranges is None else list(loop_ranges)
    if not ranges:
        raise PlanError("cannot tile an empty loop chain")
    dim = len(ranges[0])
    tile_sizes = tuple(int(ts) for ts in tile_sizes)
    if len(tile_sizes) != dim:
        raise PlanError(f"need {dim} tile sizes, got {len(tile_sizes)}")
    if any(ts <= 0 for ts in tile_sizes):
        raise PlanError(f"tile sizes must be positive, got {tile_sizes}")

    # loops with nothing to execute do not widen the tile grid
    live = [r for r in ranges if not range_is_empty(r)] or ranges
    union = tuple((min(r[d][0] for r in live), max(r[d][1] for r in live)) for d in range(dim))
    num_tiles = tuple(max(1, (e - s - 1) // ts + 1) for (s, e), ts in zip(union, tile_sizes))
    return PlanConfig(tile_sizes=tile_sizes, num_tiles=num_tiles, union_bounds=union)


class DependencyExtents:
    """Running read/write hulls per dataset, dimension and tile coordinate.

    Entries start empty (start=+inf, end=-inf) and only ever widen.
    """

    def __init__(self, datasets: Sequence[str], num_tiles: Sequence[int]):
        self.num_tiles = tuple(num_tiles)
        self._read = {a: [[[math.inf, -math.inf] for _ in range(n)] for n in num_tiles] for a in datasets}
        self._write = {a: [[[math.inf, -math.inf] for _ in range(n)] for n in num_tiles] for a in datasets}

    @staticmethod
    def _widen(entry, start, end):
        entry[0] = min(entry[0], start)
        entry[1] = max(entry[1], end)

    def widen_read(self, dataset: str, d: int, t: int, start: int, end: int):
        self._widen(self._read[dataset][d][t], start, end)

    def widen_write(self, dataset: str, d: int, t: int, start: int, end: int):
        self._widen(self._write[dataset][d][t], start, end)

    def read_bounds(self, dataset: str, d: int, t: int) -> Tuple[float, float]:
        return tuple(self._read[dataset][d][t])

    def write_bounds(self, dataset: str, d: int, t: int) -> Tuple[float, float]:
        return tuple(self._write[dataset][d][t])

    def datasets(self) -> Tuple[str, ...]:
        return tuple(self._read)


class TilingPlan:
    """Per-tile, per-loop iteration ranges for one chain signature.

    Plans are immutable once built and can be shared between threads.
    Tiles are numbered by the lexicographic order of their per-dimension
    coordinates (dimension 0 most significant), which is also execution order.
    """

    def __init__(self, config: PlanConfig, dim_bounds: Sequence[Sequence[Sequence[Bounds]]],
                 signature: str, extents: Optional[DependencyExtents] = None,
                 loop_ranges: Optional[Sequence[Range]] = None, build_seconds: float = 0.0):
        self.config = config
        self.dim_bounds = tuple(tuple(tuple(tuple(b) for b in per_tile) for per_tile in per_dim)
                                for per_dim in dim_bounds)
        self.signature = signature
        self.extents = extents
        self.loop_ranges = tuple(loop_ranges) if loop_ranges is not None else None
        self.build_seconds = build_seconds
        self.halo_specs = None
        self.tile_coords: List[Tuple[int, ...]] = list(
            itertools.product(*(range(n) for n in config.num_tiles)))
        self._ranges = None

    @property
    def dim(self) -> int:
        return len(self.config.num_tiles)

    @property
    def num_tiles(self) -> int:
        return len(self.tile_coords)

    @property
    def num_loops(self) -> int:
        return len(self.dim_bounds[0][0]) if self.dim_bounds and self.dim_bounds[0] else 0

    def range_of(self, tile: int, loop: int) -> Range:
        coords = self.tile_coords[tile]
        return tuple(self.dim_bounds[d][coords[d]][loop] for d in range(self.dim))

    @property
    def ranges(self) -> List[List[Range]]:
        """ranges[tile][loop]"""
        if self._ranges is None:
            self._ranges = [[self.range_of(t, l) for l in range(self.num_loops)]
                            for t in range(self.num_tiles)]
        return self._ranges

    def executed_range(self, loop: int) -> Range:
        """Hull of a loop's ranges over all tiles."""
        return tuple((per_dim[0][loop][0], per_dim[-1][loop][1]) for per_dim in self.dim_bounds)

    def with_dim_range(self, d: int, t: int, loop: int, bounds: Bounds) -> "TilingPlan":
        """Copy of the plan with one per-dimension range replaced (fault seeding)."""
        dim_bounds = [list(list(per_tile) for per_tile in per_dim) for per_dim in self.dim_bounds]
        dim_bounds[d][t][loop] = tuple(bounds)
        return TilingPlan(self.config, dim_bounds, self.signature, self.extents, self.loop_ranges)

    def skew(self) -> Tuple[int, ...]:
        """Largest distance any non-empty tile end reaches past its default boundary."""
        out = []
        for d, per_dim in enumerate(self.dim_bounds):
            worst = 0
            for t, per_tile in enumerate(per_dim):
                boundary = self.config.default_end(d, t)
                for s, e in per_tile:
                    if e > s and t < len(per_dim) - 1:
                        worst = max(worst, e - boundary)
            out.append(worst)
        return tuple(out)

    def empty_ranges(self) -> int:
        return sum(1 for row in self.ranges for rng in row if range_is_empty(rng))

    def dump(self) -> str:
        """One line per (tile, loop, dimension), tiles in execution order."""
        lines = []
        for t in range(self.num_tiles):
            for l in range(self.num_loops):
                for d, (s, e) in enumerate(self.range_of(t, l)):
                    lines.append(f"tile={t} loop={l} d={d} [{s},{e})")
        return "\n".join(lines) + ("\n" if lines else "")

    def __eq__(self, other):
        if not isinstance(other, TilingPlan):
            return NotImplemented
        return (self.config == other.config and self.dim_bounds == other.dim_bounds
                and self.signature == other.signature)

    def __hash__(self):
        return hash((self.config, self.dim_bounds, self.signature))

    def __repr__(self):
        return (f"TilingPlan(tiles={self.config.num_tiles}, sizes={self.config.tile_sizes}, "
                f"loops={self.num_loops}, signature={self.signature[:10]})")


def _plan_dimension(chain, d: int, config: PlanConfig, loop_ranges: Sequence[Range],
                    extents: DependencyExtents) -> List[List[Bounds]]:
    """Tile boundaries of every loop along dimension d, indexed [tile][loop]."""
    num_tiles = config.num_tiles[d]
    tile_size = config.tile_sizes[d]
    origin = config.union_bounds[d][0]
    loops = chain.loops
    bounds: List[List[Optional[Bounds]]] = [[None] * len(loops) for _ in range(num_tiles)]

    for l in reversed(range(len(loops))):
        loop = loops[l]
        start_l, end_l = loop_ranges[l][d]
        if range_is_empty(loop_ranges[l]):
            # a loop with nothing to do gets empty ranges and leaves no dependencies
            for t in range(num_tiles):
                bounds[t][l] = (start_l, start_l)
            continue

        # last non-empty tile: the last one whose default start lies before end_l
        last = num_tiles - 1
        while last > 0 and origin + last * tile_size >= end_l:
            last -= 1

        raw: List[int] = []
        for t in range(num_tiles):
            if t >= last:
                end = end_l
            else:
                end = -math.inf
                # satisfy read-after-write dependencies
                for arg in loop.args:
                    if arg.mode.writes:
                        end = min(end_l, max(end, extents.read_bounds(arg.dataset, d, t)[1]))
                # satisfy write-after-read/write dependencies
                for arg in loop.args:
                    m = arg.stencil.min_offset[d]
                    end = min(end_l, max(end, extents.write_bounds(arg.dataset, d, t)[1] - m))
                # default to end index at tile size
                if end == -math.inf:
                    end = min(end_l, config.default_end(d, t))
                if raw:
                    end = max(end, raw[-1])
            raw.append(int(end))

        start = start_l
        for t in range(num_tiles):
            stored_end = max(start_l, raw[t])
            bounds[t][l] = (start, stored_end)
            for arg in loop.args:
                if arg.mode.reads:
                    extents.widen_read(arg.dataset, d, t, start + arg.stencil.min_offset[d],
                                       raw[t] + arg.stencil.max_offset[d])
                if arg.mode.writes:
                    extents.widen_write(arg.dataset, d, t, start, raw[t])
            start = stored_end

    return bounds


def construct_plan(chain, config: PlanConfig, loop_ranges: Optional[Sequence[Range]] = None,
                   fields: Optional[Mapping[str, Field]] = None) -> TilingPlan:
    """Build the tiling plan for a chain.

    loop_ranges replaces the loops' own ranges (rank-local executed ranges in
    distributed mode); when fields are given the allocation is verified first.
    """
    started = time.perf_counter()
    ranges = [loop.range for loop in chain.loops] if loop_ranges is None else list(loop_ranges)
    if fields is not None:
        check_allocation(chain, ranges, fields)

    extents = DependencyExtents(chain.datasets(), config.num_tiles)
    dim_bounds = [_plan_dimension(chain, d, config, ranges, extents)
                  for d in range(len(config.num_tiles))]
    plan = TilingPlan(config, dim_bounds, chain.signature, extents, ranges,
                      build_seconds=time.perf_counter() - started)
    logger.debug("built plan %r in %.6fs, skew=%s", plan, plan.build_seconds, plan.skew())
    return plan


def check_allocation(chain, loop_ranges: Sequence[Range], fields: Mapping[str, Field],
                     reference: Optional[Mapping[str, Range]] = None):
    """Every stencil access over the given ranges must stay inside allocated storage.

    reference gives, per dataset, the box the padding is measured from
    (the domain by default).
    """
    for loop, rng in zip(chain.loops, loop_ranges):
        if range_is_empty(rng):
            continue
        for arg in loop.args:
            f = fields[arg.dataset]
            needed = arg.stencil.expand(rng)
            if range_contains(f.base_range, needed):
                continue
            ref = f.domain if reference is None else reference[arg.dataset]
            for d, ((ns, ne), (bs, be), (rs, re)) in enumerate(zip(needed, f.base_range, ref)):
                if ns < bs:
                    raise HaloAllocationError(arg.dataset, d, rs - ns, rs - bs)
                if ne > be:
                    raise HaloAllocationError(arg.dataset, d, ne - re, be - re)


class PlanCache:
    """Plans keyed by chain signature and tile sizes (plus any extra key)."""

    def __init__(self):
        self._plans: Dict[Hashable, TilingPlan] = {}
        self.builds = 0
        self.hits = 0
        self.build_seconds = 0.0

    def get_or_build(self, key: Hashable, builder: Callable[[], TilingPlan]) -> Tuple[TilingPlan, bool]:
        plan = self._plans.get(key)
        if plan is not None:
            self.hits += 1
            logger.debug("plan cache hit for %s", key)
            return plan, True
        started = time.perf_counter()
        plan = builder()
        self.build_seconds += time.perf_counter() - started
        self.builds += 1
        self._plans[key] = plan
        logger.info("plan cache miss: built %r", plan)
        return plan, False

    def plans(self) -> List[TilingPlan]:
        return list(self._plans.values())

    def items(self):
        return list(self._plans.items())

    def clear(self):
        self._plans.clear()

    def __len__(self):
        return len(self._plans)

    def __contains__(self, key):
        return key in self._plans


def get_or_build_plan(chain, tile_sizes: Sequence[int], cache: PlanCache,
                      fields: Optional[Mapping[str, Field]] = None) -> Tuple[TilingPlan, bool]:
    """Cached plan for (signature, tile_sizes); returns (plan, cache_hit)."""
    tile_sizes = tuple(int(ts) for ts in tile_sizes)

    def build():
        return construct_plan(chain, compute_union_bounds(chain, tile_sizes), fields=fields)

    return cache.get_or_build((chain.signature, tile_sizes), build)
