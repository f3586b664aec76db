"""Lazy loop queue and the user-facing runtime.

par_loop records loops instead of running them. The queue is flushed as a
loop chain when the caller asks for it or when a reduction result is
fetched, and the chain is then executed in the runtime's flush mode.
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import config
import dist_sim
import oracle
from errors import MeshError, ReductionError
from executor import ExecutionReport, TiledExecutor
from mesh import (ArgSpec, Block, Field, LoopRecord, Range, ReductionSpec, Stencil, WriteHook,
                  declare_stencil, format_range, hull_ranges, kernel_key, make_range)
from planner import PlanCache, TilingPlan, get_or_build_plan
from tile_sizer import auto_tile_size, sizer_input_for_chain

logger = logging.getLogger(__name__)


def chain_signature(loops: Sequence[LoopRecord]) -> str:
    """Hash of everything plan geometry depends on, in chain order."""
    digest = hashlib.sha1()
    for loop in loops:
        args = tuple((a.dataset, a.stencil.points, a.mode.value) for a in loop.args)
        reduction = loop.reduction.op if loop.reduction else None
        digest.update(repr((kernel_key(loop.kernel), loop.range, args, reduction)).encode())
    return digest.hexdigest()


@dataclass(frozen=True)
class LoopChain:
    loops: Tuple[LoopRecord, ...]
    signature: str = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "loops", tuple(self.loops))
        object.__setattr__(self, "signature", chain_signature(self.loops))

    def __len__(self) -> int:
        return len(self.loops)

    def __iter__(self) -> Iterator[LoopRecord]:
        return iter(self.loops)

    @property
    def dim(self) -> int:
        return self.loops[0].dim if self.loops else 0

    def datasets(self) -> Tuple[str, ...]:
        """Datasets in order of first access."""
        return tuple(dict.fromkeys(a.dataset for loop in self.loops for a in loop.args))

    def prefix(self, count: int) -> "LoopChain":
        return LoopChain(self.loops[:count])


# Flush modes

@dataclass(frozen=True)
class Untiled:
    name = "untiled"


@dataclass(frozen=True)
class Tiled:
    tile_sizes: Tuple[int, ...]
    name = "tiled"


@dataclass(frozen=True)
class TiledAuto:
    name = "tiled-auto"


@dataclass(frozen=True)
class Distributed:
    """Simulated ranks; tiled when tile sizes are given or auto is set."""
    grid: Tuple[int, ...]
    tile_sizes: Optional[Tuple[int, ...]] = None
    auto: bool = False

    @property
    def tiled(self) -> bool:
        return self.tile_sizes is not None or self.auto

    @property
    def name(self) -> str:
        return "distributed-tiled" if self.tiled else "distributed-untiled"


@dataclass(frozen=True)
class Sequential:
    """Point-by-point reference execution."""
    name = "sequential"


FlushMode = Union[Untiled, Tiled, TiledAuto, Distributed, Sequential]


@dataclass(frozen=True)
class ReductionHandle:
    id: int
    loop_name: str


class StencilRuntime:
    """Declarations, the lazy queue and the flush machinery for one block."""

    def __init__(self, block: Block, mode: Optional[FlushMode] = None, threads: Optional[int] = None,
                 cache_kb: Optional[int] = None, flush_whole_queue_on_fetch: Optional[bool] = None,
                 skew_allowance: Optional[int] = None, write_hook: Optional[WriteHook] = None):
        self.block = block
        self.mode: FlushMode = mode if mode is not None else Untiled()
        self.threads = threads if threads is not None else config.DEFAULT_THREADS
        self.cache_kb = cache_kb if cache_kb is not None else config.DEFAULT_CACHE_KB
        self.flush_whole_queue_on_fetch = (config.FLUSH_WHOLE_QUEUE_ON_FETCH
                                           if flush_whole_queue_on_fetch is None else flush_whole_queue_on_fetch)
        self.skew_allowance = config.SKEW_ALLOWANCE if skew_allowance is None else skew_allowance
        self.fields: Dict[str, Field] = {}
        self.stencils: List[Stencil] = []
        self.plan_cache = PlanCache()
        self.rank_plan_cache = PlanCache()
        self.reports: List[ExecutionReport] = []
        self.executor = TiledExecutor(self.threads, write_hook)
        self._pending: List[LoopRecord] = []
        self._pending_handles: List[Optional[int]] = []
        self._results: Dict[int, float] = {}
        self._consumed: set = set()
        self._next_handle = 0
        self._layouts: Dict[Tuple[int, ...], dist_sim.RankLayout] = {}
        self.last_plan: Optional[TilingPlan] = None

    # Declarations

    def decl_stencil(self, points, name: str = "") -> Stencil:
        stencil = declare_stencil(self.block.dim, points, name)
        self.stencils.append(stencil)
        return stencil

    def decl_dat(self, name: str, size: Sequence[int], elem_bytes: int = config.ELEM_BYTES,
                 fill: float = 0.0, padding=None) -> Field:
        """Declare a dataset on the block.

        Default padding is the widest declared stencil reach plus the skew
        allowance, on every face.
        """
        if name in self.fields:
            raise MeshError(f"dataset '{name}' is already declared")
        if padding is None:
            reach = max((s.radius() for s in self.stencils), default=0)
            padding = reach + self.skew_allowance
        f = Field(name, self.block, size, padding=padding, elem_bytes=elem_bytes, fill=fill)
        self.fields[name] = f
        return f

    @property
    def domain(self) -> Range:
        box = None
        for f in self.fields.values():
            box = hull_ranges(box, f.domain)
        if box is None:
            raise MeshError(f"block '{self.block.name}' has no datasets")
        return box

    # Queue

    @property
    def pending(self) -> Tuple[LoopRecord, ...]:
        return tuple(self._pending)

    def par_loop(self, kernel: Callable, rng, args: Sequence[ArgSpec],
                 reduction: Union[None, str, ReductionSpec] = None,
                 block: Optional[Block] = None) -> Optional[ReductionHandle]:
        """Record a loop; nothing runs until the queue is flushed."""
        if block is not None and block != self.block:
            raise MeshError(f"loop is on block '{block.name}', runtime serves '{self.block.name}'")
        rng = make_range(rng)
        if len(rng) != self.block.dim:
            raise MeshError(f"range {format_range(rng)} does not match the {self.block.dim}D block")
        if not args:
            raise MeshError("a loop needs at least one dataset argument")
        for arg in args:
            if arg.dataset not in self.fields:
                raise MeshError(f"dataset '{arg.dataset}' is not declared on block '{self.block.name}'")
            if arg.stencil.dim != self.block.dim:
                raise MeshError(f"stencil {arg.stencil.points} does not match the {self.block.dim}D block")
        if isinstance(reduction, str):
            reduction = ReductionSpec(reduction)

        record = LoopRecord(loop_id=len(self._pending), kernel=kernel, range=rng,
                            args=tuple(args), reduction=reduction)
        self._pending.append(record)
        if reduction is None:
            self._pending_handles.append(None)
            return None
        handle = ReductionHandle(self._next_handle, record.name)
        self._next_handle += 1
        self._pending_handles.append(handle.id)
        return handle

    def flush(self, mode: Optional[FlushMode] = None) -> ExecutionReport:
        """Execute every queued loop."""
        return self._flush_prefix(len(self._pending), mode)

    def fetch_reduction(self, handle: ReductionHandle) -> float:
        """Reduction value, flushing the queue up to the reducing loop first if needed."""
        if handle.id in self._consumed:
            raise ReductionError(f"reduction {handle.id} ({handle.loop_name}) was already fetched")
        if handle.id not in self._results:
            if handle.id not in self._pending_handles:
                raise ReductionError(f"unknown reduction handle {handle.id}")
            position = self._pending_handles.index(handle.id)
            count = len(self._pending) if self.flush_whole_queue_on_fetch else position + 1
            self._flush_prefix(count, None)
        self._consumed.add(handle.id)
        return self._results.pop(handle.id)

    def _flush_prefix(self, count: int, mode: Optional[FlushMode]) -> ExecutionReport:
        mode = mode if mode is not None else self.mode
        if count == 0:
            return ExecutionReport(mode=mode.name)
        loops = self._pending[:count]
        handles = self._pending_handles[:count]
        chain = LoopChain(loops)
        logger.debug("flushing %d of %d queued loops (%s)", count, len(self._pending), mode.name)

        report = self.execute(chain, mode)

        for loop_id, value in report.reductions:
            if handles[loop_id] is not None:
                self._results[handles[loop_id]] = value
        self._pending = [replace(r, loop_id=i) for i, r in enumerate(self._pending[count:])]
        self._pending_handles = self._pending_handles[count:]
        self.reports.append(report)
        return report

    # Execution

    def auto_tile_sizes(self, chain: LoopChain) -> Tuple[int, ...]:
        inp = sizer_input_for_chain(chain, self.fields, self.cache_kb * 1024, self.threads)
        return auto_tile_size(inp)

    def layout(self, grid: Sequence[int]) -> dist_sim.RankLayout:
        grid = tuple(int(g) for g in grid)
        if grid not in self._layouts:
            self._layouts[grid] = dist_sim.decompose(self.domain, grid)
        return self._layouts[grid]

    def execute(self, chain: LoopChain, mode: FlushMode) -> ExecutionReport:
        """Run a chain in the given mode against the runtime's fields."""
        started = time.perf_counter()
        if isinstance(mode, Sequential):
            reductions = oracle.run_sequential(chain, self.fields)
            report = ExecutionReport(mode=mode.name, flushes=1, reductions=reductions)
        elif isinstance(mode, Untiled):
            report = self.executor.execute_untiled(chain, self.fields)
        elif isinstance(mode, (Tiled, TiledAuto)):
            tile_sizes = mode.tile_sizes if isinstance(mode, Tiled) else self.auto_tile_sizes(chain)
            plan, hit = get_or_build_plan(chain, tile_sizes, self.plan_cache, self.fields)
            self.last_plan = plan
            report = self.executor.execute_plan(plan, chain, self.fields, mode=mode.name)
            report.cache_hit = hit
            report.plans_built = 0 if hit else 1
            report.plan_seconds = 0.0 if hit else plan.build_seconds
        elif isinstance(mode, Distributed):
            layout = self.layout(mode.grid)
            if mode.tiled:
                tile_sizes = mode.tile_sizes or self.auto_tile_sizes(chain)
                report = dist_sim.run_distributed(chain, layout, tile_sizes, self.fields,
                                                  self.executor, self.rank_plan_cache)
            else:
                report = dist_sim.run_distributed_untiled(chain, layout, self.fields, self.executor)
        else:
            raise MeshError(f"unknown flush mode {mode!r}")
        report.total_seconds = time.perf_counter() - started
        return report

    def total_report(self) -> ExecutionReport:
        """All flushes so far folded into one report."""
        total = ExecutionReport(mode=self.mode.name)
        for report in self.reports:
            total.merge(report)
        return total

    def close(self):
        self.executor.close()
