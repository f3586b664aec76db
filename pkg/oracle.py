"""Brute-force references used to check plans and executors.

Everything here is deliberately slow: point-by-point execution and
per-point bookkeeping. Only run it on small instances.
"""

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

import config
from mesh import (ArgAccessor, Field, Index, Range, hull_ranges, intersect_ranges, iter_points,
                  range_is_empty, range_shape, shift_range)

logger = logging.getLogger(__name__)

INITIAL = -1   # value present before the chain ran
POISONED = -2  # value never made available to this rank


class ViolationKind(str, Enum):
    READ_BEFORE_PRODUCE = "ReadBeforeProduce"
    READ_AFTER_OVERWRITE = "ReadAfterOverwrite"
    DOUBLE_WRITE = "DoubleWrite"
    COVERAGE_GAP = "CoverageGap"
    COVERAGE_OVERLAP = "CoverageOverlap"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    loop_id: int
    tile_id: Optional[int]
    point: Index
    dataset: Optional[str] = None
    rank: Optional[int] = None
    detail: str = ""

    def __str__(self):
        where = f"loop={self.loop_id} tile={self.tile_id} point={self.point}"
        if self.dataset is not None:
            where += f" dataset={self.dataset}"
        if self.rank is not None:
            where += f" rank={self.rank}"
        return f"{self.kind.value}: {where}" + (f" ({self.detail})" if self.detail else "")


class WriteCounter:
    """Write hook counting points written per (loop, dataset)."""

    def __init__(self):
        self.points: Counter = Counter()
        self.calls = 0
        # worker threads report chunks concurrently
        self._lock = threading.Lock()

    def __call__(self, loop_id: int, dataset: str, rng: Range):
        written = int(np.prod(range_shape(rng)))
        with self._lock:
            self.calls += 1
            self.points[(loop_id, dataset)] += written

    def reset(self):
        with self._lock:
            self.points.clear()
            self.calls = 0


def run_sequential(chain, fields: Mapping[str, Field]) -> List[Tuple[int, float]]:
    """Execute in place: loops in order, points in lexicographic order, one kernel call per point.

    Returns (loop_id, value) for every reducing loop.
    """
    reductions = []
    for loop in chain.loops:
        value = loop.reduction.identity if loop.reduction else None
        for point in iter_points(loop.range):
            rng = tuple((p, p + 1) for p in point)
            accessors = [ArgAccessor(fields[a.dataset], a, rng, loop.loop_id) for a in loop.args]
            result = loop.kernel(*accessors)
            if loop.reduction is not None:
                contribution = float(np.broadcast_to(np.asarray(result, dtype=np.float64), range_shape(rng))
                                     .reshape(-1)[0])
                value = loop.reduction.combine(value, contribution)
        if loop.reduction is not None:
            reductions.append((loop.loop_id, value))
    return reductions


def sequential_reference(chain, fields: Mapping[str, Field]) -> Dict[str, Field]:
    """The canonical result of a chain, computed on copies of the fields."""
    copies = {name: f.copy() for name, f in fields.items()}
    run_sequential(chain, copies)
    return copies


def max_abs_diff(a: Mapping[str, Field], b: Mapping[str, Field], names: Optional[Sequence[str]] = None) -> float:
    """Largest absolute difference over the domains of the named datasets (NaN counts as infinite)."""
    worst = 0.0
    for name in names or sorted(a):
        diff = np.abs(a[name].domain_values() - b[name].domain_values())
        if np.isnan(diff).any():
            return float("inf")
        if diff.size:
            worst = max(worst, float(diff.max()))
    return worst


def _schedule(plan) -> List[Tuple[int, int, Range]]:
    return [(t, l, plan.range_of(t, l)) for t in range(plan.num_tiles) for l in range(plan.num_loops)]


def _dataset_boxes(chain, schedule) -> Dict[str, Range]:
    boxes: Dict[str, Optional[Range]] = {}
    for loop in chain.loops:
        for arg in loop.args:
            boxes[arg.dataset] = hull_ranges(boxes.get(arg.dataset), arg.stencil.expand(loop.range))
    for _, l, rng in schedule:
        for arg in chain.loops[l].args:
            boxes[arg.dataset] = hull_ranges(boxes.get(arg.dataset), arg.stencil.expand(rng))
    return {name: box for name, box in boxes.items() if box is not None}


def _slices(rng: Range, box: Range) -> Tuple[slice, ...]:
    return tuple(slice(s - b, e - b) for (s, e), (b, _) in zip(rng, box))


def _points(mask: np.ndarray, origin: Range) -> List[Index]:
    return [tuple(int(i) + o for i, (o, _) in zip(idx, origin)) for idx in np.argwhere(mask)]


def validate_dependencies(plan, chain, initial_valid: Optional[Mapping[str, Sequence[Range]]] = None,
                          rank: Optional[int] = None) -> List[Violation]:
    """Simulate the tiled schedule and compare every read with sequential semantics.

    Each read should see the value written by the latest earlier loop in
    chain order (or the initial value). Reading an older version means the
    producer has not run yet; reading a newer one means a later loop already
    overwrote it. initial_valid limits where initial values exist (a rank's
    owned storage and received halos); reads elsewhere count as stale.
    """
    if not small_enough(chain):
        logger.warning("validating dependencies of a chain larger than %d points per dimension",
                       config.ORACLE_MAX_POINTS_PER_DIM)
    schedule = _schedule(plan)
    boxes = _dataset_boxes(chain, schedule)

    # expected writer per (loop, dataset, offset), sequential order
    last_writer = {name: np.full(range_shape(box), INITIAL, dtype=np.int64) for name, box in boxes.items()}
    expected: Dict[Tuple[int, int, Tuple[int, ...]], np.ndarray] = {}
    for loop in chain.loops:
        if not range_is_empty(loop.range):
            for i, arg in enumerate(loop.args):
                if arg.mode.reads:
                    for p in arg.stencil.points:
                        sl = _slices(shift_range(loop.range, p), boxes[arg.dataset])
                        expected[(loop.loop_id, i, p)] = last_writer[arg.dataset][sl].copy()
            for arg in loop.args:
                if arg.mode.writes:
                    last_writer[arg.dataset][_slices(loop.range, boxes[arg.dataset])] = loop.loop_id

    actual = {}
    for name, box in boxes.items():
        if initial_valid is None:
            actual[name] = np.full(range_shape(box), INITIAL, dtype=np.int64)
        else:
            arr = np.full(range_shape(box), POISONED, dtype=np.int64)
            for region in initial_valid.get(name, ()):
                sub = intersect_ranges(region, box)
                if not range_is_empty(sub):
                    arr[_slices(sub, box)] = INITIAL
            actual[name] = arr
    write_count = {}

    violations: List[Violation] = []
    for t, l, rng in schedule:
        loop = chain.loops[l]
        inside = intersect_ranges(rng, loop.range)
        if range_is_empty(inside):
            continue
        before: Dict[str, np.ndarray] = {}
        after: Dict[str, np.ndarray] = {}
        for i, arg in enumerate(loop.args):
            if not arg.mode.reads:
                continue
            box = boxes[arg.dataset]
            for p in arg.stencil.points:
                seen = actual[arg.dataset][_slices(shift_range(inside, p), box)]
                want = expected[(l, i, p)][_slices(inside, loop.range)]
                shape = seen.shape
                before.setdefault(arg.dataset, np.zeros(shape, dtype=bool))
                after.setdefault(arg.dataset, np.zeros(shape, dtype=bool))
                before[arg.dataset] |= seen < want
                after[arg.dataset] |= seen > want
        for name in before:
            for point in _points(before[name], inside):
                violations.append(Violation(ViolationKind.READ_BEFORE_PRODUCE, l, t, point, name, rank))
            for point in _points(after[name] & ~before[name], inside):
                violations.append(Violation(ViolationKind.READ_AFTER_OVERWRITE, l, t, point, name, rank))

        for arg in loop.args:
            if not arg.mode.writes:
                continue
            box = boxes[arg.dataset]
            sl = _slices(inside, box)
            key = (l, arg.dataset)
            if key not in write_count:
                write_count[key] = np.zeros(range_shape(box), dtype=np.int32)
            counts = write_count[key]
            for point in _points(counts[sl] > 0, inside):
                violations.append(Violation(ViolationKind.DOUBLE_WRITE, l, t, point, arg.dataset, rank))
            counts[sl] += 1
            actual[arg.dataset][sl] = l
    return violations


@dataclass(frozen=True)
class Exact:
    """Every loop's tile ranges partition its range."""


@dataclass(frozen=True)
class WithReplication:
    """Rank plans jointly cover every loop; a rank may stray outside its owned
    region by at most band[d] points in dimension d."""
    layout: object
    band: Optional[Tuple[int, ...]] = None


CoverageMode = Union[Exact, WithReplication]


def _coverage_counts(plan, chain, loop_id: int, box: Range) -> Tuple[np.ndarray, List[Violation]]:
    counts = np.zeros(range_shape(box), dtype=np.int32)
    overlaps = []
    for t in range(plan.num_tiles):
        rng = plan.range_of(t, loop_id)
        if range_is_empty(rng):
            continue
        sl = _slices(rng, box)
        for point in _points(counts[sl] > 0, rng):
            overlaps.append(Violation(ViolationKind.COVERAGE_OVERLAP, loop_id, t, point,
                                      detail="executed twice"))
        counts[sl] += 1
    return counts, overlaps


def _loop_box(plan, loop) -> Range:
    box = loop.range
    for t in range(plan.num_tiles):
        box = hull_ranges(box, plan.range_of(t, loop.loop_id)) or box
    return box


def validate_coverage(plan, chain, mode: Optional[CoverageMode] = None) -> List[Violation]:
    """Check that plans execute each loop's range exactly (or, across ranks, with bounded overlap).

    In replication mode, plan is a sequence of rank plans indexed by rank.
    """
    mode = mode if mode is not None else Exact()
    if isinstance(mode, WithReplication):
        return _validate_replicated(plan, chain, mode)

    violations = []
    for loop in chain.loops:
        box = _loop_box(plan, loop)
        counts, overlaps = _coverage_counts(plan, chain, loop.loop_id, box)
        violations.extend(overlaps)
        inside = np.zeros(counts.shape, dtype=bool)
        if not range_is_empty(loop.range):
            inside[_slices(loop.range, box)] = True
        for point in _points(inside & (counts == 0), box):
            violations.append(Violation(ViolationKind.COVERAGE_GAP, loop.loop_id, None, point))
        for point in _points(~inside & (counts > 0), box):
            violations.append(Violation(ViolationKind.COVERAGE_OVERLAP, loop.loop_id, None, point,
                                        detail="outside the loop range"))
    return violations


def _validate_replicated(plans, chain, mode: WithReplication) -> List[Violation]:
    layout = mode.layout
    dim = chain.dim
    if mode.band is not None:
        band = tuple(mode.band)
    else:
        reach = max((a.stencil.radius() for loop in chain.loops for a in loop.args), default=0)
        band = (len(chain) * reach,) * dim
    violations = []
    for loop in chain.loops:
        box = loop.range
        for plan in plans:
            box = hull_ranges(box, _loop_box(plan, loop)) or box
        covered = np.zeros(range_shape(box), dtype=bool)
        for part, plan in zip(layout, plans):
            counts, overlaps = _coverage_counts(plan, chain, loop.loop_id, box)
            violations.extend(replace_rank(v, part.rank) for v in overlaps)
            covered |= counts > 0
            allowed = tuple((s - b, e + b) for (s, e), b in zip(part.owned_ext, band))
            outside = counts > 0
            outside[_slices(intersect_ranges(allowed, box), box)] = False
            for point in _points(outside, box):
                violations.append(Violation(ViolationKind.COVERAGE_OVERLAP, loop.loop_id, None, point,
                                            rank=part.rank, detail=f"beyond replication band {band}"))
            stray = counts > 0
            if not range_is_empty(loop.range):
                stray[_slices(loop.range, box)] = False
            for point in _points(stray, box):
                violations.append(Violation(ViolationKind.COVERAGE_OVERLAP, loop.loop_id, None, point,
                                            rank=part.rank, detail="outside the loop range"))
        if not range_is_empty(loop.range):
            gap = ~covered[_slices(loop.range, box)]
            for point in _points(gap, loop.range):
                violations.append(Violation(ViolationKind.COVERAGE_GAP, loop.loop_id, None, point))
    return violations


def replace_rank(v: Violation, rank: int) -> Violation:
    return Violation(v.kind, v.loop_id, v.tile_id, v.point, v.dataset, rank, v.detail)


def check_monotone(plan) -> List[str]:
    """Per-dimension tile boundaries of every loop must never decrease."""
    problems = []
    for d, per_dim in enumerate(plan.dim_bounds):
        for l in range(plan.num_loops):
            for t in range(1, len(per_dim)):
                s_prev, e_prev = per_dim[t - 1][l]
                s, e = per_dim[t][l]
                if s != e_prev or e < s:
                    problems.append(f"loop={l} d={d} tile {t - 1}->{t}: [{s_prev},{e_prev}) then [{s},{e})")
    return problems


def small_enough(chain) -> bool:
    """Validators are limited to small instances."""
    return all(e - s <= config.ORACLE_MAX_POINTS_PER_DIM for loop in chain.loops for s, e in loop.range)
