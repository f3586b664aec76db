"""Structured-mesh data model: blocks, ranges, stencils, datasets and loop records."""

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

import config
from errors import FieldBoundsError, MeshError

Index = Tuple[int, ...]
Range = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Block:
    name: str
    dim: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise MeshError(f"block '{self.name}' must be 1, 2 or 3 dimensional, got {self.dim}")


# Ranges are half-open [start, end) per dimension.

def make_range(bounds: Sequence[Sequence[int]]) -> Range:
    """Build a validated range from (start, end) pairs."""
    rng = tuple((int(s), int(e)) for s, e in bounds)
    for d, (s, e) in enumerate(rng):
        if s > e:
            raise MeshError(f"range start {s} > end {e} in dimension {d}")
    return rng


def range_shape(rng: Range) -> Tuple[int, ...]:
    return tuple(max(0, e - s) for s, e in rng)


def range_points(rng: Range) -> int:
    return int(np.prod(range_shape(rng), dtype=np.int64)) if rng else 0


def range_is_empty(rng: Range) -> bool:
    return any(e <= s for s, e in rng)


def shift_range(rng: Range, offset: Sequence[int]) -> Range:
    return tuple((s + o, e + o) for (s, e), o in zip(rng, offset))


def intersect_ranges(a: Range, b: Range) -> Range:
    """Intersection; an empty result keeps start == end."""
    out = []
    for (sa, ea), (sb, eb) in zip(a, b):
        s = max(sa, sb)
        e = min(ea, eb)
        out.append((s, max(s, e)))
    return tuple(out)


def hull_ranges(a: Optional[Range], b: Optional[Range]) -> Optional[Range]:
    """Smallest box containing both; empty or missing inputs are ignored."""
    if a is None or range_is_empty(a):
        return b if b is not None and not range_is_empty(b) else None
    if b is None or range_is_empty(b):
        return a
    return tuple((min(sa, sb), max(ea, eb)) for (sa, ea), (sb, eb) in zip(a, b))


def range_contains(outer: Range, inner: Range) -> bool:
    if range_is_empty(inner):
        return True
    return all(so <= si and ei <= eo for (so, eo), (si, ei) in zip(outer, inner))


def iter_points(rng: Range) -> Iterator[Index]:
    """Grid points of a range in lexicographic order."""
    return itertools.product(*(range(s, e) for s, e in rng))


def format_range(rng: Range) -> str:
    return "x".join(f"[{s},{e})" for s, e in rng)


class AccessMode(Enum):
    READ = "read"
    WRITE = "write"
    RW = "rw"
    INC = "inc"

    @property
    def reads(self) -> bool:
        # Increment is analysed as read-write
        return self is not AccessMode.WRITE

    @property
    def writes(self) -> bool:
        return self is not AccessMode.READ

    @property
    def bytes_weight(self) -> int:
        return 2 if self in (AccessMode.RW, AccessMode.INC) else 1


@dataclass(frozen=True)
class Stencil:
    dim: int
    points: Tuple[Index, ...]
    name: str = field(default="", compare=False)
    min_offset: Index = field(init=False, compare=False)
    max_offset: Index = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "min_offset",
                           tuple(min(p[d] for p in self.points) for d in range(self.dim)))
        object.__setattr__(self, "max_offset",
                           tuple(max(p[d] for p in self.points) for d in range(self.dim)))

    @property
    def is_identity(self) -> bool:
        return self.points == ((0,) * self.dim,)

    def reach(self, d: int) -> Tuple[int, int]:
        """Halo depth this stencil needs below and above a range in dimension d."""
        return max(0, -self.min_offset[d]), max(0, self.max_offset[d])

    def radius(self) -> int:
        return max(max(abs(v) for v in self.min_offset), max(abs(v) for v in self.max_offset))

    def expand(self, rng: Range) -> Range:
        """Range of points touched when applying the stencil over rng."""
        return tuple((s + lo, e + hi) for (s, e), lo, hi in zip(rng, self.min_offset, self.max_offset))


def declare_stencil(dim: int, points: Sequence[Union[int, Sequence[int]]], name: str = "") -> Stencil:
    """Declare a stencil from its offset vectors (ints are accepted in 1D)."""
    if not points:
        raise MeshError("stencil needs at least one point")
    normalized = []
    for p in points:
        vec = (int(p),) if isinstance(p, (int, np.integer)) else tuple(int(v) for v in p)
        if len(vec) != dim:
            raise MeshError(f"stencil point {vec} does not have {dim} entries")
        normalized.append(vec)
    return Stencil(dim=dim, points=tuple(sorted(set(normalized))), name=name)


def identity_stencil(dim: int) -> Stencil:
    return declare_stencil(dim, [(0,) * dim], name=f"S{dim}D_00")


_REDUCTION_OPS = {
    "sum": (0.0, np.sum, lambda a, b: a + b),
    "min": (float("inf"), np.min, min),
    "max": (float("-inf"), np.max, max),
}


@dataclass(frozen=True)
class ReductionSpec:
    op: str = "sum"

    def __post_init__(self):
        if self.op not in _REDUCTION_OPS:
            raise MeshError(f"unsupported reduction '{self.op}' (use sum, min or max)")

    @property
    def identity(self) -> float:
        return _REDUCTION_OPS[self.op][0]

    def fold(self, values: np.ndarray) -> float:
        if values.size == 0:
            return self.identity
        return float(_REDUCTION_OPS[self.op][1](values))

    def combine(self, acc: float, value: float) -> float:
        return _REDUCTION_OPS[self.op][2](acc, value)


@dataclass(frozen=True)
class ArgSpec:
    dataset: str
    stencil: Stencil
    mode: AccessMode

    def __post_init__(self):
        if self.mode.writes and not self.stencil.is_identity:
            raise MeshError(
                f"dataset '{self.dataset}' is {self.mode.value} through stencil "
                f"{self.stencil.points}; written arguments must use the identity stencil"
            )


def arg_dat(dataset: Union[str, "Field"], stencil: Stencil, mode: AccessMode) -> ArgSpec:
    dataset_id = dataset.id if isinstance(dataset, Field) else dataset
    return ArgSpec(dataset=dataset_id, stencil=stencil, mode=mode)


def kernel_key(kernel: Callable) -> str:
    module = getattr(kernel, "__module__", None) or ""
    name = getattr(kernel, "__qualname__", None) or getattr(kernel, "__name__", None) or repr(type(kernel))
    return f"{module}.{name}" if module else name


@dataclass(frozen=True)
class LoopRecord:
    """One recorded parallel loop.

    The kernel must be insensitive to the order in which grid points are
    visited; the runtime relies on this but cannot check it.
    """
    loop_id: int
    kernel: Callable
    range: Range
    args: Tuple[ArgSpec, ...]
    reduction: Optional[ReductionSpec] = None

    @property
    def name(self) -> str:
        return getattr(self.kernel, "__name__", kernel_key(self.kernel))

    @property
    def dim(self) -> int:
        return len(self.range)

    def datasets(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(a.dataset for a in self.args))


def _normalize_padding(padding, dim: int) -> Tuple[Tuple[int, int], ...]:
    if isinstance(padding, (int, np.integer)):
        return tuple((int(padding), int(padding)) for _ in range(dim))
    pads = []
    for p in padding:
        if isinstance(p, (int, np.integer)):
            pads.append((int(p), int(p)))
        else:
            lo, hi = p
            pads.append((int(lo), int(hi)))
    if len(pads) != dim:
        raise MeshError(f"padding needs {dim} entries, got {len(pads)}")
    return tuple(pads)


class Field:
    """Dataset storage: float64 values over the domain plus halo padding.

    Coordinates are global mesh indices; the domain is [0, size_d) and the
    allocated extent (base_range) adds padding on every face.
    """

    def __init__(self, dataset_id: str, block: Block, size: Sequence[int], padding=0,
                 elem_bytes: int = config.ELEM_BYTES, fill: float = 0.0,
                 base_range: Optional[Range] = None):
        if len(size) != block.dim:
            raise MeshError(f"dataset '{dataset_id}' has {len(size)} extents on a {block.dim}D block")
        self.id = dataset_id
        self.block = block
        self.elem_bytes = int(elem_bytes)
        self.domain: Range = make_range([(0, int(n)) for n in size])
        if base_range is None:
            pads = _normalize_padding(padding, block.dim)
            base_range = tuple((s - lo, e + hi) for (s, e), (lo, hi) in zip(self.domain, pads))
        self.base_range: Range = make_range(base_range)
        self.values = np.full(range_shape(self.base_range), fill, dtype=np.float64, order="F")

    @property
    def dim(self) -> int:
        return self.block.dim

    @property
    def size(self) -> Tuple[int, ...]:
        return range_shape(self.domain)

    def padding(self, d: int) -> Tuple[int, int]:
        """Allocated depth below and above the domain in dimension d."""
        (bs, be), (ds, de) = self.base_range[d], self.domain[d]
        return ds - bs, be - de

    def _slices(self, rng: Range) -> Tuple[slice, ...]:
        return tuple(slice(s - b, e - b) for (s, e), (b, _) in zip(rng, self.base_range))

    def _first_outside(self, rng: Range) -> Index:
        point = []
        for (s, e), (bs, be) in zip(rng, self.base_range):
            if s < bs:
                point.append(bs - 1)
            elif e > be:
                point.append(be)
            else:
                point.append(s)
        return tuple(point)

    def check_bounds(self, rng: Range, loop_id: Optional[int] = None, tile_id: Optional[int] = None):
        if not range_contains(self.base_range, rng):
            raise FieldBoundsError(self.id, self._first_outside(rng), loop_id=loop_id,
                                   tile_id=tile_id, extent=self.base_range)

    def view(self, rng: Range, loop_id: Optional[int] = None, tile_id: Optional[int] = None) -> np.ndarray:
        """Writable view over a range, bounds-checked against the allocated extent."""
        self.check_bounds(rng, loop_id, tile_id)
        if range_is_empty(rng):
            return np.empty(range_shape(rng), dtype=np.float64)
        return self.values[self._slices(rng)]

    def read(self, point: Sequence[int], offset: Optional[Sequence[int]] = None,
             loop_id: Optional[int] = None) -> float:
        p = tuple(point) if offset is None else tuple(a + b for a, b in zip(point, offset))
        if len(p) != self.dim:
            raise MeshError(f"point {p} does not have {self.dim} entries")
        self.check_bounds(tuple((v, v + 1) for v in p), loop_id)
        return float(self.values[tuple(v - b for v, (b, _) in zip(p, self.base_range))])

    def write(self, point: Sequence[int], value: float, loop_id: Optional[int] = None):
        p = tuple(point)
        if len(p) != self.dim:
            raise MeshError(f"point {p} does not have {self.dim} entries")
        self.check_bounds(tuple((v, v + 1) for v in p), loop_id)
        self.values[tuple(v - b for v, (b, _) in zip(p, self.base_range))] = value

    def fill(self, value: float, rng: Optional[Range] = None):
        self.view(rng or self.base_range)[...] = value

    def copy_region(self, source: "Field", rng: Range):
        """Copy source values over rng (both fields use global coordinates)."""
        if not range_is_empty(rng):
            self.view(rng)[...] = source.view(rng)

    def copy(self) -> "Field":
        clone = Field(self.id, self.block, self.size, elem_bytes=self.elem_bytes,
                      base_range=self.base_range)
        clone.values[...] = self.values
        return clone

    def domain_values(self) -> np.ndarray:
        return self.view(self.domain)

    def __repr__(self):
        return f"Field({self.id!r}, domain={format_range(self.domain)}, extent={format_range(self.base_range)})"


WriteHook = Callable[[int, str, Range], None]


class ArgAccessor:
    """Kernel-side handle for one argument over the current iteration range.

    ``acc[offset]`` is the dataset over the range shifted by ``offset``;
    writes go through ``acc[0] = values`` (or ``+=`` for increments).
    """

    __slots__ = ("field", "arg", "rng", "loop_id", "tile_id", "on_write", "_allowed")

    def __init__(self, field: Field, arg: ArgSpec, rng: Range, loop_id: Optional[int] = None,
                 tile_id: Optional[int] = None, on_write: Optional[WriteHook] = None):
        self.field = field
        self.arg = arg
        self.rng = rng
        self.loop_id = loop_id
        self.tile_id = tile_id
        self.on_write = on_write
        self._allowed = frozenset(arg.stencil.points)

    @property
    def shape(self) -> Tuple[int, ...]:
        return range_shape(self.rng)

    def coords(self, d: int) -> np.ndarray:
        """Global index of every point along dimension d, broadcastable to shape."""
        s, e = self.rng[d]
        shape = [1] * len(self.rng)
        shape[d] = max(0, e - s)
        return np.arange(s, e).reshape(shape)

    def _offset(self, offset) -> Index:
        if isinstance(offset, (int, np.integer)):
            # a bare 0 means the centre point in any dimension
            off = (0,) * len(self.rng) if offset == 0 else (int(offset),)
        else:
            off = tuple(int(v) for v in offset)
        if off not in self._allowed:
            raise MeshError(
                f"loop {self.loop_id} accesses '{self.arg.dataset}' at offset {off}, "
                f"which is not in its stencil {self.arg.stencil.points}"
            )
        return off

    def __getitem__(self, offset) -> np.ndarray:
        off = self._offset(offset)
        view = self.field.view(shift_range(self.rng, off), self.loop_id, self.tile_id)
        if not self.arg.mode.writes:
            view = view.view()
            view.flags.writeable = False
        return view

    def __setitem__(self, offset, value):
        off = self._offset(offset)
        if not self.arg.mode.writes:
            raise MeshError(f"loop {self.loop_id} writes '{self.arg.dataset}', declared read-only")
        if any(off):
            raise MeshError(f"loop {self.loop_id} writes '{self.arg.dataset}' at non-zero offset {off}")
        self.field.view(self.rng, self.loop_id, self.tile_id)[...] = value
        if self.on_write is not None:
            self.on_write(self.loop_id, self.arg.dataset, self.rng)


def estimate_bytes_moved(loop: LoopRecord, range_override: Optional[Range] = None,
                         elem_bytes: Optional[Mapping[str, int]] = None) -> int:
    """Bytes moved by one execution of loop over a range.

    Every argument counts |range| x elem_bytes, twice for read-write and
    increment access; re-use from multi-point stencils is ignored.
    """
    rng = loop.range if range_override is None else range_override
    points = range_points(rng)
    total = 0
    for arg in loop.args:
        size = config.ELEM_BYTES if elem_bytes is None else elem_bytes.get(arg.dataset, config.ELEM_BYTES)
        total += points * size * arg.mode.bytes_weight
    return total


def elem_bytes_of(fields: Mapping[str, Field]) -> Dict[str, int]:
    return {name: f.elem_bytes for name, f in fields.items()}
