"""Automatic tile size selection from the chain footprint and cache capacity."""

from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import config
from errors import SizerError
from mesh import Field, Range, range_shape


@dataclass(frozen=True)
class SizerInput:
    cache_bytes: int
    threads: int
    dim: int
    bytes_per_point: int
    domain_extent: Range

    def __post_init__(self):
        if self.cache_bytes <= 0 or self.threads <= 0 or self.bytes_per_point <= 0:
            raise SizerError(f"sizer inputs must be positive: {self}")
        if self.dim not in (1, 2, 3) or len(self.domain_extent) != self.dim:
            raise SizerError(f"domain extent {self.domain_extent} does not match dim {self.dim}")
        if any(n <= 0 for n in range_shape(self.domain_extent)):
            raise SizerError(f"domain extent {self.domain_extent} is empty")

    @property
    def capacity_points(self) -> int:
        return self.cache_bytes // self.bytes_per_point

    @property
    def extents(self) -> Tuple[int, ...]:
        return range_shape(self.domain_extent)


def sizer_input_for_chain(chain, fields: Mapping[str, Field], cache_bytes: Optional[int] = None,
                          threads: Optional[int] = None) -> SizerInput:
    """Footprint of a chain: bytes per grid point summed over the distinct datasets it touches."""
    datasets = chain.datasets()
    bytes_per_point = sum(fields[a].elem_bytes for a in datasets)
    union = tuple((min(l.range[d][0] for l in chain.loops), max(l.range[d][1] for l in chain.loops))
                  for d in range(chain.dim))
    return SizerInput(
        cache_bytes=cache_bytes if cache_bytes is not None else config.DEFAULT_CACHE_KB * 1024,
        threads=threads if threads is not None else config.DEFAULT_THREADS,
        dim=chain.dim,
        bytes_per_point=max(1, bytes_per_point),
        domain_extent=union,
    )


def auto_tile_size(inp: SizerInput) -> Tuple[int, ...]:
    """Pick a tile shape that fits in cache.

    Constraints: footprint within the cache, X at least twice Y, and Y (2D)
    or Y*Z (3D) a multiple of the thread count; no size exceeds the domain.
    """
    capacity = inp.capacity_points
    threads = inp.threads
    if capacity < threads:
        raise SizerError(
            f"cache of {inp.cache_bytes} bytes holds {capacity} points, fewer than one per thread ({threads})"
        )
    extents = inp.extents

    if inp.dim == 1:
        return (min(extents[0], capacity),)

    if inp.dim == 2:
        ext_x, ext_y = extents
        best_y = 0
        y = threads
        while 2 * y * y <= capacity and y <= ext_y and 2 * y <= ext_x:
            best_y = y
            y += threads
        if best_y == 0:
            raise SizerError(
                f"no 2D tile with Y a multiple of {threads}, X >= 2Y and X*Y <= {capacity} points "
                f"fits the {ext_x}x{ext_y} domain"
            )
        return min(ext_x, capacity // best_y), best_y

    ext_x, ext_y, ext_z = extents
    fits_full_x = 0
    fits_some_x = 0
    for y in range(1, min(ext_y, ext_z) + 1):
        if (y * y) % threads or 2 * y > ext_x or 2 * y ** 3 > capacity:
            continue
        fits_some_x = y
        if ext_x * y * y <= capacity:
            fits_full_x = y
    best = fits_full_x or fits_some_x
    if best == 0:
        raise SizerError(
            f"no 3D tile with Y*Z a multiple of {threads}, X >= 2Y and X*Y*Z <= {capacity} points "
            f"fits the {ext_x}x{ext_y}x{ext_z} domain"
        )
    return min(ext_x, capacity // (best * best)), best, best
