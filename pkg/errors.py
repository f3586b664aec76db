"""Exception types raised by the loop-chain runtime."""

from typing import Optional, Sequence


class LoopChainError(Exception):
    """Base class for every runtime error."""


class MeshError(LoopChainError, ValueError):
    """Invalid block, stencil, dataset or loop declaration."""


class FieldBoundsError(MeshError, IndexError):
    """Access outside a dataset's allocated extent."""

    def __init__(self, dataset: str, point: Sequence[int], loop_id: Optional[int] = None,
                 tile_id: Optional[int] = None, extent=None):
        self.dataset = dataset
        self.point = tuple(point)
        self.loop_id = loop_id
        self.tile_id = tile_id
        self.extent = extent

        where = []
        if tile_id is not None:
            where.append(f"tile {tile_id}")
        if loop_id is not None:
            where.append(f"loop {loop_id}")
        context = f" ({', '.join(where)})" if where else ""
        super().__init__(
            f"out-of-extent access to dataset '{dataset}' at point {self.point}{context}; "
            f"allocated extent is {extent}"
        )


class PlanError(LoopChainError):
    """The tiling planner could not produce a valid plan."""


class HaloAllocationError(PlanError):
    """Skew or replication needs more halo padding than was allocated."""

    def __init__(self, dataset: str, dim: int, depth: int, allocated: int):
        self.dataset = dataset
        self.dim = dim
        self.depth = depth
        self.allocated = allocated
        super().__init__(
            f"dataset '{dataset}' needs halo depth {depth} in dimension {dim} "
            f"but only {allocated} is allocated"
        )


class SizerError(LoopChainError, ValueError):
    """No tile shape satisfies the cache and thread constraints."""


class ReductionError(LoopChainError):
    """Unknown or already consumed reduction handle."""


class DecompositionError(LoopChainError, ValueError):
    """Invalid rank grid or halo deeper than a neighbor partition."""
