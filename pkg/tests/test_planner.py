"""Unit tests for planner module."""

import pytest

from apps import average_back, jacobi_step, scale_into
from errors import HaloAllocationError, PlanError
from lazy_queue import LoopChain
from mesh import AccessMode, Block, Field, LoopRecord, arg_dat, declare_stencil
from oracle import check_monotone, validate_coverage, validate_dependencies
from planner import PlanCache, check_allocation, compute_union_bounds, construct_plan, get_or_build_plan

R, W = AccessMode.READ, AccessMode.WRITE

FIG2_DUMP = (
    "tile=0 loop=0 d=0 [0,5)\n"
    "tile=0 loop=1 d=0 [0,4)\n"
    "tile=1 loop=0 d=0 [5,8)\n"
    "tile=1 loop=1 d=0 [4,8)\n"
)


def two_loop_chain(rng=((0, 8),)):
    point = declare_stencil(1, [0])
    three = declare_stencil(1, [-1, 0, 1])
    return LoopChain((
        LoopRecord(0, scale_into, rng, (arg_dat("D1", point, R), arg_dat("D2", point, W))),
        LoopRecord(1, average_back, rng, (arg_dat("D2", three, R), arg_dat("D1", point, W))),
    ))


def single_loop_chain(rng=((0, 8),)):
    point = declare_stencil(1, [0])
    return LoopChain((LoopRecord(0, scale_into, rng, (arg_dat("D1", point, R), arg_dat("D2", point, W))),))


def jacobi_pair_chain(n=8):
    point = declare_stencil(2, [(0, 0)])
    five = declare_stencil(2, [(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)])
    rng = ((0, n), (0, n))
    return LoopChain((
        LoopRecord(0, jacobi_step, rng, (arg_dat("a", five, R), arg_dat("b", point, W))),
        LoopRecord(1, jacobi_step, rng, (arg_dat("b", five, R), arg_dat("a", point, W))),
    ))


def plan_for(chain, tile_sizes):
    return construct_plan(chain, compute_union_bounds(chain, tile_sizes))


class TestComputeUnionBounds:
    """Test cases for union bounds and the tile grid."""

    def test_two_loops_two_tiles(self):
        """Test two [0,8) loops with tile size 4."""
        cfg = compute_union_bounds(two_loop_chain(), (4,))
        assert cfg.union_bounds == ((0, 8),)
        assert cfg.num_tiles == (2,)

    def test_partial_last_tile(self):
        """Test that [0,7) with tile size 4 needs two tiles."""
        cfg = compute_union_bounds(single_loop_chain(((0, 7),)), (4,))
        assert cfg.num_tiles == (2,)

    def test_one_big_tile(self):
        """Test that a huge tile swallows the union."""
        point = declare_stencil(1, [0])
        chain = LoopChain((
            LoopRecord(0, scale_into, ((0, 8),), (arg_dat("D1", point, R), arg_dat("D2", point, W))),
            LoopRecord(1, scale_into, ((2, 10),), (arg_dat("D2", point, R), arg_dat("D1", point, W))),
        ))
        cfg = compute_union_bounds(chain, (100,))
        assert cfg.union_bounds == ((0, 10),)
        assert cfg.num_tiles == (1,)
        assert cfg.total_tiles == 1

    def test_invalid_inputs(self):
        """Test empty chains and bad tile sizes."""
        with pytest.raises(PlanError):
            compute_union_bounds(LoopChain(()), (4,))
        with pytest.raises(PlanError):
            compute_union_bounds(two_loop_chain(), (4, 4))
        with pytest.raises(PlanError):
            compute_union_bounds(two_loop_chain(), (0,))


class TestConstructPlan:
    """Test cases for the dependency analysis."""

    def test_two_loop_golden_dump(self):
        """Test the 1D two-loop chain: loop 0 skews to [0,5)/[5,8), loop 1 stays [0,4)/[4,8)."""
        plan = plan_for(two_loop_chain(), (4,))
        assert plan.dump() == FIG2_DUMP
        assert plan.range_of(0, 0) == ((0, 5),)
        assert plan.range_of(1, 1) == ((4, 8),)

    def test_two_loop_plan_is_valid(self):
        """Test that the golden plan passes every validator."""
        chain = two_loop_chain()
        plan = plan_for(chain, (4,))
        assert validate_dependencies(plan, chain) == []
        assert validate_coverage(plan, chain) == []
        assert check_monotone(plan) == []
        assert plan.skew() == (1,)

    def test_single_loop_no_skew(self):
        """Test that a lone loop is simply cut into tiles."""
        plan = plan_for(single_loop_chain(), (4,))
        assert plan.ranges == [[((0, 4),)], [((4, 8),)]]
        assert plan.skew() == (0,)

    def test_jacobi_pair_producer_extends(self):
        """Test that the producer's first tile reaches one point past the boundary in both dimensions."""
        chain = jacobi_pair_chain()
        plan = plan_for(chain, (4, 4))
        assert plan.num_tiles == 4
        assert plan.range_of(0, 0) == ((0, 5), (0, 5))
        assert plan.range_of(0, 1) == ((0, 4), (0, 4))
        assert plan.range_of(3, 0) == ((5, 8), (5, 8))
        assert validate_dependencies(plan, chain) == []
        assert validate_coverage(plan, chain) == []

    def test_tiles_are_lexicographic(self):
        """Test that tile ids linearize coordinates with dimension 0 most significant."""
        plan = plan_for(jacobi_pair_chain(), (4, 4))
        assert plan.tile_coords == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert plan.range_of(1, 1) == ((0, 4), (4, 8))

    def test_thin_loop_gets_empty_tiles(self):
        """Test that a 1-wide loop at the far edge is empty in the first tile."""
        point = declare_stencil(1, [0])
        back = declare_stencil(1, [-1, 0])
        chain = LoopChain((
            LoopRecord(0, scale_into, ((0, 8),), (arg_dat("D1", point, R), arg_dat("A", point, W))),
            LoopRecord(1, scale_into, ((7, 8),), (arg_dat("A", back, R), arg_dat("B", point, W))),
        ))
        plan = plan_for(chain, (4,))
        assert plan.range_of(0, 1) == ((7, 7),)
        assert plan.range_of(1, 1) == ((7, 8),)
        assert plan.range_of(0, 0) == ((0, 4),)
        assert plan.empty_ranges() == 1
        assert validate_dependencies(plan, chain) == []

    def test_empty_loop_is_inert(self):
        """Test that a loop with an empty range gets empty tiles and imposes nothing."""
        point = declare_stencil(1, [0])
        three = declare_stencil(1, [-1, 0, 1])
        chain = LoopChain((
            LoopRecord(0, scale_into, ((0, 8),), (arg_dat("D1", point, R), arg_dat("D2", point, W))),
            LoopRecord(1, average_back, ((3, 3),), (arg_dat("D2", three, R), arg_dat("D1", point, W))),
        ))
        plan = plan_for(chain, (4,))
        assert plan.range_of(0, 0) == ((0, 4),)
        assert plan.range_of(0, 1) == ((3, 3),)
        assert plan.range_of(1, 1) == ((3, 3),)

    def test_deterministic(self):
        """Test that identical inputs give identical plans."""
        a = plan_for(two_loop_chain(), (3,))
        b = plan_for(two_loop_chain(), (3,))
        assert a == b
        assert a.dump() == b.dump()

    def test_seeded_fault_leaves_original(self):
        """Test that with_dim_range copies the plan."""
        plan = plan_for(two_loop_chain(), (4,))
        broken = plan.with_dim_range(0, 0, 1, (0, 5))
        assert broken.range_of(0, 1) == ((0, 5),)
        assert plan.range_of(0, 1) == ((0, 4),)
        assert broken != plan


class TestCheckAllocation:
    """Test cases for halo allocation checks."""

    def test_insufficient_padding(self):
        """Test that reading past an unpadded field names the dataset and depth."""
        block = Block("line", 1)
        chain = two_loop_chain()
        fields = {"D1": Field("D1", block, (8,)), "D2": Field("D2", block, (8,))}
        with pytest.raises(HaloAllocationError) as exc:
            check_allocation(chain, [l.range for l in chain.loops], fields)
        assert exc.value.dataset == "D2"
        assert exc.value.depth == 1
        assert exc.value.allocated == 0

    def test_construct_plan_checks_fields(self):
        """Test that plan construction verifies the allocation when fields are given."""
        block = Block("line", 1)
        chain = two_loop_chain()
        fields = {"D1": Field("D1", block, (8,)), "D2": Field("D2", block, (8,))}
        with pytest.raises(HaloAllocationError):
            construct_plan(chain, compute_union_bounds(chain, (4,)), fields=fields)

    def test_padded_fields_pass(self):
        """Test that one point of padding is enough for the two-loop chain."""
        block = Block("line", 1)
        chain = two_loop_chain()
        fields = {"D1": Field("D1", block, (8,), padding=1), "D2": Field("D2", block, (8,), padding=1)}
        check_allocation(chain, [l.range for l in chain.loops], fields)


class TestPlanCache:
    """Test cases for plan caching."""

    def test_same_chain_hits(self):
        """Test one build and one hit for a repeated chain."""
        cache = PlanCache()
        first, hit1 = get_or_build_plan(two_loop_chain(), (4,), cache)
        second, hit2 = get_or_build_plan(two_loop_chain(), (4,), cache)
        assert (hit1, hit2) == (False, True)
        assert first is second
        assert cache.builds == 1
        assert cache.hits == 1

    def test_tile_sizes_are_part_of_key(self):
        """Test that different tile sizes get their own entries."""
        cache = PlanCache()
        get_or_build_plan(two_loop_chain(), (4,), cache)
        get_or_build_plan(two_loop_chain(), (2,), cache)
        assert len(cache) == 2

    def test_changed_range_misses(self):
        """Test that a chain with different bounds is a different plan."""
        cache = PlanCache()
        get_or_build_plan(two_loop_chain(), (4,), cache)
        _, hit = get_or_build_plan(two_loop_chain(((0, 7),)), (4,), cache)
        assert not hit
        assert cache.builds == 2

    def test_clear(self):
        """Test clearing the cache."""
        cache = PlanCache()
        get_or_build_plan(two_loop_chain(), (4,), cache)
        cache.clear()
        assert len(cache) == 0
