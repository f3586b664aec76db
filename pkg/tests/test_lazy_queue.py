"""Unit tests for lazy_queue module."""

import pytest

from apps import enqueue_synthetic, scale_into, setup_synthetic
from errors import MeshError, ReductionError
from lazy_queue import (Distributed, LoopChain, Sequential, StencilRuntime, Tiled, TiledAuto, Untiled,
                        chain_signature)
from mesh import AccessMode, Block, LoopRecord, arg_dat, declare_stencil

R, W = AccessMode.READ, AccessMode.WRITE


def value_of(x):
    return x[0]


def add_one(src, dst):
    dst[0] = src[0] + 1.0


@pytest.fixture
def runtime():
    rt = StencilRuntime(Block("line", 1))
    rt.decl_stencil([0], "S1D_0")
    rt.decl_dat("x", (8,), fill=1.0)
    rt.decl_dat("y", (8,))
    yield rt
    rt.close()


def point(rt):
    return rt.stencils[0]


class TestQueue:
    """Test cases for lazy recording."""

    def test_nothing_runs_until_flush(self, runtime):
        """Test that par_loop only records the loop."""
        calls = []

        def counting(src, dst):
            calls.append(1)
            dst[0] = src[0]

        runtime.par_loop(counting, [(0, 8)], [arg_dat("x", point(runtime), R), arg_dat("y", point(runtime), W)])
        assert calls == []
        assert len(runtime.pending) == 1
        runtime.flush()
        assert calls
        assert runtime.pending == ()
        assert runtime.fields["y"].read((3,)) == 1.0

    def test_loop_ids_follow_enqueue_order(self, runtime):
        """Test that loop ids are positions in the queue."""
        for _ in range(3):
            runtime.par_loop(add_one, [(0, 8)], [arg_dat("x", point(runtime), R), arg_dat("y", point(runtime), W)])
        assert [l.loop_id for l in runtime.pending] == [0, 1, 2]

    def test_empty_flush_is_a_no_op(self, runtime):
        """Test flushing an empty queue."""
        report = runtime.flush()
        assert report.is_empty
        assert runtime.reports == []

    def test_rejects_bad_loops(self, runtime):
        """Test argument validation at enqueue time."""
        with pytest.raises(MeshError):
            runtime.par_loop(add_one, [(0, 8)], [arg_dat("missing", point(runtime), R)])
        with pytest.raises(MeshError):
            runtime.par_loop(add_one, [(0, 8), (0, 8)], [arg_dat("x", point(runtime), R)])
        with pytest.raises(MeshError):
            runtime.par_loop(add_one, [(0, 8)], [])
        with pytest.raises(MeshError):
            runtime.par_loop(add_one, [(0, 8)], [arg_dat("x", point(runtime), R)], block=Block("other", 1))
        assert runtime.pending == ()

    def test_duplicate_dataset(self, runtime):
        """Test that datasets are declared once."""
        with pytest.raises(MeshError):
            runtime.decl_dat("x", (8,))

    def test_default_padding(self):
        """Test that padding is the widest reach plus the skew allowance."""
        rt = StencilRuntime(Block("line", 1), skew_allowance=3)
        rt.decl_stencil([-2, 0, 1])
        f = rt.decl_dat("x", (8,))
        assert f.padding(0) == (5, 5)

    def test_domain_needs_datasets(self):
        """Test that a block without datasets has no domain."""
        with pytest.raises(MeshError):
            StencilRuntime(Block("line", 1)).domain


class TestReductions:
    """Test cases for reduction handles."""

    def test_sum_of_ones(self, runtime):
        """Test a sum over eight ones."""
        handle = runtime.par_loop(value_of, [(0, 8)], [arg_dat("x", point(runtime), R)], reduction="sum")
        assert runtime.pending
        assert runtime.fetch_reduction(handle) == 8.0
        assert runtime.pending == ()

    def test_second_fetch_fails(self, runtime):
        """Test that a handle is consumed by its first fetch."""
        handle = runtime.par_loop(value_of, [(0, 8)], [arg_dat("x", point(runtime), R)], reduction="sum")
        runtime.fetch_reduction(handle)
        with pytest.raises(ReductionError):
            runtime.fetch_reduction(handle)

    def test_value_available_after_explicit_flush(self, runtime):
        """Test fetching a reduction that an earlier flush already computed."""
        handle = runtime.par_loop(value_of, [(2, 6)], [arg_dat("x", point(runtime), R)], reduction="max")
        runtime.flush()
        assert runtime.fetch_reduction(handle) == 1.0

    def test_fetch_flushes_prefix(self):
        """Test that fetching from the middle of the queue leaves later loops pending."""
        rt = StencilRuntime(Block("line", 1), flush_whole_queue_on_fetch=False)
        s = rt.decl_stencil([0])
        rt.decl_dat("x", (8,), fill=1.0)
        rt.decl_dat("y", (8,))
        rt.par_loop(add_one, [(0, 8)], [arg_dat("x", s, R), arg_dat("y", s, W)])
        rt.par_loop(add_one, [(0, 8)], [arg_dat("y", s, R), arg_dat("x", s, W)])
        handle = rt.par_loop(value_of, [(0, 8)], [arg_dat("x", s, R)], reduction="sum")
        rt.par_loop(add_one, [(0, 8)], [arg_dat("x", s, R), arg_dat("y", s, W)])
        rt.par_loop(add_one, [(0, 8)], [arg_dat("y", s, R), arg_dat("x", s, W)])
        assert rt.fetch_reduction(handle) == 24.0
        assert len(rt.pending) == 2
        assert [l.loop_id for l in rt.pending] == [0, 1]
        rt.flush()
        assert rt.fields["x"].read((0,)) == 5.0
        rt.close()

    def test_fetch_flushes_whole_queue_when_configured(self):
        """Test the whole-queue switch."""
        rt = StencilRuntime(Block("line", 1), flush_whole_queue_on_fetch=True)
        s = rt.decl_stencil([0])
        rt.decl_dat("x", (8,), fill=1.0)
        rt.decl_dat("y", (8,))
        handle = rt.par_loop(value_of, [(0, 8)], [arg_dat("x", s, R)], reduction="sum")
        rt.par_loop(add_one, [(0, 8)], [arg_dat("x", s, R), arg_dat("y", s, W)])
        assert rt.fetch_reduction(handle) == 8.0
        assert rt.pending == ()
        rt.close()

    def test_unknown_handle(self, runtime):
        """Test that a handle from another runtime is rejected."""
        other = StencilRuntime(Block("line", 1))
        other.decl_stencil([0])
        other.decl_dat("x", (8,))
        handle = other.par_loop(value_of, [(0, 8)], [arg_dat("x", other.stencils[0], R)], reduction="sum")
        with pytest.raises(ReductionError):
            runtime.fetch_reduction(handle)


class TestChainSignature:
    """Test cases for chain signatures."""

    def loops(self, first=((0, 8),)):
        s = declare_stencil(1, [0])
        return [
            LoopRecord(0, scale_into, first, (arg_dat("D1", s, R), arg_dat("D2", s, W))),
            LoopRecord(1, add_one, ((0, 8),), (arg_dat("D2", s, R), arg_dat("D1", s, W))),
        ]

    def test_stable(self):
        """Test that equal chains hash equal."""
        assert chain_signature(self.loops()) == chain_signature(self.loops())
        assert LoopChain(self.loops()).signature == chain_signature(self.loops())

    def test_order_matters(self):
        """Test that permuting loops changes the signature."""
        loops = self.loops()
        assert chain_signature(loops) != chain_signature(loops[::-1])

    def test_range_matters(self):
        """Test that changing a range changes the signature."""
        assert chain_signature(self.loops()) != chain_signature(self.loops(((0, 7),)))

    def test_datasets_in_first_access_order(self):
        """Test dataset ordering."""
        assert LoopChain(self.loops()).datasets() == ("D1", "D2")


class TestFlushModes:
    """Test cases for mode dispatch."""

    def test_mode_names(self):
        """Test the reported mode names."""
        assert Untiled().name == "untiled"
        assert Tiled((4,)).name == "tiled"
        assert TiledAuto().name == "tiled-auto"
        assert Sequential().name == "sequential"
        assert Distributed((2, 1)).name == "distributed-untiled"
        assert Distributed((2, 1), tile_sizes=(8, 8)).name == "distributed-tiled"
        assert Distributed((2, 1), auto=True).tiled

    def test_tiled_flush_reports_plan(self, runtime):
        """Test that a tiled flush records the plan and its cost."""
        runtime.par_loop(add_one, [(0, 8)], [arg_dat("x", point(runtime), R), arg_dat("y", point(runtime), W)])
        report = runtime.flush(Tiled((4,)))
        assert report.mode == "tiled"
        assert report.tile_count == 2
        assert report.plans_built == 1
        assert not report.cache_hit
        assert runtime.last_plan is not None

    def test_total_report_merges(self, runtime):
        """Test folding several flushes together."""
        for _ in range(2):
            runtime.par_loop(add_one, [(0, 8)], [arg_dat("x", point(runtime), R), arg_dat("y", point(runtime), W)])
            runtime.flush()
        total = runtime.total_report()
        assert total.flushes == 2
        assert len(total.loop_stats) == 2


class TestPlanReuse:
    """Test cases for plan caching across flushes."""

    def test_long_chain_built_once(self):
        """Test that flushing the same 153-loop chain twice builds one plan."""
        rt = StencilRuntime(Block("grid", 2), mode=Tiled((16, 16)))
        app = setup_synthetic(rt, (32, 32))
        enqueue_synthetic(app, 153)
        first = rt.flush()
        enqueue_synthetic(app, 153)
        second = rt.flush()
        assert rt.plan_cache.builds == 1
        assert (first.cache_hit, second.cache_hit) == (False, True)
        assert second.plans_built == 0
        assert second.plan_seconds == 0.0
        rt.close()
