"""Unit tests for apps module."""

import pytest

from apps import (APPS, HYDRO_DATASETS, app_jacobi, app_minihydro, app_synthetic, app_two_loop, build_app,
                  enqueue_minihydro_step, make_runtime, setup_minihydro)
from errors import MeshError
from lazy_queue import LoopChain, Tiled, Untiled
from oracle import max_abs_diff, validate_coverage, validate_dependencies

TILE_EDGES = [8, 16, 32, 64]


def run_jacobi(mode, variant, sizes=(64, 64), iterations=10):
    rt = make_runtime(2, mode)
    app = app_jacobi(rt, sizes, iterations, variant, seed=1)
    rt.flush()
    rt.close()
    return app


def run_hydro(mode, sizes=(48, 48), iterations=3):
    rt = make_runtime(2, mode)
    app = app_minihydro(rt, sizes, iterations, seed=4)
    rt.close()
    return app


@pytest.fixture(scope="module")
def jacobi_reference():
    return {variant: run_jacobi(Untiled(), variant) for variant in ("copy", "noncopy")}


@pytest.fixture(scope="module")
def hydro_reference():
    return run_hydro(Untiled())


class TestJacobi:
    """Test cases for the Jacobi heat diffusion app."""

    @pytest.mark.parametrize("edge", TILE_EDGES)
    @pytest.mark.parametrize("variant", ["copy", "noncopy"])
    def test_tiled_equals_untiled(self, jacobi_reference, variant, edge):
        """Test 10 iterations at 64x64 for every square tile size, bit for bit."""
        tiled = run_jacobi(Tiled((edge, edge)), variant)
        assert max_abs_diff(tiled.fields, jacobi_reference[variant].fields) == 0.0

    def test_constant_interior(self):
        """Test that a point surrounded by ones stays one and a corner point feels the cold ring."""
        rt = make_runtime(2)
        app = app_jacobi(rt, (16, 16), 1, "copy", initial="constant")
        rt.flush()
        u = app.fields["u"]
        assert u.read((8, 8)) == 1.0
        assert u.read((1, 1)) == 0.75
        assert u.read((0, 5)) == 0.0

    def test_loop_counts(self):
        """Test that the copy variant enqueues two loops per iteration and the other one."""
        copy = app_jacobi(make_runtime(2), (16, 16), 3, "copy")
        noncopy = app_jacobi(make_runtime(2), (16, 16), 3, "noncopy")
        assert len(copy.runtime.pending) == 6
        assert len(noncopy.runtime.pending) == 3
        assert noncopy.datasets == ("a", "b")
        assert [l.args[0].dataset for l in noncopy.runtime.pending] == ["a", "b", "a"]

    def test_rejects_bad_setup(self):
        """Test size and variant validation."""
        with pytest.raises(MeshError):
            app_jacobi(make_runtime(2), (16,), 1)
        with pytest.raises(MeshError):
            app_jacobi(make_runtime(2), (16, 16), 1, "diagonal")


class TestMiniHydro:
    """Test cases for the mini hydro chain."""

    @pytest.mark.parametrize("edge", TILE_EDGES)
    def test_tiled_equals_untiled(self, hydro_reference, edge):
        """Test three steps at 48x48: fields exact, reductions within 1e-12."""
        tiled = run_hydro(Tiled((edge, edge)))
        assert max_abs_diff(tiled.fields, hydro_reference.fields) == 0.0
        assert tiled.reductions == pytest.approx(hydro_reference.reductions, rel=1e-12)

    def test_step_structure(self):
        """Test one step: 14 loops over 8 datasets, thin ring loops, asymmetric stencils, one reduction."""
        rt = make_runtime(2)
        app = setup_minihydro(rt, (16, 16))
        handle = enqueue_minihydro_step(app)
        chain = LoopChain(rt.pending)
        assert len(chain) == 14
        assert set(chain.datasets()) == set(HYDRO_DATASETS)
        thin = [l for l in chain if min(e - s for s, e in l.range) == 1]
        assert len(thin) == 4
        one_sided = [a for l in chain for a in l.args
                     if a.stencil.min_offset != tuple(-m for m in a.stencil.max_offset)]
        assert one_sided
        assert [l.loop_id for l in chain if l.reduction] == [13]
        assert handle.loop_name == "field_summary"

    def test_step_plan_is_valid(self):
        """Test that a tiled step has exact coverage and honours every dependency."""
        rt = make_runtime(2)
        app = setup_minihydro(rt, (20, 20))
        enqueue_minihydro_step(app)
        chain = LoopChain(rt.pending)
        rt.flush(Tiled((6, 6)))
        plan = rt.last_plan
        assert validate_coverage(plan, chain) == []
        assert validate_dependencies(plan, chain) == []

    def test_one_reduction_per_step(self):
        """Test that each step's summary is fetched."""
        app = run_hydro(Untiled(), sizes=(16, 16), iterations=2)
        assert len(app.reductions) == 2
        assert app.iterations == 2
        assert all(r > 0 for r in app.reductions)


class TestOtherApps:
    """Test cases for the two-loop and synthetic chains and the dispatcher."""

    def test_two_loop_chain(self):
        """Test the shape of the 1D two-loop chain."""
        rt = make_runtime(1)
        app = app_two_loop(rt, (8,), iterations=2)
        assert app.loops_enqueued == 4
        assert [l.range for l in rt.pending] == [((0, 8),)] * 4

    def test_synthetic_cycles_datasets(self):
        """Test the synthetic chain's loop count and dataset ring."""
        rt = make_runtime(2)
        app = app_synthetic(rt, (16, 16), n_loops=12)
        assert len(rt.pending) == 12
        assert rt.pending[6].args[0].dataset == "s0"

    @pytest.mark.parametrize("name", APPS)
    def test_build_app(self, name):
        """Test that every app builds by name."""
        sizes = (8,) if name == "twoloop" else (16, 16)
        rt = make_runtime(len(sizes))
        app = build_app(name, rt, sizes, 1, n_loops=6)
        assert app.name == name
        rt.flush()

    def test_unknown_app(self):
        """Test dispatch of an unknown name."""
        with pytest.raises(MeshError):
            build_app("tealeaf", make_runtime(2), (16, 16), 1)
