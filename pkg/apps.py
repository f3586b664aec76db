"""Benchmark applications: Jacobi heat diffusion, a mini hydro-like chain and synthetic chains.

Every app declares its datasets on a runtime and enqueues loops; nothing
runs until the runtime flushes. Kernels are module-level functions so the
chain signature stays stable across runs.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import MeshError
from lazy_queue import FlushMode, ReductionHandle, StencilRuntime
from mesh import AccessMode, Block, Stencil, arg_dat

R, W, RW = AccessMode.READ, AccessMode.WRITE, AccessMode.RW

APPS = ("jacobi2d", "minihydro", "twoloop", "synthetic")
JACOBI_VARIANTS = ("copy", "noncopy")
HYDRO_DATASETS = ("rho", "e", "p", "u", "v", "fx", "fy", "w")
SYNTHETIC_DATASETS = 6


@dataclass
class AppInstance:
    name: str
    runtime: StencilRuntime
    sizes: Tuple[int, ...]
    datasets: Tuple[str, ...]
    stencils: Dict[str, Stencil] = field(default_factory=dict)
    variant: Optional[str] = None
    iterations: int = 0
    loops_enqueued: int = 0
    handles: List[ReductionHandle] = field(default_factory=list)
    reductions: List[float] = field(default_factory=list)

    @property
    def fields(self):
        return {name: self.runtime.fields[name] for name in self.datasets}

    def interior(self) -> Tuple[Tuple[int, int], ...]:
        """Domain without its one-point Dirichlet ring."""
        return tuple((1, n - 1) for n in self.sizes)


def make_runtime(dim: int, mode: Optional[FlushMode] = None, **kwargs) -> StencilRuntime:
    return StencilRuntime(Block("grid", dim), mode=mode, **kwargs)


def random_values(shape, seed: int) -> np.ndarray:
    """Positive values in [0.5, 1.5)."""
    return np.random.default_rng(seed).uniform(0.5, 1.5, size=shape)


def _require_2d(name: str, sizes: Sequence[int]):
    if len(sizes) != 2:
        raise MeshError(f"{name} needs a 2D size, got {tuple(sizes)}")
    if min(sizes) < 3:
        raise MeshError(f"{name} needs at least 3 points per dimension, got {tuple(sizes)}")


# Jacobi

def jacobi_step(src, dst):
    c, n, s, e, w = config.JACOBI_WEIGHTS
    dst[0] = c * src[0, 0] + n * src[0, 1] + s * src[0, -1] + e * src[1, 0] + w * src[-1, 0]


def copy_back(src, dst):
    dst[0] = src[0]


def setup_jacobi(runtime: StencilRuntime, sizes: Sequence[int], variant: str = "copy", seed: int = 0,
                 initial: str = "random") -> AppInstance:
    """Two datasets with a fixed boundary ring; "constant" starts at 1 inside and 0 on the ring."""
    _require_2d("jacobi2d", sizes)
    if variant not in JACOBI_VARIANTS:
        raise MeshError(f"unknown jacobi variant '{variant}' (use copy or noncopy)")
    point = runtime.decl_stencil([(0, 0)], "S2D_00")
    five = runtime.decl_stencil([(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)], "S2D_5PT")
    names = ("u", "v") if variant == "copy" else ("a", "b")
    first = runtime.decl_dat(names[0], sizes)
    second = runtime.decl_dat(names[1], sizes)

    if initial == "constant":
        values = np.zeros(tuple(sizes))
        values[1:-1, 1:-1] = 1.0
    else:
        values = random_values(tuple(sizes), seed)
    first.domain_values()[...] = values
    # both datasets share the boundary ring
    second.domain_values()[...] = values
    return AppInstance("jacobi2d", runtime, tuple(sizes), names,
                       stencils={"point": point, "five": five}, variant=variant)


def enqueue_jacobi(app: AppInstance, iterations: int):
    """Copy: sweep into v then copy back to u. Non-copy: sweep alternating between a and b."""
    rt = app.runtime
    point, five = app.stencils["point"], app.stencils["five"]
    interior = app.interior()
    for i in range(iterations):
        if app.variant == "copy":
            rt.par_loop(jacobi_step, interior, [arg_dat("u", five, R), arg_dat("v", point, W)])
            rt.par_loop(copy_back, interior, [arg_dat("v", point, R), arg_dat("u", point, W)])
            app.loops_enqueued += 2
        else:
            src, dst = ("a", "b") if (app.iterations + i) % 2 == 0 else ("b", "a")
            rt.par_loop(jacobi_step, interior, [arg_dat(src, five, R), arg_dat(dst, point, W)])
            app.loops_enqueued += 1
    app.iterations += iterations


def app_jacobi(runtime: StencilRuntime, sizes: Sequence[int], iterations: int, variant: str = "copy",
               seed: int = 0, initial: str = "random") -> AppInstance:
    app = setup_jacobi(runtime, sizes, variant, seed, initial)
    enqueue_jacobi(app, iterations)
    return app


# Mini hydro

def ideal_gas(rho, e, p):
    p[0] = 0.4 * rho[0] * e[0]


def halo_left(src, p):
    p[0] = src[1, 0]


def halo_right(src, p):
    p[0] = src[-1, 0]


def halo_bottom(src, p):
    p[0] = src[0, 1]


def halo_top(src, p):
    p[0] = src[0, -1]


def accel_x(p, u):
    u[0] = u[0] - config.HYDRO_DT * (p[0, 0] - p[-1, 0])


def accel_y(p, v):
    v[0] = v[0] - config.HYDRO_DT * (p[0, 0] - p[0, -1])


def flux_x(u, fx):
    fx[0] = config.HYDRO_DT * 0.5 * (u[0, 0] + u[1, 0])


def flux_y(v, fy):
    fy[0] = config.HYDRO_DT * 0.5 * (v[0, 0] + v[0, 1])


def advect_x(fx, e):
    e[0] = e[0] - 0.1 * (fx[0, 0] - fx[-1, 0])


def advect_y(fy, e):
    e[0] = e[0] - 0.1 * (fy[0, 0] - fy[0, -1])


def velocity_jump(u, v, w):
    w[0] = np.maximum(np.abs(u[1, 0] - u[0, 0]), np.abs(v[0, 1] - v[0, 0]))


def update_density(fx, fy, rho):
    rho[0] = rho[0] - config.HYDRO_DT * (fx[0, 0] - fx[-1, 0] + fy[0, 0] - fy[0, -1]) * rho[0]


def field_summary(rho, e, w):
    return rho[0] * e[0] + w[0]


def setup_minihydro(runtime: StencilRuntime, sizes: Sequence[int], seed: int = 0) -> AppInstance:
    _require_2d("minihydro", sizes)
    stencils = {
        "point": runtime.decl_stencil([(0, 0)], "S2D_00"),
        "xm": runtime.decl_stencil([(0, 0), (-1, 0)], "S2D_00_M10"),
        "ym": runtime.decl_stencil([(0, 0), (0, -1)], "S2D_00_0M1"),
        "xp": runtime.decl_stencil([(0, 0), (1, 0)], "S2D_00_P10"),
        "yp": runtime.decl_stencil([(0, 0), (0, 1)], "S2D_00_0P1"),
        "east": runtime.decl_stencil([(1, 0)], "S2D_P10"),
        "west": runtime.decl_stencil([(-1, 0)], "S2D_M10"),
        "north": runtime.decl_stencil([(0, 1)], "S2D_0P1"),
        "south": runtime.decl_stencil([(0, -1)], "S2D_0M1"),
    }
    for i, name in enumerate(HYDRO_DATASETS):
        runtime.decl_dat(name, sizes).domain_values()[...] = random_values(tuple(sizes), seed + i)
    return AppInstance("minihydro", runtime, tuple(sizes), HYDRO_DATASETS, stencils=stencils)


def enqueue_minihydro_step(app: AppInstance) -> ReductionHandle:
    """One time step: 14 loops over 8 datasets, ending in a sum reduction."""
    rt = app.runtime
    s = app.stencils
    nx, ny = app.sizes
    inner = app.interior()
    ix, iy = inner

    rt.par_loop(ideal_gas, inner, [arg_dat("rho", s["point"], R), arg_dat("e", s["point"], R),
                                   arg_dat("p", s["point"], W)])
    # thin boundary loops fill the pressure ring from the first interior layer
    rt.par_loop(halo_left, ((0, 1), iy), [arg_dat("p", s["east"], R), arg_dat("p", s["point"], W)])
    rt.par_loop(halo_right, ((nx - 1, nx), iy), [arg_dat("p", s["west"], R), arg_dat("p", s["point"], W)])
    rt.par_loop(halo_bottom, (ix, (0, 1)), [arg_dat("p", s["north"], R), arg_dat("p", s["point"], W)])
    rt.par_loop(halo_top, (ix, (ny - 1, ny)), [arg_dat("p", s["south"], R), arg_dat("p", s["point"], W)])

    rt.par_loop(accel_x, inner, [arg_dat("p", s["xm"], R), arg_dat("u", s["point"], RW)])
    rt.par_loop(accel_y, inner, [arg_dat("p", s["ym"], R), arg_dat("v", s["point"], RW)])
    rt.par_loop(flux_x, inner, [arg_dat("u", s["xp"], R), arg_dat("fx", s["point"], W)])
    rt.par_loop(flux_y, inner, [arg_dat("v", s["yp"], R), arg_dat("fy", s["point"], W)])
    rt.par_loop(advect_x, inner, [arg_dat("fx", s["xm"], R), arg_dat("e", s["point"], RW)])
    rt.par_loop(advect_y, inner, [arg_dat("fy", s["ym"], R), arg_dat("e", s["point"], RW)])
    rt.par_loop(velocity_jump, inner, [arg_dat("u", s["xp"], R), arg_dat("v", s["yp"], R),
                                       arg_dat("w", s["point"], W)])
    rt.par_loop(update_density, inner, [arg_dat("fx", s["xm"], R), arg_dat("fy", s["ym"], R),
                                        arg_dat("rho", s["point"], RW)])
    handle = rt.par_loop(field_summary, inner, [arg_dat("rho", s["point"], R), arg_dat("e", s["point"], R),
                                                arg_dat("w", s["point"], R)], reduction="sum")
    app.loops_enqueued += 14
    app.handles.append(handle)
    return handle


def app_minihydro(runtime: StencilRuntime, sizes: Sequence[int], iterations: int, seed: int = 0) -> AppInstance:
    """Each step's field summary is fetched right away, which flushes that step."""
    app = setup_minihydro(runtime, sizes, seed)
    for _ in range(iterations):
        handle = enqueue_minihydro_step(app)
        app.reductions.append(runtime.fetch_reduction(handle))
        app.iterations += 1
    return app


# Two-loop 1D chain

def scale_into(src, dst):
    dst[0] = 0.5 * src[0] + 1.0


def average_back(src, dst):
    dst[0] = 0.25 * src[-1] + 0.5 * src[0] + 0.25 * src[1]


def app_two_loop(runtime: StencilRuntime, sizes: Sequence[int], iterations: int = 1, seed: int = 0) -> AppInstance:
    """Loop 1 writes D2 from D1 pointwise; loop 2 smooths D2 back into D1."""
    if len(sizes) != 1:
        raise MeshError(f"twoloop needs a 1D size, got {tuple(sizes)}")
    point = runtime.decl_stencil([0], "S1D_0")
    three = runtime.decl_stencil([-1, 0, 1], "S1D_3PT")
    d1 = runtime.decl_dat("D1", sizes)
    d2 = runtime.decl_dat("D2", sizes)
    d1.values[...] = random_values(d1.values.shape, seed)
    d2.values[...] = random_values(d2.values.shape, seed + 1)
    app = AppInstance("twoloop", runtime, tuple(sizes), ("D1", "D2"), stencils={"point": point, "three": three})
    full = ((0, sizes[0]),)
    for _ in range(iterations):
        runtime.par_loop(scale_into, full, [arg_dat("D1", point, R), arg_dat("D2", point, W)])
        runtime.par_loop(average_back, full, [arg_dat("D2", three, R), arg_dat("D1", point, W)])
        app.loops_enqueued += 2
    app.iterations = iterations
    return app


# Synthetic chains

def smooth(src, dst):
    dst[0] = 0.5 * src[0, 0] + 0.125 * (src[1, 0] + src[-1, 0] + src[0, 1] + src[0, -1])


def upwind(src, dst):
    dst[0] = dst[0] + 0.25 * (src[0, 0] - src[-1, 0])


def rescale(src, dst):
    dst[0] = 0.75 * src[0]


def setup_synthetic(runtime: StencilRuntime, sizes: Sequence[int], seed: int = 0) -> AppInstance:
    _require_2d("synthetic", sizes)
    stencils = {
        "point": runtime.decl_stencil([(0, 0)], "S2D_00"),
        "five": runtime.decl_stencil([(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)], "S2D_5PT"),
        "back": runtime.decl_stencil([(0, 0), (-1, 0)], "S2D_00_M10"),
    }
    names = tuple(f"s{i}" for i in range(SYNTHETIC_DATASETS))
    for i, name in enumerate(names):
        runtime.decl_dat(name, sizes).domain_values()[...] = random_values(tuple(sizes), seed + i)
    return AppInstance("synthetic", runtime, tuple(sizes), names, stencils=stencils)


def enqueue_synthetic(app: AppInstance, n_loops: int):
    """Cycle through smoothing, upwind and point-wise loops over a ring of datasets."""
    rt = app.runtime
    s = app.stencils
    names = app.datasets
    inner = app.interior()
    for i in range(n_loops):
        src, dst = names[i % len(names)], names[(i + 1) % len(names)]
        kind = i % 3
        if kind == 0:
            rt.par_loop(smooth, inner, [arg_dat(src, s["five"], R), arg_dat(dst, s["point"], W)])
        elif kind == 1:
            rt.par_loop(upwind, inner, [arg_dat(src, s["back"], R), arg_dat(dst, s["point"], RW)])
        else:
            rt.par_loop(rescale, inner, [arg_dat(src, s["point"], R), arg_dat(dst, s["point"], W)])
    app.loops_enqueued += n_loops
    app.iterations += 1


def app_synthetic(runtime: StencilRuntime, sizes: Sequence[int], n_loops: int = 153, seed: int = 0) -> AppInstance:
    app = setup_synthetic(runtime, sizes, seed)
    enqueue_synthetic(app, n_loops)
    return app


def build_app(name: str, runtime: StencilRuntime, sizes: Sequence[int], iterations: int,
              variant: Optional[str] = None, seed: int = 0, n_loops: int = 153) -> AppInstance:
    """Set up an app by name and enqueue (or, for minihydro, run) its iterations."""
    if name == "jacobi2d":
        return app_jacobi(runtime, sizes, iterations, variant or "copy", seed)
    if name == "minihydro":
        return app_minihydro(runtime, sizes, iterations, seed)
    if name == "twoloop":
        return app_two_loop(runtime, sizes, iterations, seed)
    if name == "synthetic":
        return app_synthetic(runtime, sizes, n_loops, seed)
    raise MeshError(f"unknown app '{name}' (choose from {', '.join(APPS)})")
