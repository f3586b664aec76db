"""Configuration for the loop-chain tiling runtime."""

import os

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value in (None, ""):
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


# Tile size selection
DEFAULT_CACHE_KB = _env_int("LOOPCHAIN_CACHE_KB", 20480)  # Last-level cache, 20 MiB
DEFAULT_THREADS = _env_int("LOOPCHAIN_THREADS", 1)        # Workers inside one (tile, loop)

# Halo padding allocated per face on top of the widest stencil reach.
# Observed skew in long chains stays around 12-14 points per direction.
SKEW_ALLOWANCE = _env_int("LOOPCHAIN_SKEW_ALLOWANCE", 16)

# Lazy queue: flush the whole queue when a reduction result is fetched,
# instead of only the prefix ending at the reducing loop
FLUSH_WHOLE_QUEUE_ON_FETCH = _env_bool("LOOPCHAIN_FLUSH_WHOLE_QUEUE", False)

# Storage is always float64; this is the size used for bytes-moved reporting
ELEM_BYTES = 8

# Benchmark applications
JACOBI_WEIGHTS = (0.5, 0.125, 0.125, 0.125, 0.125)  # centre, north, south, east, west
HYDRO_DT = 0.01

# Oracle validators only run on small instances
ORACLE_MAX_POINTS_PER_DIM = 64

# Relative tolerance for reductions whose summation order differs
REDUCTION_RTOL = 1e-12

# Results database
RESULTS_DB_PATH = os.getenv("LOOPCHAIN_DB_PATH", "loopchain_runs.db")

# Logging
LOG_LEVEL = os.getenv("LOOPCHAIN_LOG_LEVEL", "WARNING")
