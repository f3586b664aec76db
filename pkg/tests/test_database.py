"""Unit tests for database module."""

import os
import tempfile

import pytest
from freezegun import freeze_time

from database import ResultsDatabase
from executor import ExecutionReport, LoopStat


@pytest.fixture
def temp_db():
    """Create a temporary database for testing."""
    fd, path = tempfile.mkstemp(suffix='.db')
    os.close(fd)
    db = ResultsDatabase(path)
    yield db
    if os.path.exists(path):
        os.unlink(path)


def make_report(mode="tiled", seconds=2.0, plan_seconds=0.02, messages=0):
    stats = [LoopStat(0, "jacobi_step", seconds=seconds / 2, bytes_moved=1_000_000, calls=4),
             LoopStat(1, "copy_back", seconds=seconds / 2, bytes_moved=1_000_000, calls=4)]
    return ExecutionReport(mode=mode, loop_stats=stats, plan_seconds=plan_seconds, total_seconds=seconds,
                           messages_sent=messages, bytes_sent=messages * 64, max_abs_diff=0.0)


class TestResultsDatabase:
    """Test cases for ResultsDatabase class."""

    def test_init_creates_database(self, temp_db):
        """Test that database initialization creates the file."""
        assert os.path.exists(temp_db.db_path)

    def test_add_run(self, temp_db):
        """Test recording a run."""
        run_id = temp_db.add_run("jacobi2d", "tiled", (64, 64), 10, make_report(), variant="copy",
                                 tile_sizes=(16, 16), threads=2, verified=True)
        assert run_id > 0

        runs = temp_db.get_runs()
        assert len(runs) == 1
        run = runs[0]
        assert run['app'] == "jacobi2d"
        assert run['sizes'] == "64,64"
        assert run['tile_sizes'] == "16,16"
        assert run['ranks'] is None
        assert run['verified'] == 1
        assert run['bytes_moved'] == 2_000_000
        assert run['bandwidth_gbs'] == pytest.approx(0.001)

    def test_loop_stats(self, temp_db):
        """Test that per-loop statistics are stored in order."""
        run_id = temp_db.add_run("jacobi2d", "tiled", (64, 64), 10, make_report())
        stats = temp_db.get_loop_stats(run_id)
        assert [s['kernel'] for s in stats] == ["jacobi_step", "copy_back"]
        assert stats[0]['calls'] == 4

    def test_runs_newest_first(self, temp_db):
        """Test ordering and filtering of run history."""
        with freeze_time("2026-01-01 10:00:00"):
            temp_db.add_run("jacobi2d", "untiled", (64, 64), 10, make_report("untiled"))
        with freeze_time("2026-01-02 10:00:00"):
            temp_db.add_run("minihydro", "tiled", (48, 48), 3, make_report())
        with freeze_time("2026-01-03 10:00:00"):
            temp_db.add_run("jacobi2d", "tiled", (64, 64), 10, make_report())

        runs = temp_db.get_runs()
        assert [r['app'] for r in runs] == ["jacobi2d", "minihydro", "jacobi2d"]
        assert runs[0]['run_time'].startswith("2026-01-03")
        assert len(temp_db.get_runs(app="jacobi2d")) == 2
        assert len(temp_db.get_runs(limit=1)) == 1

    def test_performance_stats_empty(self, temp_db):
        """Test statistics of an empty database."""
        stats = temp_db.get_performance_stats()
        assert stats['total_runs'] == 0
        assert stats['modes'] == {}

    def test_performance_stats(self, temp_db):
        """Test aggregates per mode."""
        temp_db.add_run("jacobi2d", "tiled", (64, 64), 10, make_report(seconds=2.0, plan_seconds=0.2),
                        verified=True)
        temp_db.add_run("jacobi2d", "tiled", (64, 64), 10, make_report(seconds=4.0, plan_seconds=0.2),
                        verified=False)
        temp_db.add_run("jacobi2d", "distributed-tiled", (64, 64), 10,
                        make_report("distributed-tiled", messages=2), ranks=(2, 1))
        temp_db.add_run("minihydro", "untiled", (48, 48), 3, make_report("untiled"))

        stats = temp_db.get_performance_stats(app="jacobi2d")
        assert stats['total_runs'] == 3
        assert stats['verified_runs'] == 1
        assert stats['failed_verifications'] == 1
        tiled = stats['modes']['tiled']
        assert tiled['runs'] == 2
        assert tiled['avg_seconds'] == pytest.approx(3.0)
        assert tiled['avg_plan_fraction'] == pytest.approx(0.075)
        assert stats['modes']['distributed-tiled']['messages_sent'] == 2
        assert 'untiled' not in stats['modes']
        assert temp_db.get_performance_stats()['total_runs'] == 4
