"""Database handler for benchmark run records."""

import sqlite3
from datetime import datetime
from typing import Dict, List, Optional

import config


class ResultsDatabase:
    def __init__(self, db_path: Optional[str] = None):
        self.db_path = db_path or config.RESULTS_DB_PATH
        self.init_db()

    def init_db(self):
        """Initialize database tables."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_time TIMESTAMP NOT NULL,
                app TEXT NOT NULL,
                variant TEXT,
                mode TEXT NOT NULL,
                sizes TEXT NOT NULL,
                iterations INTEGER NOT NULL,
                tile_sizes TEXT,
                ranks TEXT,
                threads INTEGER NOT NULL,
                plan_seconds REAL NOT NULL,
                total_seconds REAL NOT NULL,
                bytes_moved INTEGER NOT NULL,
                bandwidth_gbs REAL NOT NULL,
                messages_sent INTEGER DEFAULT 0,
                bytes_sent INTEGER DEFAULT 0,
                verified INTEGER,
                max_abs_diff REAL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS loop_stats (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                loop_id INTEGER NOT NULL,
                kernel TEXT NOT NULL,
                seconds REAL NOT NULL,
                bytes_moved INTEGER NOT NULL,
                calls INTEGER NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs (id)
            )
        """)

        conn.commit()
        conn.close()

    def add_run(self, app: str, mode: str, sizes, iterations: int, report, variant: Optional[str] = None,
                tile_sizes=None, ranks=None, threads: int = 1, verified: Optional[bool] = None) -> int:
        """Record one CLI run and its per-loop statistics."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            INSERT INTO runs (run_time, app, variant, mode, sizes, iterations, tile_sizes, ranks, threads,
                              plan_seconds, total_seconds, bytes_moved, bandwidth_gbs, messages_sent,
                              bytes_sent, verified, max_abs_diff)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, (datetime.now().isoformat(" "), app, variant, mode, _join(sizes), iterations, _join(tile_sizes), _join(ranks),
              threads, report.plan_seconds, report.total_seconds, report.bytes_moved, report.bandwidth_gbs,
              report.messages_sent, report.bytes_sent,
              None if verified is None else int(verified), report.max_abs_diff))
        run_id = cursor.lastrowid

        # Same kernel in several flushes is stored once per flush
        cursor.executemany("""
            INSERT INTO loop_stats (run_id, loop_id, kernel, seconds, bytes_moved, calls)
            VALUES (?, ?, ?, ?, ?, ?)
        """, [(run_id, s.loop_id, s.kernel, s.seconds, s.bytes_moved, s.calls) for s in report.loop_stats])

        conn.commit()
        conn.close()
        return run_id

    def get_runs(self, app: Optional[str] = None, limit: int = 20) -> List[Dict]:
        """Most recent runs first."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        if app:
            cursor.execute("SELECT * FROM runs WHERE app = ? ORDER BY run_time DESC, id DESC LIMIT ?",
                           (app, limit))
        else:
            cursor.execute("SELECT * FROM runs ORDER BY run_time DESC, id DESC LIMIT ?", (limit,))

        columns = [description[0] for description in cursor.description]
        runs = [dict(zip(columns, row)) for row in cursor.fetchall()]

        conn.close()
        return runs

    def get_loop_stats(self, run_id: int) -> List[Dict]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            SELECT loop_id, kernel, seconds, bytes_moved, calls
            FROM loop_stats
            WHERE run_id = ?
            ORDER BY id
        """, (run_id,))

        columns = [description[0] for description in cursor.description]
        stats = [dict(zip(columns, row)) for row in cursor.fetchall()]

        conn.close()
        return stats

    def get_performance_stats(self, app: Optional[str] = None) -> Dict:
        """Aggregate statistics per execution mode."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        where, params = ("WHERE app = ?", (app,)) if app else ("", ())

        cursor.execute(f"SELECT COUNT(*) FROM runs {where}", params)
        total_runs = cursor.fetchone()[0]

        if total_runs == 0:
            conn.close()
            return {
                "total_runs": 0,
                "verified_runs": 0,
                "failed_verifications": 0,
                "modes": {},
            }

        cursor.execute(f"SELECT COUNT(*) FROM runs {where} {'AND' if where else 'WHERE'} verified = 1", params)
        verified = cursor.fetchone()[0]

        cursor.execute(f"SELECT COUNT(*) FROM runs {where} {'AND' if where else 'WHERE'} verified = 0", params)
        failed = cursor.fetchone()[0]

        cursor.execute(f"""
            SELECT mode, COUNT(*), AVG(total_seconds), AVG(bandwidth_gbs), AVG(plan_seconds / total_seconds),
                   SUM(messages_sent)
            FROM runs {where}
            GROUP BY mode
            ORDER BY mode
        """, params)
        modes = {
            mode: {
                "runs": count,
                "avg_seconds": avg_seconds or 0,
                "avg_bandwidth_gbs": avg_bw or 0,
                "avg_plan_fraction": avg_plan or 0,
                "messages_sent": messages or 0,
            }
            for mode, count, avg_seconds, avg_bw, avg_plan, messages in cursor.fetchall()
        }

        conn.close()

        return {
            "total_runs": total_runs,
            "verified_runs": verified,
            "failed_verifications": failed,
            "modes": modes,
        }


def _join(values) -> Optional[str]:
    return None if values is None else ",".join(str(v) for v in values)
