import sqlite3
import logging
from contextlib import contextmanager
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from metrics import METRICS_COLUMNS, MetricsRow

logger = logging.getLogger(__name__)


class ResultsDatabase:
    """Реестр запусков в SQLite: конфигурация каждого запуска и его метрики"""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self.init_db()

    @contextmanager
    def get_connection(self):
        """Контекстный менеджер для соединения с БД"""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
            conn.commit()
        except Exception as e:
            conn.rollback()
            logger.error(f"Database error: {e}")
            raise
        finally:
            conn.close()

    def init_db(self):
        """Инициализация базы данных"""
        with self.get_connection() as conn:
            cursor = conn.cursor()

            # Таблица запусков
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    verb TEXT NOT NULL,
                    fingerprint TEXT NOT NULL,
                    config TEXT NOT NULL,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            ''')

            # Таблица метрик (одна строка на точку развёртки)
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS metrics (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL,
                    seed INTEGER,
                    variant TEXT,
                    reward_kind TEXT,
                    topology TEXT,
                    upsilon REAL,
                    rho REAL,
                    lambda_cost REAL,
                    eta REAL,
                    accuracy REAL,
                    mean_stopping_time REAL,
                    mean_obs_per_unit_time REAL,
                    episodes INTEGER,
                    timeouts INTEGER,
                    FOREIGN KEY (run_id) REFERENCES runs (id) ON DELETE CASCADE
                )
            ''')

            logger.debug("Results database initialized")

    def record_run(self, verb: str, fingerprint: str, config_json: str,
                   rows: Sequence[MetricsRow] = ()) -> int:
        """Запись запуска и его метрик; возвращает id запуска"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute('''
                INSERT INTO runs (verb, fingerprint, config)
                VALUES (?, ?, ?)
            ''', (verb, fingerprint, config_json))
            run_id = cursor.lastrowid

            placeholders = ", ".join("?" for _ in METRICS_COLUMNS)
            cursor.executemany(
                f"INSERT INTO metrics (run_id, {', '.join(METRICS_COLUMNS)}) VALUES (?, {placeholders})",
                [(run_id, *(getattr(row, c) for c in METRICS_COLUMNS)) for row in rows],
            )

            logger.info(f"🗂 Запуск #{run_id} ({verb}) записан в реестр: {len(rows)} строк метрик")
            return run_id

    def list_runs(self, limit: int = 20) -> List[Dict[str, Any]]:
        """Последние запуски, новые первыми"""
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute('''
                SELECT r.id, r.verb, r.fingerprint, r.created_at, COUNT(m.id) AS metric_rows
                FROM runs r
                LEFT JOIN metrics m ON m.run_id = r.id
                GROUP BY r.id
                ORDER BY r.id DESC
                LIMIT ?
            ''', (limit,))
            return [dict(row) for row in cursor.fetchall()]

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        with self.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT * FROM runs WHERE id = ?", (run_id,))
            row = cursor.fetchone()
            return dict(row) if row else None

    def get_metrics(self, run_id: int) -> pd.DataFrame:
        with self.get_connection() as conn:
            return pd.read_sql_query(
                f"SELECT {', '.join(METRICS_COLUMNS)} FROM metrics WHERE run_id = ? ORDER BY id",
                conn,
                params=(run_id,),
            )


def init_database(db_path: str) -> ResultsDatabase:
    """Инициализация базы данных"""
    return ResultsDatabase(db_path)
