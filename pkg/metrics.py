import logging
import math
import os
from dataclasses import astuple, dataclass, fields
from typing import Optional, Sequence

import pandas as pd

from agents import EvaluationSummary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRow:
    """Одна точка развёртки: вариант x топология x upsilon x rho x lambda"""
    seed: int
    variant: str
    reward_kind: str
    topology: str
    upsilon: float
    rho: float
    lambda_cost: Optional[float]
    eta: Optional[float]
    accuracy: float
    mean_stopping_time: float
    mean_obs_per_unit_time: float
    episodes: int
    timeouts: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy должна лежать в [0, 1], получено {self.accuracy}")
        if not math.isnan(self.mean_stopping_time) and self.mean_stopping_time < 1.0:
            raise ValueError(f"mean_stopping_time должно быть >= 1, получено {self.mean_stopping_time}")

    @classmethod
    def from_summary(cls, summary: EvaluationSummary, *, seed: int, variant: str, reward_kind: str,
                     topology: str, upsilon: float, rho: float, lambda_cost: Optional[float] = None,
                     eta: Optional[float] = None) -> "MetricsRow":
        return cls(
            seed=seed,
            variant=variant,
            reward_kind=reward_kind,
            topology=topology,
            upsilon=upsilon,
            rho=rho,
            lambda_cost=lambda_cost,
            eta=eta,
            accuracy=summary.accuracy,
            mean_stopping_time=summary.mean_stopping_time,
            mean_obs_per_unit_time=summary.mean_obs_per_unit_time,
            episodes=summary.episodes,
            timeouts=summary.timeouts,
        )


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]

# Ширина колонок в Excel-выгрузке
_EXCEL_WIDTHS = {
    "variant": 16, "reward_kind": 12, "topology": 14, "accuracy": 12,
    "mean_stopping_time": 20, "mean_obs_per_unit_time": 24,
}


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([astuple(r) for r in rows], columns=METRICS_COLUMNS)


def write_metrics(rows: Sequence[MetricsRow], path: str) -> str:
    """CSV с фиксированным заголовком, 6 значащих цифр, пропуски - пустые ячейки"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    metrics_frame(rows).to_csv(path, index=False, float_format="%.6g", na_rep="", lineterminator="\n")
    logger.info(f"📝 Метрики записаны: {path} ({len(rows)} строк)")
    return path


def read_metrics(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def export_excel(rows: Sequence[MetricsRow], path: str) -> str:
    """Копия метрик в xlsx для просмотра"""
    df = metrics_frame(rows)
    with pd.ExcelWriter(path, engine='openpyxl') as writer:
        df.to_excel(writer, index=False, sheet_name='Метрики')
        ws = writer.sheets['Метрики']
        for idx, column in enumerate(METRICS_COLUMNS):
            letter = ws.cell(row=1, column=idx + 1).column_letter
            ws.column_dimensions[letter].width = _EXCEL_WIDTHS.get(column, 10)
    logger.info(f"📊 Excel-выгрузка метрик: {path}")
    return path
