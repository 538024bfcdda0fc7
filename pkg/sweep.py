import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from agents import (
    AlgorithmVariant,
    EvaluationSummary,
    Topology,
    TrainedPolicy,
    evaluate_centralized,
    evaluate_decentralized,
    run_joint_detection,
    train_centralized,
    train_decentralized,
)
from checkpoint import Checkpoint, CheckpointMeta, checkpoint_filename, load_checkpoint, save_checkpoint
from config import ExperimentConfig
from database import ResultsDatabase
from metrics import MetricsRow, export_excel, write_metrics
from nn import MlpNet

logger = logging.getLogger(__name__)

VERBS = ("train", "eval", "sweep")

# (вариант, rho обучения, lambda или None)
TrainPoint = Tuple[AlgorithmVariant, float, Optional[float]]


@dataclass
class RunResult:
    verb: str
    rows: List[MetricsRow] = field(default_factory=list)
    metrics_path: Optional[str] = None
    config_path: Optional[str] = None
    excel_path: Optional[str] = None
    checkpoints: List[str] = field(default_factory=list)
    run_id: Optional[int] = None


class SweepRunner:
    """Обучение и тестирование по всем точкам развёртки конфигурации"""

    def __init__(self, exp: ExperimentConfig, db: Optional[ResultsDatabase] = None):
        self.exp = exp
        self.db = db
        self.fingerprint = exp.fingerprint()
        logger.info(f"⚙️ Конфигурация эксперимента {self.fingerprint[:12]}:\n{exp.to_json()}")

    def train_points(self) -> Iterator[TrainPoint]:
        rhos = [self.exp.train_rho] if self.exp.train_rho is not None else self.exp.rho
        for variant in self.exp.variants:
            for rho in rhos:
                if variant == AlgorithmVariant.DECENTRALIZED:
                    for lam in self.exp.lambda_cost:
                        yield variant, rho, lam
                else:
                    yield variant, rho, None

    def checkpoint_path(self, point: TrainPoint) -> str:
        variant, rho, lam = point
        return os.path.join(self.exp.checkpoint_dir, checkpoint_filename(variant.value, self.exp.reward_kind, rho, lam))

    def _expected_dims(self, variant: AlgorithmVariant) -> Tuple[int, int]:
        n = self.exp.n
        return (2 ** n if variant == AlgorithmVariant.CENTRAL_JOINT else n), n

    # ===== Обучение =====

    def train_one(self, point: TrainPoint) -> TrainedPolicy:
        variant, rho, lam = point
        dep = self.exp.dependence(rho)
        cfg = self.exp.train_config(variant, lam)
        if variant == AlgorithmVariant.DECENTRALIZED:
            return train_decentralized(cfg, dep, self.exp.p, self.exp.cost(lam))
        return train_centralized(cfg, variant, dep, self.exp.p)

    def train(self) -> Dict[TrainPoint, str]:
        """Обучает политику для каждой точки обучения и сохраняет чекпоинты"""
        saved = {}
        for point in self.train_points():
            variant, rho, lam = point
            policy = self.train_one(point)
            meta = CheckpointMeta(
                variant=variant.value,
                reward_kind=policy.reward_kind.value,
                fingerprint=self.fingerprint,
                episodes=policy.episodes_trained,
                extra={"rho": rho, "lambda_cost": lam, "n": self.exp.n, "groups": self.exp.groups,
                       "q": self.exp.q, "p": self.exp.p},
            )
            saved[point] = save_checkpoint(self.checkpoint_path(point), policy.actor, policy.critic, meta)
        return saved

    # ===== Тестирование =====

    def load(self, point: TrainPoint) -> Checkpoint:
        input_dim, output_dim = self._expected_dims(point[0])
        ckpt = load_checkpoint(self.checkpoint_path(point), input_dim, output_dim)
        if ckpt.meta.fingerprint != self.fingerprint:
            logger.warning(
                f"⚠️ Чекпоинт {self.checkpoint_path(point)} получен с другой конфигурацией "
                f"({ckpt.meta.fingerprint[:12]})"
            )
        return ckpt

    def _evaluate_point(self, actor: MlpNet, variant: AlgorithmVariant, topology: str, rho: float,
                        upsilon: float) -> EvaluationSummary:
        exp = self.exp
        dep = exp.dependence(rho)
        kwargs = dict(seed=exp.seed, greedy=exp.greedy, workers=exp.workers)
        if variant.is_centralized:
            return evaluate_centralized(actor, variant, dep, exp.p, upsilon, exp.eval_episodes, exp.k_max, **kwargs)
        if topology == "joint":
            return run_joint_detection(actor, dep, exp.p, upsilon, exp.eval_episodes, exp.k_max, **kwargs)
        preset = {"shared": Topology.shared, "local": Topology.local, "ring": Topology.ring}[topology]
        return evaluate_decentralized(actor, preset(dep.n), dep, exp.p, upsilon, exp.eval_episodes, exp.k_max,
                                      **kwargs)

    def evaluate(self, actors: Optional[Dict[TrainPoint, MlpNet]] = None) -> List[MetricsRow]:
        """
        Строки метрик в детерминированном порядке: вариант, rho обучения,
        lambda, rho тестирования, топология, upsilon.
        """
        exp = self.exp
        rows = []
        for point in self.train_points():
            variant, train_rho, lam = point
            actor = actors[point] if actors is not None else self.load(point).actor.net
            eval_rhos = exp.rho if exp.train_rho is not None else [train_rho]
            topologies = exp.topology if variant == AlgorithmVariant.DECENTRALIZED else ["centralized"]
            for rho in eval_rhos:
                for topology in topologies:
                    for upsilon in exp.upsilon:
                        summary = self._evaluate_point(actor, variant, topology, rho, upsilon)
                        rows.append(MetricsRow.from_summary(
                            summary,
                            seed=exp.seed,
                            variant=variant.value,
                            reward_kind=exp.reward_kind,
                            topology=topology,
                            upsilon=upsilon,
                            rho=rho,
                            lambda_cost=lam,
                            eta=exp.eta if variant == AlgorithmVariant.DECENTRALIZED else None,
                        ))
        return rows

    # ===== Запуск целиком =====

    def _write_config(self) -> str:
        stem, _ = os.path.splitext(self.exp.output)
        path = stem + ".config.json"
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.exp.to_json() + "\n")
        return path

    def run(self, verb: str = "sweep") -> RunResult:
        if verb not in VERBS:
            raise ValueError(f"Неизвестная команда {verb}, ожидалось одно из {VERBS}")
        result = RunResult(verb=verb, config_path=self._write_config())

        actors = None
        if verb in ("train", "sweep"):
            saved = self.train()
            result.checkpoints = list(saved.values())
            actors = {point: self.load(point).actor.net for point in saved}
        if verb in ("eval", "sweep"):
            result.rows = self.evaluate(actors)
            result.metrics_path = write_metrics(result.rows, self.exp.output)
            if self.exp.excel:
                stem, _ = os.path.splitext(self.exp.output)
                result.excel_path = export_excel(result.rows, stem + ".xlsx")

        if self.db is not None:
            result.run_id = self.db.record_run(verb, self.fingerprint, self.exp.to_json(), result.rows)
        logger.info(f"✅ {verb} завершён: {len(result.checkpoints)} чекпоинтов, {len(result.rows)} строк метрик")
        return result


def run(exp: ExperimentConfig, verb: str = "sweep", db_path: Optional[str] = None) -> RunResult:
    """Точка входа для одного запуска; при заданном db_path запуск пишется в реестр"""
    db = ResultsDatabase(db_path) if db_path else None
    return SweepRunner(exp, db).run(verb)
