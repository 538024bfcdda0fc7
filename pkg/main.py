import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import pandas as pd

from agents import TrainConfigError
from belief import JointBeliefTooLargeError
from checkpoint import CheckpointError, inspect_checkpoint
from config import ExperimentConfigError, config, experiment_field_names, load_experiment_config
from database import init_database
from sweep import run

# Настройка логирования
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=logging.INFO
)
logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130


def setup_logging():
    """Уровень из LOG_LEVEL и запись логов в файл (папка logs создаётся в setup_dirs)"""
    logging.getLogger().setLevel(config.LOG_LEVEL)
    log_file = os.path.join(config.LOGS_DIR, "sensing.log")
    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    logging.getLogger().addHandler(file_handler)
    logger.info(f"Логи записываются в {log_file}")


def _add_experiment_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("config", nargs="?", help="файл конфигурации KEY=value")
    # Флаги повторяют поля ExperimentConfig; значения разбираются так же, как в файле
    for name in experiment_field_names():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE")
    parser.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="переопределение любого параметра (можно повторять)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensing",
        description="Обнаружение аномалий с управляемым наблюдением: обучение и тестирование политик",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, help_text in (
        ("train", "обучить политики и сохранить чекпоинты"),
        ("eval", "протестировать сохранённые политики и записать метрики"),
        ("sweep", "обучение и тестирование по всем точкам развёртки"),
    ):
        _add_experiment_arguments(sub.add_parser(verb, help=help_text))
    _add_experiment_arguments(sub.add_parser("run", help="то же, что sweep"))

    inspect = sub.add_parser("inspect-checkpoint", help="показать заголовок чекпоинта")
    inspect.add_argument("path")

    runs = sub.add_parser("runs", help="последние запуски из реестра")
    runs.add_argument("--limit", type=int, default=20)
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {name: getattr(args, name) for name in experiment_field_names() if getattr(args, name) is not None}
    for assignment in args.assignments:
        key, sep, value = assignment.partition("=")
        if not sep:
            raise ExperimentConfigError([f"--set: ожидалось KEY=VALUE, получено '{assignment}'"])
        overrides[key.strip()] = value
    return overrides


def _print_runs(limit: int):
    if not config.RESULTS_DB_PATH:
        print("Реестр запусков отключён (RESULTS_DB_PATH пуст)")
        return
    runs = init_database(config.RESULTS_DB_PATH).list_runs(limit)
    if not runs:
        print("Запусков пока нет")
        return
    print(pd.DataFrame(runs).to_string(index=False))


def dispatch(args: argparse.Namespace) -> int:
    if args.verb == "inspect-checkpoint":
        print(json.dumps(inspect_checkpoint(args.path), indent=2, sort_keys=True, ensure_ascii=False))
        return 0
    if args.verb == "runs":
        _print_runs(args.limit)
        return 0

    exp = load_experiment_config(args.config, collect_overrides(args))
    verb = "sweep" if args.verb == "run" else args.verb
    result = run(exp, verb, db_path=config.RESULTS_DB_PATH or None)
    if result.metrics_path:
        logger.info(f"📄 Метрики: {result.metrics_path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Основная функция запуска"""
    args = build_parser().parse_args(argv)

    # Проверка конфигурации
    try:
        config.validate()
        config.setup_dirs()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        print(f"Ошибка конфигурации: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging()

    try:
        return dispatch(args)
    except KeyboardInterrupt:
        logger.info("Received interrupt signal, shutting down...")
        return EXIT_INTERRUPTED
    except (ExperimentConfigError, TrainConfigError, JointBeliefTooLargeError) as e:
        logger.error(f"❌ Ошибка конфигурации: {e}")
        detail = "; ".join(e.problems) if isinstance(e, ExperimentConfigError) else " ".join(str(e).split())
        print(f"Ошибка конфигурации: {detail}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"❌ Необработанная ошибка: {e}", exc_info=True)
        print(f"Ошибка: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
