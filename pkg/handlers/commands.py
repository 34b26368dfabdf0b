"""
Обработчики подкоманд командной строки
"""
import argparse
import logging
import sys
from typing import List, Optional

from config import OUTPUT_DIR, THREADS
from engine import experiment_engine
from engine.experiment_engine import ExperimentEngine
from storage.repository import ReportRepository
from transport.errors import ConfigError, TransportError
from utils.config_utils import EXPERIMENTS, RunConfig, parse_config
from utils.logger import logger, set_level
from utils.report_texts import format_config_errors, format_report

# Коды завершения
EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG_FAILED = 2

SUBCOMMAND_HELP = {
    "solve": "одно решение (жёсткое или мягкое)",
    "kr": "отображение Кнёте-Розенблатта",
    "sweep-hard": "развёртка по ε для жёсткой задачи",
    "sweep-soft": "развёртка по (ε, λ) для мягкой задачи",
    "diagram": "диаграмма пределов",
    "kl-decay": "убывание KL против 2M/λ",
    "dynamic": "интерполяция смещений и проверки динамики",
    "stability": "устойчивость при сглаженных маргиналах",
    "diagonal": "диагональная последовательность (ε, λ)",
}


def build_parser() -> argparse.ArgumentParser:
    """Парсер с подкомандой на каждый эксперимент"""
    parser = argparse.ArgumentParser(prog="krlimits", description="Пределы Кнёте-Розенблатта для взвешенного OT")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub = subparsers.add_parser(name, help=SUBCOMMAND_HELP[name])
        sub.add_argument("--config", required=True, help="путь к JSON/YAML конфигурации")
        sub.add_argument("--out", default=None, help=f"директория отчёта (по умолчанию из конфигурации или {OUTPUT_DIR})")
        sub.add_argument("--threads", type=int, default=None, help=f"размер пула ячеек (по умолчанию {THREADS})")
        sub.add_argument("--quiet", action="store_true", help="только предупреждения, без сводок")
    return parser


async def run(config: RunConfig, out_dir: Optional[str] = None, threads: Optional[int] = None, quiet: bool = False) -> int:
    """
    Выполнить эксперимент и записать отчёт

    Отчёт пишется и при ошибке ячеек, чтобы частичные результаты сохранились.

    Returns:
        0, если все ячейки выполнены; 1 иначе
    """
    engine = experiment_engine if threads is None else ExperimentEngine(threads)
    report = await engine.run(config)
    try:
        ReportRepository(out_dir or config.output_dir).write_report(report)
    except OSError as e:
        logger.error(f"Не удалось записать отчёт: {e}", exc_info=True)
        return EXIT_RUN_FAILED

    if not quiet:
        for line in format_report(report):
            print(line)
    if report.status != "ok":
        logger.error(f"Эксперимент {config.experiment}: {report.error}")
        return EXIT_RUN_FAILED
    return EXIT_OK


async def handle(argv: Optional[List[str]] = None) -> int:
    """Разобрать аргументы, загрузить конфигурацию и выполнить подкоманду"""
    args = build_parser().parse_args(argv)
    if args.quiet:
        set_level(logging.WARNING)
    if args.threads is not None and args.threads < 1:
        print(format_config_errors(["--threads: ожидается целое число ≥ 1"]), file=sys.stderr)
        return EXIT_CONFIG_FAILED

    try:
        config = parse_config(args.config, args.command)
    except ConfigError as e:
        logger.error(f"Конфигурация {args.config} невалидна: {len(e.issues)} ошибок")
        print(format_config_errors(e.issues), file=sys.stderr)
        return EXIT_CONFIG_FAILED

    try:
        return await run(config, args.out, args.threads, args.quiet)
    except TransportError as e:
        logger.error(f"Ошибка выполнения: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        return EXIT_RUN_FAILED
