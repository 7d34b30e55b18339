#!/usr/bin/env python3
"""
nett-cli — Лаборатория NETT: суперразрешение карт глубины с обученным регуляризатором.

Использование:
    python3 nett_cli.py generate --config configs/desk.cfg [--force]
    python3 nett_cli.py train    --config configs/desk.cfg
    python3 nett_cli.py optimize --config configs/desk.cfg [--input scene:0|file.pfm] [--format pfm]
    python3 nett_cli.py evaluate --config configs/desk.cfg [--checkpoint PATH]
    python3 nett_cli.py probe    --config configs/desk.cfg --kind coercive_skip
    python3 nett_cli.py audit    --config configs/desk.cfg
    python3 nett_cli.py table1   --config configs/table1 [--out runs/table1]

Коды выхода: 0 успех, 2 ошибка конфигурации, 3 нет артефакта, 4 расходимость.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.errors import NettError  # noqa: E402
from core.settings import setup_logging  # noqa: E402

logger = logging.getLogger("nett.cli")

EXIT_OK = 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nett-cli", description="Лаборатория NETT (настольный масштаб)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="файл конфигурации (для table1 — каталог)")
        p.add_argument("--seed", type=int, default=None, help="мастер-seed")
        p.add_argument("--out", default=None, help="корень каталогов прогонов")
        return p

    g = add("generate", "построить датасет")
    g.add_argument("--force", action="store_true", help="перезаписать существующий датасет")
    add("train", "предобучить регуляризатор")
    for name, help_text in (("optimize", "NETT-оптимизация одного входа"),
                            ("evaluate", "сравнение Bilinear / CNN / NETT"),
                            ("audit", "аудит перекрёстного члена одношаговой аугментации")):
        p = add(name, help_text)
        p.add_argument("--checkpoint", default=None, help="чекпоинт (по умолчанию <run>/train/checkpoint.nett)")
        if name == "optimize":
            p.add_argument("--input", default="scene:0", help="scene:<i> или файл глубины")
            p.add_argument("--format", default="pfm", choices=("png16", "pfm", "raw"), help="формат результата")
            p.add_argument("--input-format", default=None, choices=("png16", "pfm", "raw"))
    p = add("probe", "таблица коэрцитивности")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--kind", required=True, help="scheme1_norm | scheme2_residual | coercive_skip")
    t = add("table1", "все строки матрицы экспериментов из каталога конфигов")
    t.add_argument("--force", action="store_true", help="пересчитать все этапы")
    t.add_argument("--workers", type=int, default=None, help="процессов (по умолчанию NETT_THREADS)")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    from harness import commands
    from harness.experiment import load_experiment
    from harness.table1 import cmd_table1

    if args.command == "table1":
        path = cmd_table1(args.config, out=args.out, seed=args.seed, workers=args.workers, force=args.force)
        print(f"✅ Сводка: {path}")
        return

    cfg = load_experiment(args.config).with_overrides(seed=args.seed, output_dir=args.out)
    if args.command == "generate":
        print(f"✅ Датасет: {commands.cmd_generate(cfg, force=args.force)}")
    elif args.command == "train":
        ckpt, report = commands.cmd_train(cfg)
        print(f"✅ Чекпоинт: {ckpt} (лучшая эпоха {report.best_epoch + 1}/{report.epochs})")
    elif args.command == "optimize":
        result = commands.cmd_optimize(cfg, args.checkpoint, args.input, args.format, args.input_format)
        print(f"✅ Результат: {result.out_dir}")
        if result.correlation is not None:
            corr = result.correlation
            print(f"   Pearson(functional, RMSE_d) = {corr.functional_rmse_d}, "
                  f"Pearson(functional, RMSE_v) = {corr.functional_rmse_v}")
    elif args.command == "evaluate":
        report = commands.cmd_evaluate(cfg, args.checkpoint)
        print(f"✅ Сравнение: {len(report.rows)} сцен, NETT улучшил {report.improved_count}")
    elif args.command == "probe":
        print(f"✅ Пробник: {commands.cmd_probe(cfg, args.kind, args.checkpoint)}")
    elif args.command == "audit":
        report = commands.cmd_audit(cfg, args.checkpoint)
        print(f"✅ Аудит: {report.to_dict()}")


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except NettError as e:
        logger.error(f"❌ {type(e).__name__} [{e.code}]: {e}")
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
