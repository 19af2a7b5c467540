"""moran-lab 命令行：读取运行配置，执行一个任务，写出 summary.json 与任务产物"""
import argparse
import logging
import sys
from typing import List, Optional

import pandas as pd

from config.run_config import load_run_config
from config.settings import set_tolerances, settings
from core.errors import MoranError
from core.model.io import spec_from_block
from core.tasks import TaskContext, get_tasks
from core.utils.data_store import RunStore

logger = logging.getLogger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moran-lab", description="Moran / Fleming–Viot particle approximations: simulate, solve, verify")
    parser.add_argument("--config", required=True, help="YAML run document")
    parser.add_argument("--workers", type=int, default=None, help="worker processes for replicate fan-out")
    parser.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
    parser.add_argument("--out", default=None, help="output directory (default: config output_dir or MORAN_OUTPUT_DIR)")
    parser.add_argument("--tolerance-profile", choices=["default", "strict"], default=None)
    parser.add_argument("--plots", action="store_true", help="also write PNG figures")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _configure_logging(verbose: int):
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, settings.LOG_LEVEL.upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _summary_table(summary: dict) -> str:
    flat = {k: v for k, v in summary.items() if not isinstance(v, (dict, list))}
    frame = pd.DataFrame({"key": list(flat), "value": [str(v) for v in flat.values()]})
    return frame.to_string(index=False)


def run(args: argparse.Namespace) -> int:
    store: Optional[RunStore] = None
    summary: dict = {}
    try:
        config = load_run_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        if config.experiment is not None:
            config = config.model_copy(update={"experiment": config.experiment.model_copy(update={"seed": config.seed})})
        profile = args.tolerance_profile or config.tolerance_profile or settings.TOLERANCE_PROFILE
        set_tolerances(profile, config.tolerances)

        store = RunStore(args.out or config.output_dir or settings.OUTPUT_DIR, config.config_hash(), config.seed)
        store.start_session(config.task)
        spec = spec_from_block(config.model)
        ctx = TaskContext(config, spec, store, workers=args.workers or settings.WORKERS, plots=args.plots)
        task = get_tasks()[config.task_kind]
        logger.info(f"running {config.task} on {spec.name} (seed={config.seed}, profile={profile})")

        summary = {"task": config.task, "model": spec.name, "tolerance_profile": profile}
        summary.update(task.run(ctx))
        summary["status"] = "ok"
        if ctx.report is not None:
            ctx.report.raise_if_failed()
        store.summary(summary)
        print(_summary_table(summary))
        print(f"artifacts: {store.session_dir}")
        return 0
    except MoranError as exc:
        summary.update(status="failed", error=exc.to_dict())
        if store is not None and store.session_dir is not None:
            store.summary(summary)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
