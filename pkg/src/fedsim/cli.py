"""Batch CLI: run one experiment, sweep a config axis, or summarize run dirs.

Every command exits 0 on success and nonzero with a message on stderr for
any error. The output root is, in order of precedence: --out, the
FEDSIM_OUT environment variable, then ./runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import config_from_dict, echo_config, parse_config
from .errors import ConfigurationError, InputError
from .orchestrator import SWEEP_AXES, apply_axis, run_experiment, sweep
from .report import summarize, sweep_csv_text, write_outputs
from .seeding import derive_seed

ENV_OUT = "FEDSIM_OUT"


def _output_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(ENV_OUT, "runs"))


def _load_config(path: str, seed: int | None):
    cfg = parse_config(path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    run_dir = _output_root(args.out) / f"{Path(args.config).stem}_seed{cfg.master_seed}"
    result = run_experiment(cfg, workers=args.workers)
    bundle = write_outputs(result, cfg, run_dir)
    print(bundle.run_dir)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    try:
        values = [float(v) for v in args.values.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigurationError(f"--values must be comma-separated numbers: {exc}") from exc
    points = sweep(cfg, args.axis, values, repeats=args.repeats, workers=args.workers)
    root = _output_root(args.out) / f"{Path(args.config).stem}_{args.axis}"
    for point in points:
        for rep, result in enumerate(point.results):
            run_dir = root / f"{args.axis}={point.value:g}" / f"rep{rep}"
            run_cfg = dataclasses.replace(
                apply_axis(cfg, point.axis, point.value),
                master_seed=_rep_seed(cfg.master_seed, rep),
            )
            write_outputs(result, run_cfg, run_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text(sweep_csv_text(points))
    print(root)
    return 0


def _rep_seed(master_seed: int, rep: int) -> int:
    return master_seed if rep == 0 else derive_seed(master_seed, "sweep_rep", rep)


def cmd_summarize(args) -> int:
    entries = []
    for d in args.dirs:
        run_dir = Path(d)
        summary = run_dir / "summary.json"
        echo = run_dir / "config_echo.json"
        if not summary.exists() or not echo.exists():
            raise InputError(f"{run_dir} is not a run directory (missing summary/config echo)")
        cfg = config_from_dict(json.loads(echo.read_text()))
        payload = json.loads(summary.read_text())
        entries.append((cfg, _result_from_dict(payload)))
    table = summarize(entries)
    print(table.csv if args.csv else table.text, end="")
    return 0


def _result_from_dict(payload: dict):
    from .orchestrator import EpochRecord, RunResult

    trace = tuple(
        EpochRecord(
            round=r["round"],
            accuracy=r["accuracy"],
            asr=r["asr"],
            alpha=r["alpha"],
            delta=r["delta"],
            krum_selected=r["krum_selected"],
            selected_is_malicious=r["selected_is_malicious"],
        )
        for r in payload["trace"]
    )
    return RunResult(
        trace=trace,
        final_train_acc=payload["final_train_acc"],
        final_train_asr=payload["final_train_asr"],
        train_attack_success=payload["train_attack_success"],
        ft_acc=payload["ft_acc"],
        ft_asr=payload["ft_asr"],
        acc_diff=payload["acc_diff"],
        ft_attack_success=payload["ft_attack_success"],
    )


def cmd_echo(args) -> int:
    cfg = _load_config(args.config, args.seed)
    print(echo_config(cfg), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated-learning backdoor attack/defense simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config")
    run.add_argument("--out", help=f"output root (default: ${ENV_OUT} or ./runs)")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--workers", type=int, default=1, help="parallel benign clients")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run the config across values of one axis")
    sw.add_argument("config")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated numbers")
    sw.add_argument("--repeats", type=int, default=1)
    sw.add_argument("--out", help=f"output root (default: ${ENV_OUT} or ./runs)")
    sw.add_argument("--seed", type=int, help="override master_seed")
    sw.add_argument("--workers", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    summ = sub.add_parser("summarize", help="tabulate one or more run directories")
    summ.add_argument("dirs", nargs="+")
    summ.add_argument("--csv", action="store_true", help="emit CSV instead of a text table")
    summ.set_defaults(func=cmd_summarize)

    echo = sub.add_parser("echo", help="print the fully-resolved config")
    echo.add_argument("config")
    echo.add_argument("--seed", type=int)
    echo.set_defaults(func=cmd_echo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InputError, FileNotFoundError, OSError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
