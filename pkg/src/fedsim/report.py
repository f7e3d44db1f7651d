"""Result emission: per-round CSV traces, summary JSON, SVG charts, and
grid summaries in the training-vs-fine-tuning table shape.

Charts are rendered with matplotlib straight to SVG next to the CSV they
visualize. Path simplification is disabled and every trace line carries a
stable ``gid``, so a chart can be audited against its CSV row-for-row.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .config import echo_config  # noqa: E402
from .errors import InputError  # noqa: E402
from .orchestrator import EpochRecord, ExperimentConfig, RunResult, SweepPoint  # noqa: E402

TRACE_HEADER = "round,accuracy,asr,alpha,delta,selected_id,selected_is_malicious"
CHART_METRICS = ("accuracy", "asr", "alpha", "delta")


@dataclass(frozen=True)
class OutputBundle:
    run_dir: Path
    trace_csv: Path
    summary_json: Path
    config_echo: Path
    charts: tuple[Path, ...]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def trace_csv_text(trace: tuple[EpochRecord, ...]) -> str:
    lines = [TRACE_HEADER]
    for rec in trace:
        lines.append(
            ",".join(
                _cell(v)
                for v in (
                    rec.round,
                    rec.accuracy,
                    rec.asr,
                    rec.alpha,
                    rec.delta,
                    rec.krum_selected,
                    rec.selected_is_malicious,
                )
            )
        )
    return "\n".join(lines) + "\n"


def result_to_dict(result: RunResult) -> dict:
    return {
        "trace": [
            {
                "round": r.round,
                "accuracy": r.accuracy,
                "asr": r.asr,
                "alpha": r.alpha,
                "delta": r.delta,
                "krum_selected": r.krum_selected,
                "selected_is_malicious": r.selected_is_malicious,
            }
            for r in result.trace
        ],
        "final_train_acc": result.final_train_acc,
        "final_train_asr": result.final_train_asr,
        "train_attack_success": result.train_attack_success,
        "ft_acc": result.ft_acc,
        "ft_asr": result.ft_asr,
        "acc_diff": result.acc_diff,
        "ft_attack_success": result.ft_attack_success,
    }


def summary_json_text(result: RunResult) -> str:
    return json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n"


def _write_chart(rounds: list[int], values: list[float], metric: str, path: Path) -> None:
    rc = {"path.simplify": False, "svg.hashsalt": "fedsim"}
    with plt.rc_context(rc):
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        (line,) = ax.plot(rounds, values, color="#1f77b4", linewidth=1.5)
        line.set_gid(f"trace-{metric}")
        ax.set_xlabel("round")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} per round")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_outputs(result: RunResult, cfg: ExperimentConfig, out_dir: str | Path) -> OutputBundle:
    """Emit trace CSV, summary JSON, config echo, and one SVG per metric trace.

    Metrics that were never recorded (e.g. alpha outside adaptive-Krum runs)
    get no chart; recorded-but-gappy metrics chart only their present rounds.
    """
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    trace_csv = run_dir / "trace.csv"
    trace_csv.write_text(trace_csv_text(result.trace))
    summary_json = run_dir / "summary.json"
    summary_json.write_text(summary_json_text(result))
    config_echo = run_dir / "config_echo.json"
    config_echo.write_text(echo_config(cfg))

    charts = []
    for metric in CHART_METRICS:
        points = [
            (r.round, getattr(r, metric))
            for r in result.trace
            if getattr(r, metric) is not None
        ]
        if not points:
            continue
        chart_path = run_dir / f"{metric}.svg"
        _write_chart([p[0] for p in points], [p[1] for p in points], metric, chart_path)
        charts.append(chart_path)

    return OutputBundle(run_dir, trace_csv, summary_json, config_echo, tuple(charts))


def defense_label(cfg: ExperimentConfig) -> str:
    """Aggregation rule, suffixed with '+' when CSFT runs afterwards."""
    return cfg.aggregator.rule + ("+" if cfg.csft is not None else "")


def _pct(value: float | None) -> str:
    return "" if value is None else f"{100.0 * value:.2f}"


@dataclass(frozen=True)
class SummaryTable:
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    @property
    def text(self) -> str:
        widths = [
            max(len(self.header[i]), *(len(r[i]) for r in self.rows)) if self.rows else len(self.header[i])
            for i in range(len(self.header))
        ]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*self.header), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in self.rows]
        lines.append("(*) ft ASR under the 50% success threshold: defense success")
        return "\n".join(lines) + "\n"

    @property
    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)
        return buf.getvalue()


GROUP_KEYS = ("defense", "attack", "m")


def summarize(
    entries: list[tuple[ExperimentConfig, RunResult]],
    group_keys: tuple[str, ...] = GROUP_KEYS,
) -> SummaryTable:
    """Grid of results keyed by (defense, attack, m) or a subset, averaged
    over seeds.

    Accuracy/ASR cells are percentages with two decimals; a fine-tuning ASR
    below the 50% success threshold is flagged as a defense success.
    """
    if not entries:
        raise InputError("nothing to summarize")
    unknown = set(group_keys) - set(GROUP_KEYS)
    if unknown:
        raise InputError(f"unknown group key(s): {', '.join(sorted(unknown))}")

    def key_of(cfg: ExperimentConfig) -> tuple:
        parts = {"defense": defense_label(cfg), "attack": cfg.attack.kind, "m": cfg.m}
        return tuple(parts[k] for k in group_keys)

    groups: dict[tuple, list[RunResult]] = {}
    for cfg, result in entries:
        groups.setdefault(key_of(cfg), []).append(result)

    rows = []
    for key, results in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        def mean_of(attr):
            vals = [getattr(r, attr) for r in results]
            return None if any(v is None for v in vals) else float(np.mean(vals))

        ft_asr = mean_of("ft_asr")
        flag = "*" if ft_asr is not None and ft_asr < 0.5 else ""
        rows.append(
            (
                *(str(k) for k in key),
                str(len(results)),
                _pct(mean_of("final_train_acc")),
                _pct(mean_of("final_train_asr")),
                _pct(mean_of("ft_acc")),
                _pct(mean_of("acc_diff")),
                _pct(ft_asr) + flag,
            )
        )
    header = (
        *group_keys,
        "runs",
        "train_acc",
        "train_asr",
        "ft_acc",
        "acc_diff",
        "ft_asr",
    )
    return SummaryTable(header, tuple(rows))


def mean_ci(values: list[float]) -> tuple[float, float]:
    """Mean and 95% confidence half-width (normal approximation)."""
    if not values:
        raise InputError("mean_ci needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 1:
        return float(arr[0]), 0.0
    half = 1.96 * float(arr.std(ddof=1)) / float(np.sqrt(len(arr)))
    return float(arr.mean()), half


def sweep_csv_text(points: list[SweepPoint]) -> str:
    """Per-run rows plus mean/CI aggregate rows for a sweep."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["axis", "value", "rep", "train_acc", "train_asr", "ft_acc", "ft_asr", "acc_diff"]
    )
    for point in points:
        for rep, result in enumerate(point.results):
            writer.writerow(
                [
                    point.axis,
                    point.value,
                    rep,
                    repr(result.final_train_acc),
                    repr(result.final_train_asr),
                    "" if result.ft_acc is None else repr(result.ft_acc),
                    "" if result.ft_asr is None else repr(result.ft_asr),
                    "" if result.acc_diff is None else repr(result.acc_diff),
                ]
            )
    writer.writerow([])
    writer.writerow(["axis", "value", "runs", "mean_acc", "ci_acc", "mean_asr", "ci_asr"])
    for point in points:
        accs = [r.ft_acc if r.ft_acc is not None else r.final_train_acc for r in point.results]
        asrs = [r.ft_asr if r.ft_asr is not None else r.final_train_asr for r in point.results]
        acc_mean, acc_ci = mean_ci(accs)
        asr_mean, asr_ci = mean_ci(asrs)
        writer.writerow(
            [point.axis, point.value, len(point.results),
             repr(acc_mean), repr(acc_ci), repr(asr_mean), repr(asr_ci)]
        )
    return buf.getvalue()
