"""Byte-deterministic CSV/JSON reports: aggregates, alpha sweeps, fallback tables, learning curves."""

from __future__ import annotations

import csv
import io
import itertools
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .chain import TaskSpec
from .domain import check_alpha
from .executor import Runtime, TaskResult, run_battery
from .rules import RuleTable

DEFAULT_ALPHAS = (0.0, 0.5, 1.0, 1.5, 2.0)


def fmt(x: float, digits: int = 6) -> str:
    # fixed precision keeps repeated runs byte-identical and avoids "-0.000000"
    s = f"{x:.{digits}f}"
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def csv_text(header: Sequence[str], rows: Iterable[Mapping | Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[h] for h in header] if isinstance(row, Mapping) else row)
    return buf.getvalue()


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not text.endswith("\n"):
        text += "\n"
    path.write_text(text, encoding="utf-8", newline="")
    return path


def write_json(path: str | Path, doc) -> Path:
    return write_text(path, json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False))


AGGREGATE_HEADER = ("task", "subtasks", "fast", "slow", "failed", "total_cost", "mean_quality")


def aggregate_rows(results: Sequence[TaskResult]) -> list[dict]:
    rows = []
    for r in results:
        subs = r.subtasks
        rows.append({
            "task": r.task_id,
            "subtasks": len(subs),
            "fast": sum(1 for s in subs if s.mode == "fast" and s.status == "success"),
            "slow": sum(1 for s in subs if s.mode == "slow"),
            "failed": sum(1 for s in subs if s.status != "success"),
            "total_cost": fmt(r.total_cost),
            "mean_quality": fmt(r.mean_quality),
        })
    return rows


@dataclass(frozen=True)
class SweepRow:
    mode: str
    alpha: float
    mean_cost: float
    mean_quality: float

    def row(self) -> dict:
        return {"mode": self.mode, "alpha": fmt(self.alpha, 2), "mean_cost": fmt(self.mean_cost),
                "mean_quality": fmt(self.mean_quality)}


SWEEP_HEADER = ("mode", "alpha", "mean_cost", "mean_quality")


def sweep_alpha(tasks: Sequence[TaskSpec], table: RuleTable, rt: Runtime, alphas: Iterable[float] = DEFAULT_ALPHAS,
                mode: str = "adaptive") -> list[SweepRow]:
    """Mean per-task cost and quality of the battery at each alpha."""
    alphas = [check_alpha(a) for a in alphas]
    if not tasks:
        raise ValueError("sweep needs at least one task")
    out = []
    for a in alphas:
        results, _ = run_battery(tasks, table, a, rt, mode)
        out.append(SweepRow(mode, a, sum(r.total_cost for r in results) / len(results),
                            sum(r.mean_quality for r in results) / len(results)))
    return out


def non_increasing(values: Sequence[float], tol: float = 1e-9) -> bool:
    return all(b <= a + tol for a, b in itertools.pairwise(values))


FALLBACK_HEADER = ("subtask_kind", "total", "fast", "slow", "vlm_failure", "no_subroutine")


def fallback_rows(stats: Mapping) -> list[dict]:
    rows = [{"subtask_kind": kind, **counts} for kind, counts in stats["by_subtask_kind"].items()]
    n = stats["subtasks"]
    rows.append({
        "subtask_kind": "ALL",
        "total": n,
        "fast": sum(r["fast"] for r in rows),
        "slow": sum(r["slow"] for r in rows),
        "vlm_failure": sum(r["vlm_failure"] for r in rows),
        "no_subroutine": sum(r["no_subroutine"] for r in rows),
    })
    return rows


def fallback_summary(stats: Mapping) -> dict:
    return {
        "subtasks": stats["subtasks"],
        "fast_pct": round(stats["fast_pct"], 6),
        "slow_pct": round(stats["slow_pct"], 6),
        "vlm_failure_pct": round(stats["by_reason"]["vlm_failure"], 6),
        "no_subroutine_pct": round(stats["by_reason"]["no_subroutine"], 6),
    }


CURVE_HEADER = ("tasks_explored", "fast_success_rate", "fallback_rate", "mean_cost", "mean_quality", "rules",
                "version")
