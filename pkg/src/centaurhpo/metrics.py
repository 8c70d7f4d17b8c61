"""Diversity, incumbent traces, and aggregation of studies across seeds.

Diversity metrics read only the numeric coordinates (in unit space) of
successful trials; categorical parameters never enter them.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .runner import StudyLog, TrialRecord
from .space import SearchSpace, normalize

N_BINS = 5
TRIAL_CAP = 300


@dataclass(frozen=True)
class DiversityReport:
    spread: float | None
    pairwise: float | None
    step: float | None
    cells: int
    oom_rate: float
    n_trials: int
    n_successful: int

    def to_dict(self) -> dict:
        return asdict(self)


def _records_and_space(log, space: SearchSpace | None) -> tuple[list[TrialRecord], SearchSpace]:
    if isinstance(log, StudyLog):
        if space is not None and space.digest() != log.header.space_digest:
            raise ValueError("study was run on a different search space")
        return list(log.records), space or log.space
    if space is None:
        raise ValueError("a search space is needed for a bare list of records")
    return list(log), space


def successful_points(records: Iterable[TrialRecord], space: SearchSpace) -> np.ndarray:
    """Unit coordinates of the numeric parameters of successful trials, in trial order."""
    idx = space.continuous_indices
    rows = [normalize(r.config, space)[idx] for r in records if r.ok and r.config is not None]
    return np.array(rows).reshape(len(rows), len(idx))


def spread(points: np.ndarray) -> float | None:
    """Mean over parameters of the population standard deviation."""
    if len(points) == 0:
        return None
    # Shifting by the first point keeps identical columns at exactly zero.
    return float(np.mean(np.std(points - points[0], axis=0)))


def pairwise(points: np.ndarray) -> float | None:
    """Mean Euclidean distance over all unordered pairs."""
    n = len(points)
    if n < 2:
        return None
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(n, k=1)
    return float(np.mean(dist[iu]))


def step(points: np.ndarray) -> float | None:
    """Mean Euclidean distance between consecutive successful trials.

    Failures are dropped first, so the trials on either side of a failure
    count as consecutive.
    """
    if len(points) < 2:
        return None
    return float(np.mean(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def cells(points: np.ndarray, n_bins: int = N_BINS) -> int:
    """Number of distinct cells when every parameter is cut into equal-width bins."""
    if len(points) == 0:
        return 0
    bins = np.minimum(n_bins - 1, np.floor(points * n_bins).astype(int))
    return len({tuple(row) for row in bins})


def diversity(log: StudyLog | Sequence[TrialRecord], space: SearchSpace | None = None) -> DiversityReport:
    records, space = _records_and_space(log, space)
    pts = successful_points(records, space)
    n = len(records)
    failures = sum(not r.ok for r in records)
    return DiversityReport(
        spread=spread(pts),
        pairwise=pairwise(pts),
        step=step(pts),
        cells=cells(pts),
        oom_rate=failures / n if n else 0.0,
        n_trials=n,
        n_successful=len(pts),
    )


@dataclass(frozen=True)
class TracePoint:
    trial_id: int
    cumulative_train_seconds: float
    best_so_far: float
    incumbent: bool


def incumbent_trace(log: StudyLog | Sequence[TrialRecord]) -> list[TracePoint]:
    """Best-so-far after every trial; ``incumbent`` marks trials that set a new best."""
    out = []
    best = math.inf
    elapsed = 0.0
    for r in log:
        elapsed += r.train_seconds
        new = r.objective < best
        best = min(best, r.objective)
        out.append(TracePoint(r.trial_id, elapsed, best, new))
    return out


@dataclass(frozen=True)
class SeedCurve:
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    finals: tuple[float, ...]
    axis: str = "cumulative_train_seconds"

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.finals))

    @property
    def final_std(self) -> float:
        return float(np.std(self.finals))

    def summary(self, digits: int = 4) -> str:
        return mean_std(self.finals, digits)

    def rows(self) -> list[dict]:
        return [{self.axis: float(x), "mean": float(m), "std": float(s)} for x, m, s in zip(self.x, self.mean, self.std)]


def mean_std(values: Sequence[float], digits: int = 4) -> str:
    """``"mean±std"`` with population standard deviation."""
    v = np.asarray(values, dtype=float)
    return f"{np.mean(v):.{digits}f}±{np.std(v):.{digits}f}"


def _check_group(logs: Sequence[StudyLog]) -> None:
    if not logs:
        raise ValueError("no studies to aggregate")
    methods = {log.header.method for log in logs}
    digests = {log.header.space_digest for log in logs}
    if len(methods) > 1:
        raise ValueError(f"studies mix methods: {', '.join(sorted(methods))}")
    if len(digests) > 1:
        raise ValueError("studies mix search spaces")


def _step_values(times: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Last value at or before each grid point (values carried forward)."""
    pos = np.searchsorted(times, grid, side="right") - 1
    return values[np.maximum(pos, 0)]


def aggregate_seeds(logs: Sequence[StudyLog]) -> SeedCurve:
    """Mean and population std of best-so-far on the union of all event times.

    The grid starts at the latest first-trial time across seeds, so every
    seed has a value at every grid point.
    """
    _check_group(logs)
    logs = [log for log in logs if len(log)]
    if not logs:
        raise ValueError("every study is empty")
    traces = [incumbent_trace(log) for log in logs]
    times = [np.array([p.cumulative_train_seconds for p in t]) for t in traces]
    values = [np.array([p.best_so_far for p in t]) for t in traces]
    start = max(t[0] for t in times)
    grid = np.unique(np.concatenate(times))
    grid = grid[grid >= start]
    stacked = np.array([_step_values(t, v, grid) for t, v in zip(times, values)])
    return SeedCurve(grid, stacked.mean(axis=0), stacked.std(axis=0), tuple(float(v[-1]) for v in values))


def aggregate_by_trial(logs: Sequence[StudyLog], cap: int = TRIAL_CAP) -> SeedCurve:
    """Trial-indexed variant, truncated at ``cap`` trials; finished seeds carry their last value."""
    _check_group(logs)
    logs = [log for log in logs if len(log)]
    if not logs:
        raise ValueError("every study is empty")
    n = min(cap, max(len(log) for log in logs))
    stacked = []
    for log in logs:
        best = np.array([p.best_so_far for p in incumbent_trace(log.records[:n])])
        stacked.append(np.concatenate([best, np.full(n - best.size, best[-1])]))
    stacked = np.array(stacked)
    finals = tuple(float(row[-1]) for row in stacked)
    return SeedCurve(np.arange(1, n + 1), stacked.mean(axis=0), stacked.std(axis=0), finals, axis="trial")


# --------------------------------------------------------------------------
# Tables

SUMMARY_COLUMNS = ("method", "seeds", "trials", "best", "oom_pct", "spread", "pairwise", "step", "cells")


def _mean_or_none(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summary_row(logs: Sequence[StudyLog], digits: int = 4) -> dict:
    """One comparison-table row: trials and best as mean±std over seeds, OOM % and diversity averaged."""
    _check_group(logs)
    reports = [diversity(log) for log in logs]
    bests = [log.best().objective for log in logs if len(log)]
    cell_mean = _mean_or_none(r.cells for r in reports)
    return {
        "method": logs[0].header.method,
        "seeds": len(logs),
        "trials": mean_std([len(log) for log in logs], 0),
        "best": mean_std(bests, digits) if bests else None,
        "oom_pct": round(100 * float(np.mean([r.oom_rate for r in reports])), 1),
        "spread": _round(_mean_or_none(r.spread for r in reports), 3),
        "pairwise": _round(_mean_or_none(r.pairwise for r in reports), 3),
        "step": _round(_mean_or_none(r.step for r in reports), 3),
        "cells": None if cell_mean is None else round(cell_mean, 1),
    }


def _round(x: float | None, digits: int) -> float | None:
    return None if x is None else round(x, digits)


def _cell(v) -> str:
    if v is None:
        return "-"
    return str(v)


def format_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """Fixed-width text table."""
    cells_ = [[str(c) for c in columns]] + [[_cell(row.get(c)) for c in columns] for row in rows]
    widths = [max(len(r[i]) for r in cells_) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells_]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else row.get(c) for c in columns])
    return buf.getvalue()


def group_by_method(logs: Iterable[StudyLog]) -> dict[str, list[StudyLog]]:
    groups: dict[str, list[StudyLog]] = {}
    for log in logs:
        groups.setdefault(log.header.method, []).append(log)
    for group in groups.values():
        group.sort(key=lambda log: log.header.seed)
    return groups

