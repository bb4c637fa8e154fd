"""Farms x models x modes comparison grid with significance daggers.

In every row (a farm, or the Average row) the best cell is compared with the
runner-up by a two-sided paired t-test: per-batch values for farm rows, the
per-farm averages for the Average row. The best cell carries a dagger iff
``p < 0.05``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..evaluation import MetricReport, paired_t_test

METRICS = ("nd", "nrmse")
DAGGER = "†"
ALPHA = 0.05
AVERAGE = "Average"

MODEL_ORDER = ("cnn-rnn", "cnn", "conv2d-gbm", "gbm", "et", "lr")
MODE_ORDER = ("global", "individual")


@dataclass(frozen=True)
class Cell:
    row: str  # farm id as text, or "Average"
    model: str
    mode: str
    metric: str
    value: float
    dagger: bool = False


@dataclass(frozen=True)
class RowTest:
    row: str
    metric: str
    best: str
    runner_up: str
    t_statistic: float
    p_value: float
    n: int
    degenerate: bool


@dataclass
class Comparison:
    cells: list[Cell]
    tests: list[RowTest]
    columns: list[tuple[str, str]]  # (mode, model)
    rows: list[str]

    def cell(self, row: str, model: str, mode: str, metric: str) -> Cell:
        for c in self.cells:
            if (c.row, c.model, c.mode, c.metric) == (row, model, mode, metric):
                return c
        raise KeyError((row, model, mode, metric))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "farm", "mode", "model", "value", "dagger"])
            for c in self.cells:
                w.writerow([c.metric, c.row, c.mode, c.model, repr(c.value), int(c.dagger)])

    def write_tests(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "farm", "best", "runner_up", "t_statistic", "p_value", "n", "degenerate"])
            for t in self.tests:
                w.writerow([t.metric, t.row, t.best, t.runner_up, repr(t.t_statistic), repr(t.p_value), t.n,
                            int(t.degenerate)])

    def markdown(self, metric: str) -> str:
        header = ["Farm"] + [f"{model} ({mode})" for mode, model in self.columns]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for row in self.rows:
            label = row if row == AVERAGE else f"WF{int(row) + 1}"
            vals = []
            for mode, model in self.columns:
                try:
                    c = self.cell(row, model, mode, metric)
                except KeyError:
                    vals.append("")
                    continue
                vals.append(f"{c.value:.3f}" + (DAGGER if c.dagger else ""))
            lines.append("| " + " | ".join([label] + vals) + " |")
        return "\n".join(lines)


def _label(model: str, mode: str) -> str:
    return f"{model}:{mode}"


def _column_key(col: tuple[str, str]):
    mode, model = col
    return (MODE_ORDER.index(mode) if mode in MODE_ORDER else len(MODE_ORDER),
            MODEL_ORDER.index(model) if model in MODEL_ORDER else len(MODEL_ORDER), model)


def _paired(a: MetricReport, b: MetricReport, metric: str) -> tuple[np.ndarray, np.ndarray]:
    common, ia, ib = np.intersect1d(a.batch_index, b.batch_index, return_indices=True)
    va = getattr(a, f"per_batch_{metric}")[ia]
    vb = getattr(b, f"per_batch_{metric}")[ib]
    return va, vb


def _row_test(row: str, metric: str, entries: list[tuple[str, float, np.ndarray, np.ndarray | None]],
              pair) -> tuple[RowTest | None, str | None]:
    """Test best vs runner-up; returns the test and the label of the daggered cell (if any)."""
    if len(entries) < 2:
        return None, None
    ranked = sorted(entries, key=lambda e: e[1])
    best, second = ranked[0], ranked[1]
    a, b = pair(best, second)
    if len(a) < 2:
        return None, None
    res = paired_t_test(a, b)
    test = RowTest(row, metric, best[0], second[0], res.t_statistic, res.p_value, res.n, res.degenerate)
    return test, (best[0] if res.significant(ALPHA) else None)


def build_comparison(reports: list[MetricReport]) -> Comparison:
    by_key: dict[tuple[int, str, str], MetricReport] = {}
    for r in reports:
        key = (int(r.farm), r.model, r.mode)
        if key in by_key:
            raise ValueError(f"duplicate results for farm {key[0]}, {r.model} ({r.mode})")
        by_key[key] = r
    columns = sorted({(mode, model) for _, model, mode in by_key}, key=_column_key)
    farms = sorted({f for f, _, _ in by_key})
    cells, tests = [], []
    for metric in METRICS:
        for farm in farms:
            entries = [(_label(model, mode), float(getattr(by_key[(farm, model, mode)], f"avg_{metric}")),
                        by_key[(farm, model, mode)]) for mode, model in columns if (farm, model, mode) in by_key]
            test, starred = _row_test(str(farm), metric, entries, lambda x, y: _paired(x[2], y[2], metric))
            if test:
                tests.append(test)
            for label, value, rep in entries:
                cells.append(Cell(str(farm), rep.model, rep.mode, metric, value, label == starred))
        # Average row: mean of the farm rows; significance pairs the per-farm averages
        complete = [(mode, model) for mode, model in columns if all((f, model, mode) in by_key for f in farms)]
        entries = []
        for mode, model in complete:
            per_farm = np.array([getattr(by_key[(f, model, mode)], f"avg_{metric}") for f in farms])
            entries.append((_label(model, mode), float(np.mean(per_farm)), per_farm, (model, mode)))
        test, starred = _row_test(AVERAGE, metric, entries, lambda x, y: (x[2], y[2]))
        if test:
            tests.append(test)
        for label, value, _, (model, mode) in entries:
            cells.append(Cell(AVERAGE, model, mode, metric, value, label == starred))
    return Comparison(cells, tests, columns, [str(f) for f in farms] + [AVERAGE])
