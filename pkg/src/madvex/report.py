"""Aggregation of experiment outputs into evaluation tables.

Standard deviations are population (``ddof=0``) deviations; sums use
``math.fsum`` so results do not depend on the order of the inputs.
"""

import csv
import math
from collections import defaultdict
from dataclasses import astuple, dataclass, fields

from .errors import MadvexError


@dataclass(frozen=True)
class Row:
    kind: str
    density: float
    series: str
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class IterationRow:
    kind: str
    density: float
    model_epochs: int
    mean: float
    std: float
    n: int
    capped: int


class EvaluationTable:
    def __init__(self, rows, note="std is the population standard deviation"):
        self.rows = list(rows)
        self.note = note

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def get(self, **key):
        for row in self.rows:
            if all(getattr(row, k) == v for k, v in key.items()):
                return row
        raise KeyError(key)

    @property
    def columns(self):
        return [f.name for f in fields(self.rows[0])] if self.rows else []

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# {self.note}\n")
            writer = csv.writer(f)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow(astuple(row))


def _mean_std(values):
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    return mean, std


def aggregate(records):
    """Group ``{"kind", "density", "series", "value"}`` records and summarise them."""
    groups = defaultdict(list)
    for rec in records:
        groups[(rec["kind"], float(rec["density"]), rec["series"])].append(float(rec["value"]))
    if not groups:
        raise MadvexError("nothing to aggregate")
    rows = []
    for key in sorted(groups):
        mean, std = _mean_std(groups[key])
        rows.append(Row(*key, mean, std, len(groups[key])))
    return EvaluationTable(rows)


def iterations_by_density(reports):
    """Mean/std of crafting iterations per (gadget kind, density, model epochs).

    Runs that stopped at the iteration cap without reaching tau are counted
    in ``capped``; they are included in the mean at their capped value.
    """
    groups = defaultdict(list)
    for r in reports:
        groups[(r.kind, float(r.density), r.model_epochs)].append(r)
    if not groups:
        raise MadvexError("no attack reports")
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2] or 0)):
        members = groups[key]
        mean, std = _mean_std([float(r.iterations_used) for r in members])
        capped = sum(1 for r in members if not r.reached_tau)
        rows.append(IterationRow(*key, mean, std, len(members), capped))
    return EvaluationTable(rows)


@dataclass(frozen=True)
class OverheadRow:
    kind: str
    density: float
    series: str  # "size" or "time"
    mean: float  # instrumented / original
    std: float
    n: int


def overhead_table(measurements):
    """Ratios from ``{"kind", "density", "series", "original", "instrumented"}`` records."""
    groups = defaultdict(list)
    for rec in measurements:
        groups[(rec["kind"], float(rec["density"]), rec["series"])].append(
            float(rec["instrumented"]) / float(rec["original"]))
    if not groups:
        raise MadvexError("no overhead measurements")
    rows = []
    for key in sorted(groups):
        mean, std = _mean_std(groups[key])
        rows.append(OverheadRow(*key, mean, std, len(groups[key])))
    return EvaluationTable(rows, note="ratio instrumented/original; std is the population standard deviation")
