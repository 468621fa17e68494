"""Per-case metric tables with aggregate rows, CSV/JSON export and paired comparisons."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .stats import paired_t_test
from .surface import EmptySurfaceError, asd, dice, hd95

METRICS = ("dice", "hd95_mm", "asd_mm")


@dataclass
class CaseMetrics:
    case: str
    dice: float
    hd95_mm: float | None  # None when a mask is empty
    asd_mm: float | None


def evaluate_case(case: str, pred, gt, symmetric_asd: bool = True) -> CaseMetrics:
    d = dice(pred, gt)
    try:
        h, a = hd95(pred, gt), asd(pred, gt, symmetric=symmetric_asd)
    except EmptySurfaceError:
        h = a = None
    return CaseMetrics(case, d, h, a)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class MetricsReport:
    cases: list[CaseMetrics] = field(default_factory=list)
    method: str | None = None

    def add(self, m: CaseMetrics) -> None:
        self.cases.append(m)

    def column(self, metric: str) -> list[float | None]:
        return [getattr(c, metric) for c in self.cases]

    def aggregate(self) -> dict[str, dict[str, float | None]]:
        """Mean and sample standard deviation per metric over defined values."""
        out = {}
        for m in METRICS:
            vals = np.array([v for v in self.column(m) if v is not None], dtype=np.float64)
            out[m] = {
                "mean": float(vals.mean()) if len(vals) else None,
                "std": float(vals.std(ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else None),
                "n": int(len(vals)),
            }
        return out

    def compare(self, other: "MetricsReport") -> dict[str, dict[str, float]]:
        """Paired t-test per metric over cases present and defined in both reports."""
        theirs = {c.case: c for c in other.cases}
        out = {}
        for m in METRICS:
            pairs = [(getattr(c, m), getattr(theirs[c.case], m)) for c in self.cases if c.case in theirs]
            pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
            if len(pairs) < 2:
                out[m] = {"t": None, "p": None, "n": len(pairs)}
                continue
            t, p = paired_t_test([a for a, _ in pairs], [b for _, b in pairs])
            out[m] = {"t": t if math.isfinite(t) else None, "p": p, "n": len(pairs)}
        return out

    def to_csv(self, path) -> None:
        agg = self.aggregate()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", *METRICS])
            for c in self.cases:
                w.writerow([c.case, *(_fmt(getattr(c, m)) for m in METRICS)])
            for stat in ("mean", "std"):
                w.writerow([stat, *(_fmt(agg[m][stat]) for m in METRICS)])

    def to_dict(self) -> dict:
        return {"method": self.method, "cases": [asdict(c) for c in self.cases], "aggregate": self.aggregate()}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def read_csv(cls, path, method: str | None = None) -> "MetricsReport":
        rep = cls(method=method)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["case"] in ("mean", "std"):
                    continue
                vals = [None if row[m] == "" else float(row[m]) for m in METRICS]
                rep.add(CaseMetrics(row["case"], *vals))
        return rep
