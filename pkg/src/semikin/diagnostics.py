"""Time series of scalar diagnostics recorded during an evolution."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("t", "M0", "M2", "M4", "N2", "energy", "Lr2", "Lrinf", "w2", "wh_lo", "wh_hi")


@dataclass
class DiagnosticsSeries:
    times: list[float] = field(default_factory=list)
    columns: dict[str, list[float]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def record(self, t: float, values: dict[str, float]) -> None:
        n = len(self.times)
        for name in values:
            # late columns are back-filled so every column stays aligned with times
            self.columns.setdefault(name, [math.nan] * n)
        for name, col in self.columns.items():
            col.append(float(values.get(name, math.nan)))
        self.times.append(float(t))

    def array(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        return np.asarray(self.columns[name])

    def drift(self, name: str, relative: bool = True) -> float:
        """Largest deviation of a column from its first value."""
        col = self.array(name)
        if col.size == 0:
            return 0.0
        dev = np.max(np.abs(col - col[0]))
        if relative and col[0] != 0:
            dev /= abs(col[0])
        return float(dev)

    def to_dict(self) -> dict:
        return {"t": list(self.times), **{k: list(v) for k, v in self.columns.items()}, "meta": self.meta}

    @classmethod
    def from_dict(cls, data: dict) -> "DiagnosticsSeries":
        data = dict(data)
        meta = data.pop("meta", {})
        times = data.pop("t")
        return cls(list(times), {k: list(v) for k, v in data.items()}, meta)

    def write_csv(self, path, columns=CSV_COLUMNS) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for i, t in enumerate(self.times):
                row = []
                for name in columns:
                    if name == "t":
                        row.append(repr(t))
                    else:
                        row.append(repr(self.columns[name][i]) if name in self.columns else "nan")
                writer.writerow(row)
