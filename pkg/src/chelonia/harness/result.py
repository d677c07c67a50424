"""Scenario outcomes: CSV tables plus named pass/fail checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Check:
    passed: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    name: str
    seed: int
    tables: dict[str, list[dict]] = field(default_factory=dict)
    checks: dict[str, Check] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks[name] = Check(bool(passed), detail)
        return bool(passed)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [f"{n}: {c.detail}" for n, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "scenario": self.name,
            "seed": self.seed,
            "passed": self.passed,
            "checks": {n: {"passed": c.passed, "detail": c.detail} for n, c in self.checks.items()},
            "summary": self.summary,
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for table, rows in self.tables.items():
            path = out / f"{self.name}-{table}.csv"
            fields = list(rows[0]) if rows else []
            for row in rows:
                fields += [k for k in row if k not in fields]
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fields)
                writer.writeheader()
                writer.writerows(rows)
            written.append(path)
        path = out / f"{self.name}-summary.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
        return written


def exact_line(xs: list[int], ys: list[int]) -> tuple[int, int, int] | None:
    """Fit ``y = a + b*x`` through the first two points; returns (a, b, max residual).

    Counts are integers, so a perfect fit is checked exactly.
    """
    if len(xs) < 2:
        return None
    b_num, b_den = ys[1] - ys[0], xs[1] - xs[0]
    if b_num % b_den:
        return None
    b = b_num // b_den
    a = ys[0] - b * xs[0]
    residual = max(abs(y - (a + b * x)) for x, y in zip(xs, ys))
    return a, b, residual
