import csv
import io
import json
import math
import os
from dataclasses import dataclass


@dataclass(frozen=True)
class CheckRow:
    """One verified quantity. `passed` is always derived from the stored fields."""

    name: str
    value: float
    stderr: float
    oracle: float
    tol: float
    passed: bool

    @classmethod
    def within(cls, name, value, oracle, tol, stderr=0.0):
        """|value - oracle| <= tol"""
        passed = _finite(value, oracle, tol) and abs(value - oracle) <= tol
        return cls(name, float(value), float(stderr), float(oracle), float(tol), bool(passed))

    @classmethod
    def at_most(cls, name, value, oracle, tol, stderr=0.0):
        """value <= oracle + tol (one-sided)"""
        passed = _finite(value, oracle, tol) and value <= oracle + tol
        return cls(name, float(value), float(stderr), float(oracle), float(tol), bool(passed))

    @classmethod
    def at_least(cls, name, value, oracle, tol, stderr=0.0):
        """value >= oracle - tol (one-sided)"""
        passed = _finite(value, oracle, tol) and value >= oracle - tol
        return cls(name, float(value), float(stderr), float(oracle), float(tol), bool(passed))

    @classmethod
    def in_range(cls, name, value, low, high, stderr=0.0):
        """low <= value <= high; oracle is the midpoint and tol the half-width"""
        passed = _finite(value, low, high) and low <= value <= high
        return cls(name, float(value), float(stderr), 0.5 * (low + high), 0.5 * (high - low), bool(passed))

    def to_dict(self):
        return {
            "name": self.name,
            "value": _json_float(self.value),
            "stderr": _json_float(self.stderr),
            "oracle": _json_float(self.oracle),
            "tol": _json_float(self.tol),
            "pass": self.passed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["name"], float(data["value"]), float(data["stderr"]),
                   float(data["oracle"]), float(data["tol"]), bool(data["pass"]))


def _finite(*values):
    return all(math.isfinite(v) for v in values)


def _json_float(value):
    # JSON has no inf/nan; keep them readable instead of failing the dump
    if math.isfinite(value):
        return value
    return str(value)


class ExperimentReport:
    CSV_FIELDS = ("name", "value", "stderr", "oracle", "tol", "pass")

    def __init__(self, config, version, checks, wallclock_seconds=0.0):
        self.config = dict(config)
        self.version = version
        self.checks = list(checks)
        self.wallclock_seconds = float(wallclock_seconds)

    @property
    def passed(self):
        return all(row.passed for row in self.checks)

    @property
    def failed_checks(self):
        return [row for row in self.checks if not row.passed]

    def body(self):
        """Everything except the wall clock; identical for identical config and seed."""
        return {
            "config": self.config,
            "version": self.version,
            "checks": [row.to_dict() for row in self.checks],
        }

    def to_dict(self):
        data = self.body()
        data["wallclock_seconds"] = self.wallclock_seconds
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.checks:
            writer.writerow(row.to_dict())
        return buffer.getvalue()

    def save(self, directory):
        """Write <experiment>_seed<seed>.json and .csv; returns the JSON path."""
        os.makedirs(directory, exist_ok=True)
        stem = f"{self.config.get('experiment', 'report')}_seed{self.config.get('seed', 0)}"
        json_path = os.path.join(directory, stem + ".json")
        with open(json_path, 'w', encoding='utf-8') as f:
            f.write(self.to_json())
        with open(os.path.join(directory, stem + ".csv"), 'w', encoding='utf-8', newline="") as f:
            f.write(self.to_csv())
        return json_path

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        missing = {"config", "version", "checks"} - set(data)
        if missing:
            raise ValueError(f"{path} is not a report, missing keys {sorted(missing)}")
        checks = [CheckRow.from_dict(row) for row in data["checks"]]
        return cls(data["config"], data["version"], checks, data.get("wallclock_seconds", 0.0))
