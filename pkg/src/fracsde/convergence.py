"""Convergence reports, log-log slope fits and serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["fit_slope", "fit_slope_with_residual", "LevelStat", "CheckResult", "ConvergenceReport", "version_string", "format_value"]


def fit_slope_with_residual(levels) -> tuple[float, float]:
    """Least-squares slope of ``log(stat)`` against ``log(scale)`` and the RMS residual.

    Parameters
    ----------
    levels : sequence of (scale, statistic)
        At least three pairs, all positive.

    Raises
    ------
    ValueError
        Fewer than three pairs or a nonpositive value.
    """
    pts = [(float(s), float(v)) for s, v in levels]
    if len(pts) < 3:
        raise ValueError("slope fit needs at least three levels")
    if any(not (s > 0 and v > 0) for s, v in pts) or any(not math.isfinite(s * v) for s, v in pts):
        raise ValueError("slope fit needs positive finite scales and statistics")
    x = np.log([s for s, _ in pts])
    y = np.log([v for _, v in pts])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def fit_slope(levels) -> float:
    """Least-squares log-log slope; see ``fit_slope_with_residual``."""
    return fit_slope_with_residual(levels)[0]


def format_value(v) -> str:
    """Deterministic text for CSV cells: shortest round-trip repr for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class LevelStat:
    """Statistic of one refinement level."""

    scale: float
    delta: float
    median: float
    p90: float
    extra: dict = field(default_factory=dict)


@dataclass
class CheckResult:
    """One declared invariant or acceptance check."""

    name: str
    passed: bool
    value: float
    threshold: float | str
    detail: str = ""


def version_string() -> str:
    """``<version>+g<commit>`` when a git checkout is available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        tag = out.stdout.strip()
        if out.returncode == 0 and tag:
            return f"{__version__}+g{tag}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class ConvergenceReport:
    """Result of ``run_experiment``.

    ``header``/``rows`` form the primary CSV table; ``levels``, ``slope`` and
    ``checks`` summarise it. ``meta`` holds provenance and never enters the
    CSV, which keeps CSV output byte-stable across runs.
    """

    kind: str
    header: list
    rows: list
    levels: list = field(default_factory=list)
    slope: float | None = None
    slope_residual: float | None = None
    checks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    payload: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def fit(self) -> None:
        """Fit the slope over the level medians when there are at least three levels."""
        if len(self.levels) >= 3:
            self.slope, self.slope_residual = fit_slope_with_residual([(lv.scale, lv.median) for lv in self.levels])

    def to_csv(self) -> str:
        """RFC-4180 table with a header row and CRLF line ends."""
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([format_value(v) for v in row])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "failures": self.failures,
            "slope": self.slope,
            "slope_residual": self.slope_residual,
            "levels": [asdict(lv) for lv in self.levels],
            "checks": [asdict(c) for c in self.checks],
            "payload": self.payload,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def write(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_bytes(self.to_csv().encode())
        json_path.write_text(self.to_json())
        return csv_path, json_path

    def summary_lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.6g} threshold={c.threshold}" for c in self.checks]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj
