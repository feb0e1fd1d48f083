"""Raw metric rows, aggregates and the files written next to them."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

COLUMNS = ("experiment", "sweep_param", "value", "seed", "edge", "metric", "score")
# rows with this edge label carry the per-seed model-level metric that gets aggregated
MODEL_ROW = "all"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Row:
    experiment: str
    sweep_param: str
    value: object
    seed: int
    edge: str
    metric: str
    score: float

    def cells(self) -> list[str]:
        return [_fmt(getattr(self, c)) if c != "score" else repr(float(self.score)) for c in COLUMNS]


@dataclass(frozen=True)
class Aggregate:
    sweep_param: str
    value: str
    metric: str
    mean: float
    std: float
    ci95_halfwidth: float
    count: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("sweep_param", "value", "metric", "mean", "std", "ci95_halfwidth", "count")}


def summarize(values) -> tuple[float, float, float, int]:
    """Mean, sample standard deviation, 95% half-width ``1.96 std / sqrt(k)``, count."""
    a = np.asarray(values, dtype=float)
    k = a.size
    mean = float(a.mean())
    std = float(a.std(ddof=1)) if k > 1 else 0.0
    return mean, std, 1.96 * std / math.sqrt(k), k


def aggregate(rows: list[Row]) -> list[Aggregate]:
    groups: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        if r.edge != MODEL_ROW:
            continue
        groups.setdefault((r.sweep_param, _fmt(r.value), r.metric), []).append(r.score)
    return [Aggregate(p, v, m, *summarize(s)) for (p, v, m), s in groups.items()]


@dataclass
class ExperimentReport:
    experiment: str
    rows: list[Row]
    config: dict
    extra_files: dict[str, str] = field(default_factory=dict)

    @property
    def aggregates(self) -> list[Aggregate]:
        return aggregate(self.rows)

    def lookup(self, metric: str, value=None, edge: str = MODEL_ROW) -> list[float]:
        """Scores for ``metric`` at sweep value ``value`` (any value if None), in seed order."""
        return [r.score for r in self.rows
                if r.metric == metric and r.edge == edge and (value is None or _fmt(r.value) == _fmt(value))]

    def mean(self, metric: str, value=None) -> float:
        return float(np.mean(self.lookup(metric, value)))

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def aggregate_json(self) -> str:
        return json.dumps([a.to_dict() for a in self.aggregates], indent=1) + "\n"

    def write(self, out_dir, manifest: dict) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "raw.csv").write_text(self.raw_csv())
        (out / "aggregate.json").write_text(self.aggregate_json())
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        for rel, text in sorted(self.extra_files.items()):
            p = out / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        return out


def read_raw_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


class ReportMismatchError(ValueError):
    pass


def load_report(out_dir, tol: float = 1e-12) -> tuple[list[dict], list[dict]]:
    """Read raw rows and aggregates, checking that the aggregates follow from the rows."""
    out = Path(out_dir)
    raw = read_raw_csv((out / "raw.csv").read_text())
    aggs = json.loads((out / "aggregate.json").read_text())
    groups: dict[tuple[str, str, str], list[float]] = {}
    for r in raw:
        if r["edge"] == MODEL_ROW:
            groups.setdefault((r["sweep_param"], r["value"], r["metric"]), []).append(float(r["score"]))
    if len(groups) != len(aggs):
        raise ReportMismatchError(f"{len(aggs)} aggregates for {len(groups)} row groups")
    for a in aggs:
        key = (a["sweep_param"], a["value"], a["metric"])
        if key not in groups:
            raise ReportMismatchError(f"aggregate {key} has no raw rows")
        mean, std, half, k = summarize(groups[key])
        if k != a["count"] or any(
            abs(x - y) > tol * max(1.0, abs(x)) for x, y in ((mean, a["mean"]), (std, a["std"]), (half, a["ci95_halfwidth"]))
        ):
            raise ReportMismatchError(f"aggregate {key} does not match its raw rows")
    return raw, aggs


def _version(pkg: str) -> str:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest(config: dict, digest: str, seeds, command: str) -> dict:
    return {
        "command": command,
        "config": config,
        "config_sha256": digest,
        "seeds": list(seeds),
        "versions": {
            "scbm": _version("artifact"),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": _version("scipy"),
        },
    }
