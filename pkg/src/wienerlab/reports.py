"""Report rows, their CSV/JSON files and the console summary.

A report is a flat list of rows keyed by (quantity, lambda). Files contain no
timings or host details, so two runs with the same scenario and seed write
byte-identical files.
"""

import csv
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math
import numbers
from pathlib import Path

import tabulate

from ._dist_info import REPORT_SCHEMA_VERSION, __version__
from .stats import Estimate, relative_error

log = logging.getLogger(__name__)

COLUMNS = ["quantity", "lambda", "estimate", "stderr", "oracle", "rel_err", "pass"]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, numbers.Integral):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def _json_value(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class ReportRow:
    quantity: str
    lam: float | None
    estimate: float
    stderr: float | None = None
    oracle: float | None = None
    rel_err: float | None = None
    passed: bool | None = None

    @staticmethod
    def from_estimate(
        quantity: str,
        lam: float | None,
        est: Estimate,
        oracle: float | None = None,
        passed: bool | None = None,
    ) -> "ReportRow":
        return ReportRow(
            quantity=quantity,
            lam=None if lam is None else float(lam),
            estimate=float(est.value),
            stderr=float(est.stderr),
            oracle=None if oracle is None else float(oracle),
            rel_err=relative_error(float(est.value), oracle),
            passed=None if passed is None else bool(passed),
        )

    def cells(self) -> dict[str, str]:
        values = [
            self.quantity,
            self.lam,
            self.estimate,
            self.stderr,
            self.oracle,
            self.rel_err,
            self.passed,
        ]
        return {k: _cell(v) for k, v in zip(COLUMNS, values)}

    def to_json(self) -> dict:
        return {
            "quantity": self.quantity,
            "lambda": _json_value(self.lam),
            "estimate": _json_value(self.estimate),
            "stderr": _json_value(self.stderr),
            "oracle": _json_value(self.oracle),
            "rel_err": _json_value(self.rel_err),
            "pass": self.passed,
        }

    @staticmethod
    def from_json(data: dict) -> "ReportRow":
        return ReportRow(
            quantity=data["quantity"],
            lam=data.get("lambda"),
            estimate=float("nan") if data.get("estimate") is None else data["estimate"],
            stderr=data.get("stderr"),
            oracle=data.get("oracle"),
            rel_err=data.get("rel_err"),
            passed=data.get("pass"),
        )


@dataclass
class ScenarioReport:
    name: str
    subcommand: str
    seed: int
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: ReportRow) -> ReportRow:
        self.rows.append(row)
        return row

    def extend(self, rows):
        self.rows.extend(rows)

    @property
    def checked(self) -> list[ReportRow]:
        return [r for r in self.rows if r.passed is not None]

    @property
    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if r.passed is False]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "generator": f"wienerlab {__version__}",
            "name": self.name,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "metadata": self.metadata,
            "passed": self.passed,
            "rows": [r.to_json() for r in self.rows],
        }

    def stem(self) -> str:
        return f"{self.name}-{self.subcommand}"

    def write(self, directory: Path, formats=("csv", "json")) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            written.append(write_csv(directory / f"{self.stem()}.csv", self.rows))
        if "json" in formats:
            written.append(write_json(directory / f"{self.stem()}.json", self.to_json()))
        for path in written:
            log.info(f"Wrote {path}")
        return written

    def table(self) -> str:
        data = [
            [
                r.quantity,
                "" if r.lam is None else f"{r.lam:g}",
                f"{r.estimate:.6g}",
                "" if r.stderr is None else f"{r.stderr:.2g}",
                "" if r.oracle is None else f"{r.oracle:.6g}",
                {True: "PASS", False: "FAIL", None: ""}[r.passed],
            ]
            for r in self.rows
        ]
        return f"{self.name} / {self.subcommand}\n" + tabulate.tabulate(
            data,
            headers=["quantity", "lambda", "estimate", "stderr", "oracle", "check"],
            tablefmt="simple_outline",
        )

    def log_summary(self):
        log.info(f": {self.name} :".center(100, "-"))
        log.info(self.table())
        checked = self.checked
        log.info(f"{len(checked) - len(self.failures)}/{len(checked)} checks passed")
        for row in self.failures:
            log.warning(
                f"FAILED {row.quantity} at lambda={row.lam}: estimate {row.estimate:.6g}"
                + ("" if row.oracle is None else f", oracle {row.oracle:.6g}")
            )


def write_csv(path: Path, rows: list[ReportRow]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.cells())
    return path


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def write_records(path: Path, records: list[dict], fieldnames: list[str]) -> Path:
    """Per-path raw data, one dict per line of the CSV."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow({k: _cell(record.get(k)) for k in fieldnames})
    return path


def file_digest(path: Path, algorithm: str = "sha256"):
    with open(path, "rb") as f:
        try:
            return hashlib.file_digest(f, algorithm)
        except AttributeError:  # file_digest() was added in Python 3.11.
            digest = hashlib.new(algorithm)
            for chunk in iter(lambda: f.read(1 << 16), b""):
                digest.update(chunk)
            return digest


def write_digest(path: Path, algorithm: str = "sha256") -> Path:
    """Writes `<file>.<algorithm>sum` in the format `sha256sum -c` reads."""
    digest = file_digest(path, algorithm)
    out = path.with_name(f"{path.name}.{algorithm}sum")
    out.write_text(f"{digest.hexdigest()}  {path.name}\n", encoding="utf-8")
    return out


def load_report(path: Path) -> ScenarioReport:
    """Reads back a report JSON written by `ScenarioReport.write`."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    version = data.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(
            f"{path} has schema_version {version!r}, expected {REPORT_SCHEMA_VERSION}"
        )
    return ScenarioReport(
        name=data["name"],
        subcommand=data["subcommand"],
        seed=data["seed"],
        rows=[ReportRow.from_json(r) for r in data["rows"]],
        metadata=data.get("metadata", {}),
    )


def aggregate(name: str, seed: int, reports: list[ScenarioReport]) -> ScenarioReport:
    """Concatenates reports, prefixing each quantity with its source subcommand."""
    summary = ScenarioReport(name=name, subcommand="report", seed=seed)
    for report in reports:
        summary.metadata[report.subcommand] = report.metadata
        for row in report.rows:
            summary.add(
                ReportRow(**(asdict(row) | {"quantity": f"{report.subcommand}.{row.quantity}"}))
            )
    return summary
