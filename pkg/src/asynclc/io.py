"""CSV ingestion and emission.

Two-file schema: a synchronous file with header subject_id,time,y,x1..xp and
an asynchronous file with header subject_id,time,z1..zq. Times are rescaled
to [0, 1] at ingestion by an affine map of the observed min/max across both
files; the map is recorded on the dataset and echoed to the run log. Floats
are written with shortest round-trip formatting, so emit -> ingest is
lossless.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from pathlib import Path

import numpy as np

from .data import LongitudinalDataset, SubjectRecord, validate
from .errors import EmptyInput, InvalidDataset, OrphanSubject, ParseError
from .estimators import CurveEstimate
from .scb import ScbResult

__all__ = [
    "ingest",
    "write_dataset",
    "emit_curve_csv",
    "emit_plot_data",
    "emit_cv_csv",
    "emit_report",
    "parse_config_file",
]

log = logging.getLogger("asynclc")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _covariate_header(prefix: str, names: list[str], path) -> int:
    """Check x1..xp (or z1..zq) appear contiguously numbered from 1."""
    pattern = re.compile(rf"^{prefix}(\d+)$")
    numbers = []
    for name in names:
        m = pattern.match(name)
        if not m:
            raise ParseError(1, f"unexpected column {name!r} in {path}")
        numbers.append(int(m.group(1)))
    if numbers != list(range(1, len(numbers) + 1)):
        raise ParseError(1, f"{prefix}* columns must be numbered 1..{len(numbers)} in {path}")
    return len(numbers)


def _read_rows(path, fixed: list[str], prefix: str):
    """Parse one CSV file; returns ({subject: (times, values rows)}, k)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path} is empty") from None
        header = [h.strip().lower() for h in header]
        if header[: len(fixed)] != fixed:
            raise ParseError(1, f"header of {path} must start with {','.join(fixed)}")
        k = _covariate_header(prefix, header[len(fixed) :], path)
        rows: dict[str, list] = {}
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line_no, f"expected {len(header)} cells, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise ParseError(line_no, "empty subject_id")
            try:
                numbers = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from None
            if not all(np.isfinite(numbers)):
                raise ParseError(line_no, "non-finite value")
            rows.setdefault(sid, []).append(numbers)
            n_rows += 1
        if n_rows == 0:
            raise EmptyInput(f"{path} has no data rows")
    return rows, k


def ingest(sync_path, async_path=None) -> LongitudinalDataset:
    """Read and validate a dataset; async_path omitted means q = 0."""
    sync_rows, p = _read_rows(sync_path, ["subject_id", "time", "y"], "x")
    async_rows, q = ({}, 0)
    if async_path is not None:
        async_rows, q = _read_rows(async_path, ["subject_id", "time"], "z")
        for sid in async_rows:
            if sid not in sync_rows:
                raise OrphanSubject(sid)

    all_times = [r[0] for rows in sync_rows.values() for r in rows]
    all_times += [r[0] for rows in async_rows.values() for r in rows]
    t_min, t_max = min(all_times), max(all_times)
    span = t_max - t_min

    def rescale(t):
        return (t - t_min) / span if span > 0.0 else 0.5

    if (t_min, t_max) != (0.0, 1.0):
        log.info("ingest: rescaling times from [%r, %r] to [0, 1]", t_min, t_max)

    subjects = []
    for sid, rows in sync_rows.items():  # file order (dict preserves insertion)
        sync_t = np.array([rescale(r[0]) for r in rows])
        y = np.array([r[1] for r in rows])
        x = np.array([r[2:] for r in rows]).reshape(len(rows), p)
        arows = async_rows.get(sid, [])
        async_t = np.array([rescale(r[0]) for r in arows])
        z = np.array([r[1:] for r in arows]).reshape(len(arows), q)
        subjects.append(SubjectRecord(sid, sync_t, y, x, async_t, z))
    dataset = LongitudinalDataset(
        tuple(subjects), p=p, q=q, time_rescale=(float(t_min), float(t_max))
    )
    report = validate(dataset)
    if not report.ok:
        raise InvalidDataset(report)
    return dataset


def write_dataset(dataset: LongitudinalDataset, sync_path, async_path=None) -> None:
    """Write a dataset back to the two-file schema (times as stored)."""
    with open(sync_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "time", "y"] + [f"x{j + 1}" for j in range(dataset.p)])
        for s in dataset.subjects:
            for j in range(s.n_sync):
                writer.writerow(
                    [s.id, _fmt(s.sync_times[j]), _fmt(s.responses[j])]
                    + [_fmt(v) for v in s.sync_covariates[j]]
                )
    if async_path is not None and dataset.q >= 1:
        with open(async_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "time"] + [f"z{j + 1}" for j in range(dataset.q)])
            for s in dataset.subjects:
                for j in range(s.n_async):
                    writer.writerow(
                        [s.id, _fmt(s.async_times[j])] + [_fmt(v) for v in s.async_covariates[j]]
                    )


def emit_curve_csv(curve: CurveEstimate, path, bands: dict[str, ScbResult] | None = None) -> None:
    """Per-grid-point CSV: t, each coefficient with se/ci (and band columns)."""
    bands = bands or {}
    band_cols = {}
    for name in curve.names:
        result = bands.get(name)
        if result is not None:
            lo = np.full(len(curve.grid), np.nan)
            hi = np.full(len(curve.grid), np.nan)
            lo[curve.ok] = result.lo
            hi[curve.ok] = result.hi
            band_cols[name] = (lo, hi)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for name in curve.names:
            header += [name, f"{name}_se", f"{name}_ci_lo", f"{name}_ci_hi"]
            if name in band_cols:
                header += [f"{name}_scb_lo", f"{name}_scb_hi"]
        header.append("ok")
        writer.writerow(header)
        ci_lo, ci_hi = curve.ci_lo, curve.ci_hi
        for g, t in enumerate(curve.grid):
            row = [_fmt(t)]
            for j, name in enumerate(curve.names):
                row += [_fmt(curve.coef[g, j]), _fmt(curve.se[g, j]), _fmt(ci_lo[g, j]), _fmt(ci_hi[g, j])]
                if name in band_cols:
                    lo, hi = band_cols[name]
                    row += [_fmt(lo[g]), _fmt(hi[g])]
            row.append("1" if curve.ok[g] else "0")
            writer.writerow(row)


def emit_plot_data(curve: CurveEstimate, base_path, bands: dict[str, ScbResult] | None = None) -> list[Path]:
    """Tidy per-coefficient CSVs: t, estimate, ci_lo, ci_hi, scb_lo, scb_hi.

    `bands` maps coefficient column names to their ScbResult; band columns
    are blank for coefficients without one. Returns the written paths (one
    file per coefficient).
    """
    bands = bands or {}
    base = Path(base_path)
    stem = base.name[: -len(base.suffix)] if base.suffix else base.name
    paths = []
    ci_lo, ci_hi = curve.ci_lo, curve.ci_hi
    for j, name in enumerate(curve.names):
        band = bands.get(name)
        scb_lo = np.full(len(curve.grid), np.nan)
        scb_hi = np.full(len(curve.grid), np.nan)
        if band is not None:
            scb_lo[curve.ok] = band.lo
            scb_hi[curve.ok] = band.hi
        path = base.with_name(f"{stem}_{name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "estimate", "ci_lo", "ci_hi", "scb_lo", "scb_hi"])
            for g, t in enumerate(curve.grid):
                has_band = band is not None and curve.ok[g]
                writer.writerow(
                    [
                        _fmt(t),
                        _fmt(curve.coef[g, j]),
                        _fmt(ci_lo[g, j]),
                        _fmt(ci_hi[g, j]),
                        _fmt(scb_lo[g]) if has_band else "",
                        _fmt(scb_hi[g]) if has_band else "",
                    ]
                )
        paths.append(path)
    return paths


def emit_cv_csv(result, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "candidate", "aspe", "chosen", "status"])
        for cand, score in result.aspe.items():
            writer.writerow(
                [result.stage, _fmt(cand), _fmt(score), "1" if cand == result.chosen else "0", "ok"]
            )
        for cand, reason in result.excluded.items():
            writer.writerow([result.stage, _fmt(cand), "", "0", f"excluded: {reason}"])


def emit_report(report, csv_base, json_path=None) -> list[Path]:
    """SimulationReport to <base>_pointwise.csv, <base>_curves.csv, and JSON."""
    base = Path(csv_base)
    stem = base.name[: -len(base.suffix)] if base.suffix else base.name
    paths = []

    pw_path = base.with_name(f"{stem}_pointwise.csv")
    with open(pw_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "block", "time", "truth", "bias", "sd", "se", "cp", "n_used"])
        for row in report.pointwise:
            writer.writerow(
                [row.estimator, row.block, _fmt(row.time), _fmt(row.truth), _fmt(row.bias),
                 _fmt(row.sd), _fmt(row.se_mean), _fmt(row.cp_pct), row.n_used]
            )
    paths.append(pw_path)

    if report.curves:
        cv_path = base.with_name(f"{stem}_curves.csv")
        with open(cv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimator", "block", "rase_mean", "rase_sd", "ci_sim", "scb", "n_used"])
            for row in report.curves:
                writer.writerow(
                    [row.estimator, row.block, _fmt(row.rase_mean), _fmt(row.rase_sd),
                     _fmt(row.ci_sim_pct), _fmt(row.scb_pct), row.n_used]
                )
        paths.append(cv_path)

    if json_path is not None:
        payload = {
            "replicates": report.replicates,
            "failures": report.failures,
            "warnings": list(report.warnings),
            "pointwise": [vars(r) for r in report.pointwise],
            "curves": [vars(r) for r in report.curves],
        }
        with open(json_path, "w") as fh:
            json.dump(payload, fh, indent=2)
        paths.append(Path(json_path))
    return paths


def parse_config_file(path, allowed: set[str]) -> dict[str, str]:
    """Flat key=value config; unknown keys are rejected."""
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(line_no, f"expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key not in allowed:
                raise ParseError(line_no, f"unknown config key {key!r}")
            out[key] = value.strip()
    return out
