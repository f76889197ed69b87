"""CSV and manifest files for experiment runs."""
from __future__ import annotations

import csv
import json
import math
import subprocess
from pathlib import Path

from . import __version__
from .engine import RunRecord

HEADER = ("k", "alpha", "beta", "metric", "aux_error", "stable")


class MalformedRow(ValueError):
    def __init__(self, path, row, reason):
        self.path, self.row = str(path), row
        super().__init__(f"{path}: row {row}: {reason}")


def _num(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow((r.k, _num(r.alpha), _num(r.beta), _num(r.metric), _num(r.aux_error),
                        int(bool(r.stable))))
    return path


def _opt_float(s: str):
    if s == "":
        return None
    v = float(s)
    return v if math.isfinite(v) else None


def read_csv(path) -> list:
    """Parse a run file; ``MalformedRow`` names the 1-based line of the first bad row."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or tuple(header) != HEADER:
            raise MalformedRow(path, 1, f"expected header {','.join(HEADER)}")
        for line, row in enumerate(rows, start=2):
            if len(row) != len(HEADER):
                raise MalformedRow(path, line, f"expected {len(HEADER)} fields, got {len(row)}")
            try:
                stable = row[5].strip()
                if stable not in ("0", "1", "True", "False", "true", "false"):
                    raise ValueError(f"bad stable flag {stable!r}")
                out.append(RunRecord(int(row[0]), float(row[1]), float(row[2]),
                                     _opt_float(row[3]), _opt_float(row[4]),
                                     stable in ("1", "True", "true")))
            except ValueError as exc:
                raise MalformedRow(path, line, str(exc)) from None
    return out


def version_string() -> str:
    """Package version plus the source commit when running from a git checkout."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path, config: dict, files, wall_time: float, backend: str,
                   status: str, extra=None) -> Path:
    path = Path(path)
    data = {
        "version": version_string(),
        "backend": backend,
        "status": status,
        "wall_time_s": wall_time,
        "config": config,
        "files": [str(f) for f in files],
    }
    if extra:
        data.update(extra)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path
