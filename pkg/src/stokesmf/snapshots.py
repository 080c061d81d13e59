"""CSV snapshots of particle states and kinetic clouds, and JSON run manifests."""
from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kinetic import KineticEnsemble
from .simulation import SuspensionState

SCHEMA_VERSION = 1
STATE_HEADER = ["n", "x", "y", "z", "rx", "ry", "rz"]
ENSEMBLE_HEADER = ["k", "x", "y", "z", "rx", "ry", "rz", "w"]


def fmt(v):
    """Shortest round-trip text for a float (``repr``), so outputs are byte-stable."""
    return repr(float(v))


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        head = next(rd, None)
        if head != header:
            raise ValidationError(f"{path}: expected header {header}, got {head}")
        return np.array([[float(v) for v in row] for row in rd if row]).reshape(-1, len(header))


def write_state_csv(path, state):
    rows = [[str(i)] + [fmt(v) for v in (*x, *r)] for i, (x, r) in enumerate(zip(state.X, state.R))]
    _write_rows(path, STATE_HEADER, rows)


def read_state_csv(path, t=0.0):
    a = _read_rows(path, STATE_HEADER)
    r = a[:, 4:7]
    return SuspensionState(a[:, 1:4], r / np.linalg.norm(r, axis=1, keepdims=True), t)


def write_ensemble_csv(path, ens):
    rows = [
        [str(i)] + [fmt(v) for v in (*x, *r, w)]
        for i, (x, r, w) in enumerate(zip(ens.x, ens.r, ens.w))
    ]
    _write_rows(path, ENSEMBLE_HEADER, rows)


def read_ensemble_csv(path, eta, t=0.0):
    a = _read_rows(path, ENSEMBLE_HEADER)
    return KineticEnsemble(a[:, 1:4], a[:, 4:7], a[:, 7], eta, t)


def write_table(path, header, rows):
    _write_rows(path, header, [[v if isinstance(v, str) else fmt(v) for v in row] for row in rows])


def write_manifest(path, payload):
    """JSON manifest with schema version and environment echo added."""
    import numba
    import scipy

    doc = {
        "schema_version": SCHEMA_VERSION,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    doc.update(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
