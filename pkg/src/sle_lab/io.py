"""CSV and JSON artifact schemas.

Floats print with 17 significant digits so that identical configs and seeds
reproduce byte-identical files; every artifact carries the config hash, as a
``# config_hash=...`` comment line in CSVs and a ``config_hash`` field in
JSON reports.  JSON reports are versioned with ``schema_version``.
"""

import hashlib
import json

import numpy as np

from .errors import ValidationError
from .loewner import DrivingPath, Trace

SCHEMA_VERSION = 1


def _fmt(x):
    return format(float(x), ".17g")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(cfg_hash):
    return f"# config_hash={cfg_hash}\n" if cfg_hash else ""


def write_csv(path, columns, names, cfg_hash=None):
    cols = [np.asarray(c) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValidationError("column length mismatch")
    with open(path, "w") as fh:
        fh.write(_header(cfg_hash))
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(c[i]) for c in cols) + "\n")


def read_csv(path):
    """Read a CSV written by this module: (names, columns, cfg_hash)."""
    cfg_hash = None
    with open(path) as fh:
        line = fh.readline()
        if line.startswith("# config_hash="):
            cfg_hash = line.strip().split("=", 1)[1]
            line = fh.readline()
        names = line.strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(names)))
    return names, [data[:, j] for j in range(len(names))], cfg_hash


def trace_to_csv(path, trace: Trace, cfg_hash=None):
    write_csv(path, [trace.times, trace.points.real, trace.points.imag],
              ["t", "re", "im"], cfg_hash)


def trace_from_csv(path):
    names, cols, _ = read_csv(path)
    if names != ["t", "re", "im"]:
        raise ValidationError(f"unexpected trace columns {names}")
    t, re, im = cols
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return Trace(kind="chordal", t0=float(t[0]), dt=dt, points=re + 1j * im)


def driving_to_csv(path, driving: DrivingPath, cfg_hash=None):
    if driving.q is None:
        write_csv(path, [driving.times, driving.lam], ["t", "lambda"], cfg_hash)
    else:
        write_csv(path, [driving.times, driving.lam, driving.q],
                  ["t", "lambda", "q"], cfg_hash)


def driving_from_csv(path, kind="chordal"):
    names, cols, _ = read_csv(path)
    if names[:2] != ["t", "lambda"]:
        raise ValidationError(f"unexpected driving columns {names}")
    t = cols[0]
    q = cols[2] if len(cols) > 2 else None
    return DrivingPath(kind=kind, t0=float(t[0]), dt=float(t[1] - t[0]),
                       lam=cols[1], q=q)


def diffusion_to_csv(path, dpath, cfg_hash=None):
    write_csv(path, [dpath.times, dpath.lam, dpath.q, dpath.z],
              ["t", "lambda", "q", "z"], cfg_hash)


def sample_path_to_csv(path, sample, cfg_hash=None, path_index=0):
    y = sample.y[path_index]
    cols = [sample.times, y]
    names = ["t", "y"]
    if sample.lifetime is not None:
        alive = (sample.times <= sample.lifetime[path_index]).astype(float)
        cols.append(alive)
        names.append("alive")
    write_csv(path, cols, names, cfg_hash)


def density_table_to_csv(path, x, y, t, values, cfg_hash=None):
    x, y, values = np.broadcast_arrays(x, y, values)
    tcol = np.full(x.size, float(t))
    write_csv(path, [x.ravel(), y.ravel(), tcol, values.ravel()],
              ["x", "y", "t", "value"], cfg_hash)


def report_to_json(path, payload: dict, config: dict):
    out = dict(payload)
    out["schema_version"] = SCHEMA_VERSION
    out["config_hash"] = config_hash(config)
    out["config"] = config
    with open(path, "w") as fh:
        json.dump(_sanitize(out), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj
