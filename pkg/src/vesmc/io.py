"""File formats: signal CSV, particle binary with JSON header, JSON objects, CSV tables.

All writers produce byte-identical output for identical inputs: floats are
written with ``repr`` precision and JSON keys are sorted.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    return rows[0], rows[1:]


def write_signal_csv(path, x) -> None:
    """One row per channel, one column per time sample."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ConfigurationError("signal CSV holds a single (L, T) matrix")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def read_signal_csv(path) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse signal CSV {path}: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{path} contains non-finite values")
    return x


def read_index_csv(path) -> list[int]:
    """Integer indices separated by commas and/or newlines."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}") from None
    try:
        return [int(tok) for tok in text.replace("\n", ",").split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse index list {path}: {exc}") from None


def write_particles(path, particles) -> None:
    """Row-major little-endian float64 dump of ``(M, L, T)`` plus ``<path>.json`` header."""
    P = np.asarray(particles, dtype=float)
    if P.ndim == 2:
        P = P[None]
    if P.ndim != 3:
        raise ConfigurationError("particles must have shape (M, L, T)")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(P, dtype="<f8").tobytes())
    header = {"L": P.shape[1], "T": P.shape[2], "M": P.shape[0], "dtype": "f64"}
    write_json(path.with_name(path.name + ".json"), header)


def read_particles(path) -> np.ndarray:
    path = Path(path)
    header = read_json(path.with_name(path.name + ".json"))
    if header.get("dtype") != "f64":
        raise ConfigurationError(f"unsupported dtype {header.get('dtype')!r}")
    L, T = int(header["L"]), int(header["T"])
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    if data.size % (L * T):
        raise ConfigurationError("particle file size does not match its header")
    M = int(header.get("M", data.size // (L * T)))
    if M * L * T != data.size:
        raise ConfigurationError("particle count does not match its header")
    return data.reshape(M, L, T).copy()


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from None
