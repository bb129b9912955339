"""Model files and CSV tables.

A model file is::

    KCDO-MODEL\\n
    <one-line JSON header>\\n
    <little-endian float64 arrays, back to back>

The header names the kernels, regularisation, counts and the shape and byte
offset of each array. The input-side factorisation is not stored; it is
recomputed from the stored inputs, which is deterministic, so a loaded model
predicts exactly like the one that was saved.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .cdo import FittedCDO, factorize_inputs
from .kernels import KernelSpec
from .reconstruct import ReferenceMeasure

__all__ = [
    "FORMAT_VERSION",
    "ModelFormatError",
    "save_model",
    "load_model",
    "read_table",
    "write_table",
]

MAGIC = b"KCDO-MODEL\n"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Unreadable model file or unsupported format version."""


def _arrays(model: FittedCDO) -> dict[str, np.ndarray]:
    arrs = {"X": model.X, "ref_points": model.ref.points, "W": model.W,
            "ref_bounds": model.ref.bounds}
    if model.ref.weights is not None:
        arrs["ref_weights"] = model.ref.weights
    if model.ref.axes is not None:
        for i, ax in enumerate(model.ref.axes):
            arrs[f"ref_axis_{i}"] = np.asarray(ax)
    return arrs


def save_model(model: FittedCDO, path, extra: dict | None = None) -> None:
    """Write ``model`` to ``path``; ``extra`` is stored verbatim in the header."""
    arrs = _arrays(model)
    index, offset = [], 0
    for name, a in arrs.items():
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "input_kernel": model.input_kernel.to_dict(),
        "output_kernel": model.output_kernel.to_dict(),
        "alpha": model.alpha,
        "alpha_out": model.alpha_out,
        "input_reg": model.input_reg,
        "n_samples": model.n_samples,
        "grouped": model.grouped,
        "ref": {"mode": model.ref.mode, "total_mass": model.ref.total_mass, "M": model.ref.M},
        "d_in": model.input_kernel.dimension,
        "d_out": model.output_kernel.dimension,
        "arrays": index,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrs.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> tuple[FittedCDO, dict]:
    """Read a model file; returns the model and the header's ``extra`` dict."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ModelFormatError(f"{path} is not a model file")
    end = data.index(b"\n", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC) : end])
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {header.get('format_version')} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    body = data[end + 1 :]
    arrs = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"]))
        start = entry["offset"]
        if start + 8 * n > len(body):
            raise ModelFormatError("model file truncated")
        arrs[entry["name"]] = np.frombuffer(body, "<f8", n, start).reshape(entry["shape"]).copy()
    axes = None
    if "ref_axis_0" in arrs:
        axes = tuple(arrs[f"ref_axis_{i}"] for i in range(arrs["ref_bounds"].shape[0]))
    r = header["ref"]
    ref = ReferenceMeasure(arrs["ref_points"], r["total_mass"], r["mode"], arrs["ref_bounds"],
                           axes, arrs.get("ref_weights"))
    k = KernelSpec.from_dict(header["input_kernel"])
    l = KernelSpec.from_dict(header["output_kernel"])
    X = arrs["X"]
    factor = factorize_inputs(k, X, header["input_reg"])
    model = FittedCDO(k, l, X, ref, header["alpha"], header["alpha_out"], header["input_reg"],
                      arrs["W"], header["n_samples"], header["grouped"], factor)
    return model, header.get("extra", {})


def _columns(header: list[str], prefix: str) -> list[int]:
    idx = {name: i for i, name in enumerate(header)}
    cols = []
    while f"{prefix}{len(cols)}" in idx:
        cols.append(idx[f"{prefix}{len(cols)}"])
    return cols


def read_table(path, require_y: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Read ``x0..`` and ``y0..`` columns from a CSV file.

    Lines starting with ``#`` are skipped. Raises ``ValueError`` on a
    missing or unexpected column, a ragged row or a non-numeric entry.
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = [r for r in csv.reader(line for line in io.StringIO(text) if not line.startswith("#"))
            if r]
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    xc, yc = _columns(header, "x"), _columns(header, "y")
    extra = set(header) - {header[i] for i in xc + yc}
    if extra:
        raise ValueError(f"{path}: unexpected column(s) {', '.join(sorted(extra))}")
    if not xc:
        raise ValueError(f"{path}: no input columns x0..")
    if require_y and not yc:
        raise ValueError(f"{path}: no output columns y0..")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    if any(len(r) != len(header) for r in body):
        raise ValueError(f"{path}: ragged rows")
    try:
        A = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{path}: non-finite entry")
    return A[:, xc], (A[:, yc] if yc else None)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header: list[str], rows, run_config: str | None = None) -> None:
    """Write a CSV with an optional leading ``# run_config = ...`` line.

    Floats are written with ``repr`` (shortest round-trip form), so equal
    numbers give byte-identical files.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if run_config is not None:
            fh.write(f"# run_config = {run_config}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
