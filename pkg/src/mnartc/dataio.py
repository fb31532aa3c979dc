"""Plain-text data interchange: coordinate CSV files and JSON model files.

Coordinate files are CSV with the exact header ``i,j,k,y`` and 0-based
integer indices.  Model files are JSON documents carrying a schema version,
the family, the CP factors and weights at full double precision, theta,
and the fitter's objective trace.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    DuplicateEntryError,
    ParseError,
    SchemaVersionError,
)
from .families import Family
from .likelihood import ModelState
from .missingness import MissingnessParams
from .tensors import CPModel, MaskedData

__all__ = ["read_coo", "write_coo", "write_model", "read_model", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
_HEADER = "i,j,k,y"


def read_coo(path, dims, binarize_at: float | None = None) -> MaskedData:
    """Read a coordinate CSV into a MaskedData on the given grid.

    ``binarize_at`` maps values to 1 when y >= threshold else 0 at
    ingestion time (for dichotomizing ordinal ratings).
    """
    d1, d2, d3 = (int(d) for d in dims)
    if min(d1, d2, d3) < 1:
        raise DimensionError("dims must be positive")
    mask = np.zeros((d1, d2, d3), dtype=bool)
    y = np.zeros((d1, d2, d3), dtype=np.float64)
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if first.strip() != _HEADER:
            raise ParseError(f"{path}:1: expected header {_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                i, j, k = int(parts[0]), int(parts[1]), int(parts[2])
                val = float(parts[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= i < d1 and 0 <= j < d2 and 0 <= k < d3):
                raise IndexError(
                    f"{path}:{lineno}: index ({i},{j},{k}) out of bounds for dims {(d1, d2, d3)}"
                )
            if not np.isfinite(val):
                raise ParseError(f"{path}:{lineno}: value must be finite")
            if mask[i, j, k]:
                raise DuplicateEntryError(f"{path}:{lineno}: duplicate cell ({i},{j},{k})")
            mask[i, j, k] = True
            y[i, j, k] = val
    if binarize_at is not None:
        y = np.where(y >= float(binarize_at), 1.0, 0.0)
    return MaskedData.from_dense(mask, y)


def write_coo(data: MaskedData, path) -> None:
    """Write observed cells as coordinate CSV; read_coo round-trips exactly."""
    lines = [_HEADER]
    for (i, j, k), val in zip(data.omega, data.y_obs):
        lines.append(f"{int(i)},{int(j)},{int(k)},{float(val)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_model(state: ModelState, path, objective_trace=None, converged=None,
                outer_iters=None) -> None:
    """Serialize a model state (plus optional fit diagnostics) as JSON.

    Floats are written with shortest round-trip representation, so the file
    is lossless and byte-stable for identical inputs.
    """
    doc = {
        "schema_version": SCHEMA_VERSION,
        "family": {
            "kind": state.fam.kind,
            "phi0": state.fam.phi0,
            "natural_param_cap": state.fam.natural_param_cap,
        },
        "dims": list(state.cp.dims),
        "rank": state.cp.rank,
        "lambdas": state.cp.lambdas.tolist(),
        "u": state.cp.u.tolist(),
        "v": state.cp.v.tolist(),
        "w": state.cp.w.tolist(),
        "theta": {"b0": state.theta.b0, "b1": state.theta.b1},
        "objective_trace": ([] if objective_trace is None
                            else np.asarray(objective_trace).tolist()),
    }
    if converged is not None:
        doc["converged"] = bool(converged)
    if outer_iters is not None:
        doc["outer_iters"] = int(outer_iters)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_model(path) -> ModelState:
    """Load a model file written by :func:`write_model`."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {version!r} not supported (expected {SCHEMA_VERSION})"
        )
    try:
        fam = Family(
            kind=doc["family"]["kind"],
            phi0=float(doc["family"].get("phi0", 1.0)),
            natural_param_cap=float(doc["family"].get("natural_param_cap", 50.0)),
        )
        cp = CPModel(
            lambdas=np.asarray(doc["lambdas"], dtype=np.float64),
            u=np.asarray(doc["u"], dtype=np.float64),
            v=np.asarray(doc["v"], dtype=np.float64),
            w=np.asarray(doc["w"], dtype=np.float64),
        )
        theta = MissingnessParams(b0=float(doc["theta"]["b0"]), b1=float(doc["theta"]["b1"]))
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from None
    dims = tuple(doc.get("dims", cp.dims))
    if tuple(dims) != cp.dims:
        raise DimensionError(f"{path}: dims field {dims} does not match factors {cp.dims}")
    return ModelState(cp=cp, theta=theta, fam=fam)
