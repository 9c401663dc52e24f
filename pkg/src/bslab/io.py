"""File formats: CSV/JSON/binary field serialization, reports and manifests.

Numeric text output is fixed at 17 significant digits, which round-trips
IEEE doubles exactly, so repeated runs with the same configuration and seed
produce bitwise-identical CSV and JSON result files.  All writes go through
an atomic replace (write to a sibling temp file, then rename).

Formats
-------
* fields: CSV with header ``index,value`` (bulk fields flattened row-major,
  i * nth + j), or raw binary little-endian float64 in the same order;
* mesh: JSON {schema_version, radius, nr, nth};
* coefficients: JSON, either a preset reference or explicit arrays;
* sparse operators: CSV triplets ``row,col,value``;
* reports: versioned JSON documents (schemas shipped below).
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .coefficients import ProblemCoefficients, preset
from .geometry import BulkField, CoupledField, DiskMesh, SurfaceField, build_disk_mesh

__all__ = [
    "format_float",
    "atomic_write_text",
    "write_csv",
    "write_json",
    "read_json",
    "field_to_csv",
    "field_from_csv",
    "field_to_binary",
    "field_from_binary",
    "mesh_to_json",
    "mesh_from_json",
    "coefficients_to_json",
    "coefficients_from_json",
    "operator_to_triplet_csv",
    "export_report",
    "config_hash",
    "STABILITY_SCHEMA",
    "RECONSTRUCTION_SCHEMA",
]


def format_float(x: float) -> str:
    """Decimal text with 17 significant digits (exact double round trip)."""
    return f"{float(x):.17g}"


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with a fixed column order; floats go through :func:`format_float`."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for item in row:
            if isinstance(item, (float, np.floating)):
                cells.append(format_float(item))
            else:
                cells.append(str(item))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    atomic_write_text(path, text + "\n")


def read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# fields


def _field_values(field) -> np.ndarray:
    if isinstance(field, BulkField):
        return field.values.ravel()
    if isinstance(field, SurfaceField):
        return field.values
    if isinstance(field, CoupledField):
        return field.to_vector()
    raise TypeError(f"not a field: {type(field)}")


def field_to_csv(path: str, field) -> None:
    values = _field_values(field)
    write_csv(path, ["index", "value"], ((i, v) for i, v in enumerate(values)))


def field_from_csv(path: str) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return data[order, 1]


def field_to_binary(path: str, field) -> None:
    """Raw little-endian float64, row-major, no header."""
    values = np.ascontiguousarray(_field_values(field), dtype="<f8")
    tmp = path + ".tmp"
    values.tofile(tmp)
    os.replace(tmp, path)


def field_from_binary(path: str) -> np.ndarray:
    return np.fromfile(path, dtype="<f8")


# --------------------------------------------------------------------------
# mesh and coefficients


def mesh_to_json(mesh: DiskMesh) -> dict:
    return {"schema_version": 1, "radius": mesh.radius, "nr": mesh.nr, "nth": mesh.nth}


def mesh_from_json(doc: dict) -> DiskMesh:
    return build_disk_mesh(float(doc["radius"]), int(doc["nr"]), int(doc["nth"]))


def coefficients_to_json(c: ProblemCoefficients, preset_name: str | None = None,
                         preset_params: dict | None = None) -> dict:
    """Preset reference when the provenance is known, explicit arrays otherwise."""
    if preset_name is not None:
        return {
            "schema_version": 1,
            "kind": "preset",
            "name": preset_name,
            "params": preset_params or {},
        }
    return {
        "schema_version": 1,
        "kind": "arrays",
        "a_rr": c.a_rr.tolist(),
        "a_rt": c.a_rt.tolist(),
        "a_tt": c.a_tt.tolist(),
        "d": c.d.tolist(),
        "b_r": c.b_r.tolist(),
        "b_t": c.b_t.tolist(),
        "b_surf": c.b_surf.tolist(),
        "p": c.p.tolist(),
        "q": c.q.tolist(),
    }


def coefficients_from_json(doc: dict, mesh: DiskMesh) -> ProblemCoefficients:
    if doc["kind"] == "preset":
        return preset(doc["name"], mesh, **doc.get("params", {}))
    if doc["kind"] == "arrays":
        return ProblemCoefficients(
            mesh=mesh,
            a_rr=np.asarray(doc["a_rr"]),
            a_rt=np.asarray(doc["a_rt"]),
            a_tt=np.asarray(doc["a_tt"]),
            d=np.asarray(doc["d"]),
            b_r=np.asarray(doc["b_r"]),
            b_t=np.asarray(doc["b_t"]),
            b_surf=np.asarray(doc["b_surf"]),
            p=np.asarray(doc["p"]),
            q=np.asarray(doc["q"]),
        )
    raise ValueError(f"unknown coefficients document kind {doc.get('kind')!r}")


def operator_to_triplet_csv(path: str, matrix: sp.spmatrix) -> None:
    coo = matrix.tocoo()
    write_csv(
        path,
        ["row", "col", "value"],
        zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()),
    )


def export_report(path: str, payload, fmt: str) -> None:
    """Write a result report as CSV or JSON.

    ``fmt="csv"`` expects ``payload = (header, rows)`` and writes a
    header-only file for an empty row set; ``fmt="json"`` expects a dict.
    """
    if fmt == "csv":
        header, rows = payload
        write_csv(path, header, rows)
    elif fmt == "json":
        write_json(path, payload)
    else:
        raise ValueError(f"unsupported report format {fmt!r}")


def config_hash(resolved: dict) -> str:
    """Hash of the fully resolved configuration (defaults applied)."""
    canonical = "\n".join(f"{k} = {resolved[k]}" for k in sorted(resolved))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# report schemas (validated in the test suite)

_STATS = {
    "type": "object",
    "properties": {
        "max": {"type": "number"},
        "median": {"type": "number"},
        "min": {"type": "number"},
        "count": {"type": "integer"},
    },
    "required": ["max", "median", "min", "count"],
}

STABILITY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "seed": {"type": "integer"},
        "ensemble": {"type": "integer"},
        "n_diff_pairs": {"type": "integer"},
        "single_stats": _STATS,
        "diff_stats": _STATS,
        "uniqueness": {
            "type": "object",
            "properties": {
                "checked_pairs": {"type": "integer"},
                "violations": {"type": "array"},
            },
            "required": ["checked_pairs", "violations"],
        },
        "single_rows": {"type": "array"},
        "diff_rows": {"type": "array"},
    },
    "required": [
        "schema_version", "seed", "ensemble", "n_diff_pairs",
        "single_stats", "diff_stats", "uniqueness",
    ],
}

RECONSTRUCTION_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "n_bulk": {"type": "integer"},
        "n_surface": {"type": "integer"},
        "epsilon": {"type": "number"},
        "residual": {"type": "number"},
        "condition": {"type": "number"},
    },
    "required": ["schema_version", "n_bulk", "n_surface", "epsilon", "residual"],
}
