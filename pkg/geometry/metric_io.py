"""
Metric file format.

Text files start with the line ``# riccilab-metric v1``, followed by one
JSON header line and then, for every field, a line with the field name and
a line with its row-major values written with 17 significant digits.
Binary files start with ``# riccilab-metric-binary v1``, then the JSON
header line, then the fields as little-endian float64 in header order.
Both round-trip float64 values exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from numpy.typing import NDArray

from geometry.grid import Grid
from geometry.tensorfield import BackgroundMetric, MetricField, TensorField
from models.data_models import GridSpec
from utils.exceptions import MetricFileError
from utils.logger import get_logger

TEXT_MAGIC = "# riccilab-metric v1"
BINARY_MAGIC = "# riccilab-metric-binary v1"
BINARY_SUFFIXES = (".bin", ".rmb")

KINDS = ("metric", "vector", "warped")


@dataclass
class MetricDocument:
    """Contents of one metric file."""
    grid_spec: GridSpec
    kind: str
    fields: Dict[str, NDArray]
    flags: Dict[str, bool] = field(default_factory=lambda: {"half": False, "doubled": False, "warped": False})
    time: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def header(self) -> Dict[str, Any]:
        return {
            "dim": self.grid_spec.dim,
            "axes": [axis.to_dict() for axis in self.grid_spec.axes],
            "order": self.grid_spec.order,
            "fields": list(self.fields),
            "shape": list(self.grid_spec.shape),
            "kind": self.kind,
            "flags": dict(self.flags),
            "time": self.time,
            "extra": self.extra,
        }


def _metric_field_names(n: int) -> List[str]:
    return [f"g{i}{j}" for i in range(n) for j in range(i, n)]


def metric_document(g: MetricField, half: bool = False, doubled: bool = False,
                    extra: Optional[Dict[str, Any]] = None) -> MetricDocument:
    n = g.n
    fields = {f"g{i}{j}": np.ascontiguousarray(g.data[..., i, j]) for i in range(n) for j in range(i, n)}
    extra = dict(extra or {})
    extra.setdefault("background", g.background.mode.value)
    return MetricDocument(g.grid.spec, "metric", fields,
                          {"half": half, "doubled": doubled, "warped": False}, g.time, extra)


def vector_document(u: TensorField, extra: Optional[Dict[str, Any]] = None) -> MetricDocument:
    if u.rank != 1:
        raise MetricFileError("vector files hold rank-1 fields")
    fields = {f"u{k}": np.ascontiguousarray(u.data[..., k]) for k in range(u.n)}
    return MetricDocument(u.grid.spec, "vector", fields, time=u.time, extra=dict(extra or {}))


def warped_document(grid: Grid, psi: NDArray, phi: NDArray, n: int, time: Optional[float] = None,
                    hemisphere: bool = False) -> MetricDocument:
    fields = {"psi": np.asarray(psi, dtype=float), "phi": np.asarray(phi, dtype=float)}
    return MetricDocument(grid.spec, "warped", fields,
                          {"half": hemisphere, "doubled": False, "warped": True}, time, {"n": int(n)})


def _is_binary(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in BINARY_SUFFIXES


def write_document(path: str, document: MetricDocument, binary: Optional[bool] = None) -> None:
    """Write a document as text, or as binary when the suffix is .bin/.rmb."""
    binary = _is_binary(path) if binary is None else binary
    header = json.dumps(document.header(), sort_keys=True)
    try:
        if binary:
            with open(path, "wb") as handle:
                handle.write((BINARY_MAGIC + "\n" + header + "\n").encode("utf-8"))
                for values in document.fields.values():
                    handle.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        else:
            with open(path, "w", encoding="utf-8") as handle:
                handle.write(TEXT_MAGIC + "\n" + header + "\n")
                for name, values in document.fields.items():
                    handle.write(name + "\n")
                    handle.write(" ".join("%.17g" % v for v in np.ravel(values)) + "\n")
    except OSError as e:
        raise MetricFileError(f"Cannot write metric file {path}: {e}")
    get_logger().debug(f"wrote {document.kind} file {path} ({'binary' if binary else 'text'})")


def _parse_header(line: str, path: str) -> Dict[str, Any]:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise MetricFileError(f"{path}: malformed header: {e}")
    for key in ("dim", "axes", "fields", "shape", "kind"):
        if key not in header:
            raise MetricFileError(f"{path}: header is missing '{key}'")
    if header["kind"] not in KINDS:
        raise MetricFileError(f"{path}: unknown kind {header['kind']!r}")
    return header


def _document_from(header: Dict[str, Any], fields: Dict[str, NDArray], path: str) -> MetricDocument:
    try:
        spec = GridSpec.from_dict({"axes": header["axes"], "order": header.get("order", 2)})
    except (KeyError, TypeError, ValueError) as e:
        raise MetricFileError(f"{path}: invalid grid description: {e}")
    if list(spec.shape) != list(header["shape"]) or spec.dim != header["dim"]:
        raise MetricFileError(f"{path}: header shape does not match its axes")
    return MetricDocument(spec, header["kind"], fields,
                          header.get("flags", {"half": False, "doubled": False, "warped": False}),
                          header.get("time"), header.get("extra", {}))


def read_document(path: str) -> MetricDocument:
    """Read a text or binary metric file, detected from its first line."""
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as e:
        raise MetricFileError(f"Cannot read metric file {path}: {e}")

    first_end = raw.find(b"\n")
    second_end = raw.find(b"\n", first_end + 1)
    if first_end < 0 or second_end < 0:
        raise MetricFileError(f"{path}: truncated file")
    magic = raw[:first_end].decode("utf-8", errors="replace").strip()
    header = _parse_header(raw[first_end + 1:second_end].decode("utf-8", errors="replace"), path)
    shape = tuple(header["shape"])
    count = int(np.prod(shape))
    fields: Dict[str, NDArray] = {}

    if magic == BINARY_MAGIC:
        body = raw[second_end + 1:]
        expected = 8 * count * len(header["fields"])
        if len(body) != expected:
            raise MetricFileError(f"{path}: expected {expected} data bytes, found {len(body)}")
        values = np.frombuffer(body, dtype="<f8").astype(float)
        for k, name in enumerate(header["fields"]):
            fields[name] = values[k * count:(k + 1) * count].reshape(shape)
    elif magic == TEXT_MAGIC:
        lines = raw[second_end + 1:].decode("utf-8").splitlines()
        if len(lines) != 2 * len(header["fields"]):
            raise MetricFileError(f"{path}: expected {len(header['fields'])} fields")
        for k, name in enumerate(header["fields"]):
            if lines[2 * k].strip() != name:
                raise MetricFileError(f"{path}: expected field {name!r}, found {lines[2 * k].strip()!r}")
            try:
                values = np.array([float(v) for v in lines[2 * k + 1].split()])
            except ValueError as e:
                raise MetricFileError(f"{path}: field {name!r} has a non-numeric value: {e}")
            if values.size != count:
                raise MetricFileError(f"{path}: field {name!r} has {values.size} values, expected {count}")
            fields[name] = values.reshape(shape)
    else:
        raise MetricFileError(f"{path}: not a metric file")
    return _document_from(header, fields, path)


def document_to_metric(document: MetricDocument, background: Optional[BackgroundMetric] = None) -> MetricField:
    """Rebuild the MetricField held by a ``metric`` document."""
    if document.kind != "metric":
        raise MetricFileError(f"expected a metric document, found {document.kind!r}")
    grid = Grid(document.grid_spec)
    n = grid.dim
    missing = [name for name in _metric_field_names(n) if name not in document.fields]
    if missing:
        raise MetricFileError(f"metric document lacks components {missing}")
    data = np.empty(grid.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            data[..., i, j] = document.fields[f"g{i}{j}"]
            data[..., j, i] = document.fields[f"g{i}{j}"]
    if background is None:
        mode = document.extra.get("background")
        if mode is not None:
            background = BackgroundMetric(grid, mode)
    return MetricField(grid, data, background=background, time=document.time)


def document_to_vector(document: MetricDocument) -> TensorField:
    if document.kind != "vector":
        raise MetricFileError(f"expected a vector document, found {document.kind!r}")
    grid = Grid(document.grid_spec)
    data = np.stack([document.fields[f"u{k}"] for k in range(grid.dim)], axis=-1)
    return TensorField(grid, data, rank=1, time=document.time)


def write_metric(path: str, g: MetricField, half: bool = False, doubled: bool = False,
                 binary: Optional[bool] = None, extra: Optional[Dict[str, Any]] = None) -> None:
    write_document(path, metric_document(g, half, doubled, extra), binary)


def read_metric(path: str) -> MetricField:
    return document_to_metric(read_document(path))
