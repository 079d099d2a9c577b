"""File formats: header+raw volumes, JSON lattices/arches/reports, 16-bit PGM.

Volumes are a JSON header next to a raw little-endian float32 blob in
depth-major then row-major order. Lattices and arch curves are JSON with
full-precision floats (Python's shortest round-trip repr), so text round
trips are value-exact. Panoramas are binary 16-bit PGM (big-endian sample
order, maxval 65535) after min-max scaling, with the scaling recorded in a
JSON sidecar.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .arch import ArchCurve, build_curve
from .errors import SchemaError, VolumeFormatError
from .lattice import ControlLattice
from .volume import Volume

VOLUME_DTYPE_TAG = "f32le"


def _require(doc: dict, field: str, where: str):
    if field not in doc:
        raise SchemaError(f"{where}: missing field '{field}'")
    return doc[field]


def _load_json(path: str, where: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{where}: cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: top level must be an object")
    return doc


def write_volume(vol: Volume, header_path: str) -> None:
    """Write the JSON header and the raw data blob next to it."""
    base = os.path.splitext(os.path.basename(header_path))[0]
    data_file = base + ".raw"
    header = {
        "dims": list(vol.dims),
        "spacing_mm": [float(s) for s in vol.spacing],
        "dtype": VOLUME_DTYPE_TAG,
        "data_file": data_file,
        "intensity_range": [float(vol.data.min()), float(vol.data.max())],
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    blob = np.ascontiguousarray(vol.data, dtype="<f4").tobytes()
    with open(os.path.join(os.path.dirname(header_path) or ".", data_file), "wb") as fh:
        fh.write(blob)


def read_volume(header_path: str) -> Volume:
    """Read a header+raw volume; length, dtype, and finiteness are enforced."""
    doc = _load_json(header_path, "volume header")
    dims = _require(doc, "dims", "volume header")
    spacing = _require(doc, "spacing_mm", "volume header")
    dtype = _require(doc, "dtype", "volume header")
    data_file = _require(doc, "data_file", "volume header")
    if dtype != VOLUME_DTYPE_TAG:
        raise VolumeFormatError(f"unsupported dtype '{dtype}' (expected {VOLUME_DTYPE_TAG})")
    if not (isinstance(dims, list) and len(dims) == 3):
        raise SchemaError("volume header: field 'dims' must be a 3-element list")
    d, h, w = (int(x) for x in dims)
    expected = 4 * d * h * w
    data_path = os.path.join(os.path.dirname(header_path) or ".", data_file)
    try:
        with open(data_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise VolumeFormatError(f"cannot read data file {data_path}: {exc}") from exc
    if len(blob) != expected:
        raise VolumeFormatError(
            f"data file {data_file} has {len(blob)} bytes, dims {dims} require {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4").reshape(d, h, w)
    if not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"data file {data_file} contains NaN or Inf")
    return Volume((d, h, w), tuple(float(s) for s in spacing), data.copy())


def write_lattice(lat: ControlLattice, path: str) -> None:
    """JSON lattice: dims plus a flat coords list, axis-major then depth-major."""
    doc = {
        "dims": list(lat.dims),
        "coords": [float(v) for v in lat.coords.ravel(order="C")],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_lattice(path: str) -> ControlLattice:
    doc = _load_json(path, "lattice")
    dims = _require(doc, "dims", "lattice")
    coords = _require(doc, "coords", "lattice")
    if not (isinstance(dims, list) and len(dims) == 3):
        raise SchemaError("lattice: field 'dims' must be a 3-element list")
    dc, hc, wc = (int(x) for x in dims)
    arr = np.asarray(coords, dtype=np.float64)
    if arr.size != 3 * dc * hc * wc:
        raise SchemaError(
            f"lattice: field 'coords' has {arr.size} values, dims {dims} require "
            f"{3 * dc * hc * wc}"
        )
    return ControlLattice(arr.reshape(3, dc, hc, wc))


def write_arch(curve: ArchCurve, path: str) -> None:
    """JSON arch curve: points list plus optional z_range."""
    doc = {"points": [[float(x), float(y)] for x, y in curve.points]}
    if curve.z_range is not None:
        doc["z_range"] = [float(curve.z_range[0]), float(curve.z_range[1])]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_arch(path: str) -> ArchCurve:
    doc = _load_json(path, "arch")
    points = _require(doc, "points", "arch")
    if not isinstance(points, list):
        raise SchemaError("arch: field 'points' must be a list of [x, y] pairs")
    for i, p in enumerate(points):
        if not (isinstance(p, list) and len(p) == 2):
            raise SchemaError(f"arch: field 'points[{i}]' must be an [x, y] pair")
    z_range = doc.get("z_range")
    if z_range is not None:
        if not (isinstance(z_range, list) and len(z_range) == 2):
            raise SchemaError("arch: field 'z_range' must be a [min, max] pair")
        z_range = (float(z_range[0]), float(z_range[1]))
    return build_curve(np.asarray(points, dtype=np.float64), z_range=z_range)


def write_panorama_pgm(image: np.ndarray, path: str) -> None:
    """16-bit binary PGM after min-max scaling, plus a JSON scaling sidecar."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise VolumeFormatError(f"panorama must be 2D, got shape {img.shape}")
    lo = float(img.min())
    hi = float(img.max())
    if hi == lo:
        scaled = np.zeros(img.shape, dtype=np.uint16)
    else:
        scaled = np.round((img - lo) / (hi - lo) * 65535.0).astype(np.uint16)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(scaled.astype(">u2").tobytes())
    sidecar = {"min": lo, "max": hi, "maxval": 65535}
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def read_panorama_pgm(path: str) -> tuple[np.ndarray, dict]:
    """Read back a 16-bit PGM and its scaling sidecar."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise VolumeFormatError(f"{path} is not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    if maxval != 65535:
        raise VolumeFormatError(f"{path}: expected maxval 65535, got {maxval}")
    img = np.frombuffer(parts[3], dtype=">u2", count=h * w).reshape(h, w)
    sidecar = _load_json(path + ".json", "panorama sidecar")
    return img.astype(np.uint16), sidecar


def write_report(report: dict, path: str) -> None:
    """Structured text report: term names to values, sorted for diffable logs."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
