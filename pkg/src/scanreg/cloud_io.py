"""Point-cloud and trajectory file IO.

Supported scan formats:
  * PLY, ascii or binary little-endian, vertex properties x, y, z and
    optionally intensity and ring.
  * raw-f32x4: consecutive little-endian float32 quadruples (x, y, z, intensity).

Trajectories are plain text, one "timestamp tx ty tz qx qy qz qw" line per
record (TUM convention), so standard trajectory-evaluation tools can consume
the output directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scanreg.geometry import Pose


class ScanFormatError(ValueError):
    """Malformed or truncated scan file."""


@dataclass
class Scan:
    """One LiDAR sweep: point coordinates plus optional intensity/ring channels."""

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    ring: np.ndarray | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        if self.ring is not None:
            self.ring = np.asarray(self.ring, dtype=np.int32).reshape(-1)

    def __len__(self) -> int:
        return self.xyz.shape[0]


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    timestamp: float
    pose: Pose


_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def _check_finite(xyz: np.ndarray) -> None:
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ScanFormatError(f"non-finite coordinates at point {idx}")


def _parse_ply_header(raw: bytes):
    end = raw.find(b"end_header")
    if end < 0:
        raise ScanFormatError("PLY header missing end_header")
    end_line = raw.find(b"\n", end)
    if end_line < 0:
        raise ScanFormatError("PLY header not newline-terminated")
    header = raw[:end_line].decode("ascii", errors="replace").splitlines()
    body = raw[end_line + 1 :]

    if not header or header[0].strip() != "ply":
        raise ScanFormatError("not a PLY file")
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian"):
                raise ScanFormatError(f"unsupported PLY format: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if tok[1] == "vertex":
                in_vertex = True
                count = int(tok[2])
            else:
                in_vertex = False
                if int(tok[2]) > 0:
                    raise ScanFormatError(f"unsupported PLY element: {tok[1]}")
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ScanFormatError("list properties not supported")
            if tok[1] not in _PLY_TYPES:
                raise ScanFormatError(f"unsupported property type: {tok[1]}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt is None or count is None:
        raise ScanFormatError("PLY header missing format or vertex element")
    names = [n for n, _ in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ScanFormatError(f"PLY vertex missing property {axis}")
    return fmt, count, props, body


def _read_ply(raw: bytes, timestamp: float) -> Scan:
    fmt, count, props, body = _parse_ply_header(raw)
    names = [n for n, _ in props]
    if fmt == "ascii":
        rows = [ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
        if len(rows) < count:
            raise ScanFormatError(f"truncated payload: {len(rows)} rows, expected {count}")
        try:
            data = np.array(
                [[float(v) for v in ln.split()] for ln in rows[:count]], dtype=float
            ).reshape(count, len(props)) if count else np.empty((0, len(props)))
        except ValueError as exc:
            raise ScanFormatError(f"bad ascii vertex row: {exc}") from exc
        cols = {n: data[:, i] for i, (n, _) in enumerate(props)}
    else:
        dtype = np.dtype([(n, t) for n, t in props])
        need = dtype.itemsize * count
        if len(body) < need:
            raise ScanFormatError(f"truncated payload: {len(body)} bytes, expected {need}")
        rec = np.frombuffer(body[:need], dtype=dtype)
        cols = {n: rec[n].astype(float) for n in names}
    xyz = np.column_stack([cols["x"], cols["y"], cols["z"]]) if count else np.empty((0, 3))
    _check_finite(xyz)
    intensity = cols.get("intensity")
    ring = cols["ring"].astype(np.int32) if "ring" in cols else None
    return Scan(xyz, intensity=intensity, ring=ring, timestamp=timestamp)


def _read_raw_f32x4(raw: bytes, timestamp: float) -> Scan:
    if len(raw) % 16 != 0:
        raise ScanFormatError(f"raw-f32x4 size {len(raw)} not a multiple of 16 bytes")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(float)
    xyz = data[:, :3]
    _check_finite(xyz)
    return Scan(xyz, intensity=data[:, 3], timestamp=timestamp)


def read_scan(path, format: str | None = None, timestamp: float = 0.0) -> Scan:
    """Read a scan file. `format` is one of ply-ascii, ply-binary-le, raw-f32x4.

    When omitted, the format is inferred from the file suffix (.ply vs .bin/.raw);
    the two PLY flavors are distinguished by the header itself.
    """
    path = Path(path)
    raw = path.read_bytes()
    if format is None:
        format = "ply-ascii" if path.suffix.lower() == ".ply" else "raw-f32x4"
    if format in ("ply-ascii", "ply-binary-le", "ply"):
        scan = _read_ply(raw, timestamp)
    elif format == "raw-f32x4":
        scan = _read_raw_f32x4(raw, timestamp)
    else:
        raise ValueError(f"unknown scan format: {format}")
    return scan


def write_scan_ply(path, scan: Scan, binary: bool = True) -> None:
    """Write a scan as PLY (double-precision coordinates)."""
    n = len(scan)
    props = ["property double x", "property double y", "property double z"]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if scan.intensity is not None:
        props.append("property float intensity")
        fields.append(("intensity", "<f4"))
    if scan.ring is not None:
        props.append("property ushort ring")
        fields.append(("ring", "<u2"))
    fmt = "binary_little_endian" if binary else "ascii"
    header = "ply\nformat {} 1.0\nelement vertex {}\n{}\nend_header\n".format(
        fmt, n, "\n".join(props)
    )
    rec = np.zeros(n, dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = scan.xyz[:, 0], scan.xyz[:, 1], scan.xyz[:, 2]
    if scan.intensity is not None:
        rec["intensity"] = scan.intensity
    if scan.ring is not None:
        rec["ring"] = scan.ring
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(repr(float(v)) if isinstance(v, float) else str(v)
                                   for v in row.tolist()) + "\n").encode("ascii"))


def write_raw_f32x4(path, scan: Scan) -> None:
    inten = scan.intensity if scan.intensity is not None else np.zeros(len(scan))
    data = np.column_stack([scan.xyz, inten]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def write_trajectory(records, path) -> None:
    """Write trajectory records as "timestamp tx ty tz qx qy qz qw" lines.

    Timestamps use 9 fixed decimals; pose components use 9 significant digits.
    """
    records = list(records)
    if not records:
        raise ValueError("trajectory must contain at least one record")
    lines = []
    for rec in records:
        vals = np.concatenate([rec.pose.trans, rec.pose.quat])
        lines.append(f"{rec.timestamp:.9f} " + " ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> list[TrajectoryRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        ts, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
        q = np.array([qx, qy, qz, qw])
        q = q / np.linalg.norm(q)
        records.append(TrajectoryRecord(ts, Pose(q, np.array([tx, ty, tz]))))
    return records
