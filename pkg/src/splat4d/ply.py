"""Minimal PLY point-cloud reader/writer.

Reads ASCII and binary-little-endian PLY with x/y/z positions and
red/green/blue colors (uchar or float).  Extra properties are skipped.
Byte offsets in parse errors point at the offending header line or the
start of the malformed payload.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyCloudError, ParseError

_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_pointcloud(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (positions (N, 3) float64, colors (N, 3) float64 in [0, 1])."""
    with open(path, "rb") as f:
        data = f.read()

    if not data.startswith(b"ply"):
        raise ParseError("not a PLY file (missing 'ply' magic)", offset=0)

    # ---- header ----
    offset = 0
    fmt = None
    n_vertex = None
    props: list[tuple[str, str]] = []  # (dtype code, name) of the vertex element
    in_vertex = False
    while True:
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise ParseError("header not terminated by end_header", offset=offset)
        line = data[offset:nl].decode("ascii", "replace").strip()
        line_off = offset
        offset = nl + 1
        if not line or line.startswith("comment") or line == "ply":
            continue
        parts = line.split()
        if parts[0] == "format":
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary"
            else:
                raise ParseError(f"unsupported format {parts[1]!r}", offset=line_off)
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(parts[2])
                except (IndexError, ValueError):
                    raise ParseError("bad vertex element count", offset=line_off)
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ParseError("list properties unsupported in vertex element", offset=line_off)
            if parts[1] not in _DTYPES:
                raise ParseError(f"unknown property type {parts[1]!r}", offset=line_off)
            props.append((_DTYPES[parts[1]], parts[2]))
        elif parts[0] == "end_header":
            break

    if fmt is None:
        raise ParseError("missing format line", offset=0)
    if n_vertex is None:
        raise ParseError("missing vertex element", offset=0)
    if n_vertex == 0:
        raise EmptyCloudError("point cloud has zero vertices")
    names = [name for _, name in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise ParseError(f"vertex element lacks property {need!r}", offset=0)

    if fmt == "binary":
        dt = np.dtype([(name, "<" + code) for code, name in props])
        need = n_vertex * dt.itemsize
        if len(data) - offset < need:
            raise ParseError(
                f"payload truncated: need {need} bytes, have {len(data) - offset}",
                offset=offset)
        rec = np.frombuffer(data, dtype=dt, count=n_vertex, offset=offset)
    else:
        text = data[offset:].decode("ascii", "replace").split()
        want = n_vertex * len(props)
        if len(text) < want:
            raise ParseError(
                f"ASCII payload truncated: need {want} values, have {len(text)}",
                offset=offset)
        try:
            vals = np.array(text[:want], dtype=np.float64).reshape(n_vertex, len(props))
        except ValueError:
            raise ParseError("non-numeric value in ASCII payload", offset=offset)
        rec = {name: vals[:, i] for i, (_, name) in enumerate(props)}

    pos = np.stack([np.asarray(rec["x"], np.float64),
                    np.asarray(rec["y"], np.float64),
                    np.asarray(rec["z"], np.float64)], axis=-1)

    if all(c in names for c in ("red", "green", "blue")):
        cols = np.stack([np.asarray(rec["red"], np.float64),
                         np.asarray(rec["green"], np.float64),
                         np.asarray(rec["blue"], np.float64)], axis=-1)
        codes = {name: code for code, name in props}
        if codes["red"] == "u1":
            cols = cols / 255.0
    else:
        cols = np.full_like(pos, 0.5)
    return pos, np.clip(cols, 0.0, 1.0)


def save_pointcloud(path, positions: np.ndarray, colors: np.ndarray):
    """Binary little-endian PLY with positions and 8-bit colors."""
    positions = np.asarray(positions, np.float64).reshape(-1, 3)
    colors8 = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8).reshape(-1, 3)
    n = positions.shape[0]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.empty(n, dtype=dt)
    rec["x"], rec["y"], rec["z"] = positions.T
    rec["red"], rec["green"], rec["blue"] = colors8.T
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())
