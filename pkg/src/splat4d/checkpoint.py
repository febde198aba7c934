"""Versioned binary checkpoints.

Tagged little-endian container: a 4-byte magic, a u32 format version, a u32
record count, then one record per field: u16 name length + utf-8 name, u8
dtype code, u8 ndim, ndim x u64 shape, raw C-order payload.  Records are
written in a fixed order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .core import DynamicSet, SceneModel, StaticSet
from .errors import ParseError

MAGIC = b"SP4D"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODE_JSON = 3


def _write_record(f, name: str, payload, code: int):
    raw_name = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw_name)))
    f.write(raw_name)
    if code == _CODE_JSON:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<BB", code, 1))
        f.write(struct.pack("<Q", len(body)))
        f.write(body)
        return
    arr = np.ascontiguousarray(payload, dtype=_DTYPE_CODES[code])
    f.write(struct.pack("<BB", code, arr.ndim))
    for s in arr.shape:
        f.write(struct.pack("<Q", s))
    f.write(arr.tobytes())


def _scene_records(scene: SceneModel):
    recs = [("scene/meta", {
        "duration_frames": scene.duration_frames,
        "total_frames": scene.total_frames,
        "keyframe_interval": scene.keyframe_interval,
    }, _CODE_JSON)]
    for name, arr in scene.statics.arrays().items():
        recs.append((f"static/{name}", arr, 0))
    for name, arr in scene.dynamics.arrays().items():
        recs.append((f"dynamic/{name}", arr, 0))
    return recs


def save(path, scene: SceneModel, config=None, iteration: int = 0, optimizer=None):
    """Write scene + config + iteration (+ optimizer moments when given)."""
    meta = {"iteration": int(iteration)}
    if config is not None:
        meta["config"] = asdict(config)
    if optimizer is not None:
        meta["optimizer_t"] = optimizer.t
    records = [("meta", meta, _CODE_JSON)]
    records.extend(_scene_records(scene))
    if optimizer is not None:
        for key in sorted(optimizer.m):
            records.append((f"opt/m/{key}", optimizer.m[key], 0))
            records.append((f"opt/v/{key}", optimizer.v[key], 0))

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(records)))
        for name, payload, code in records:
            _write_record(f, name, payload, code)


@dataclass
class Checkpoint:
    scene: SceneModel
    iteration: int
    config: dict | None
    moments: dict | None
    optimizer_t: int


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ParseError("bad checkpoint magic", offset=0)
    version, n_records = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)

    pos = 12
    fields: dict[str, object] = {}
    for _ in range(n_records):
        try:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
        except struct.error:
            raise ParseError("truncated record header", offset=pos)
        if code == _CODE_JSON:
            (size,) = shape
            fields[name] = json.loads(data[pos:pos + size].decode("utf-8"))
            pos += size
        else:
            dt = _DTYPE_CODES[code]
            count = int(np.prod(shape)) if shape else 1
            end = pos + count * dt.itemsize
            if end > len(data):
                raise ParseError("truncated record payload", offset=pos)
            fields[name] = np.frombuffer(data, dt, count=count, offset=pos).reshape(shape).copy()
            pos = end

    meta = fields["meta"]
    smeta = fields["scene/meta"]
    statics = StaticSet(**{k: fields[f"static/{k}"] for k in StaticSet.FIELDS})
    dynamics = DynamicSet(**{k: fields[f"dynamic/{k}"] for k in DynamicSet.FIELDS})
    scene = SceneModel(
        statics=statics, dynamics=dynamics,
        duration_frames=int(smeta["duration_frames"]),
        total_frames=int(smeta["total_frames"]),
        keyframe_interval=int(smeta["keyframe_interval"]),
    )
    moments = None
    if any(k.startswith("opt/") for k in fields):
        moments = {k: v for k, v in fields.items() if k.startswith("opt/")}
    return Checkpoint(
        scene=scene,
        iteration=int(meta.get("iteration", 0)),
        config=meta.get("config"),
        moments=moments,
        optimizer_t=int(meta.get("optimizer_t", 0)),
    )
