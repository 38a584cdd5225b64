"""
Binary checkpoint format (``.pgck``).

Layout::

    b"PGCK"                      4 bytes magic
    version                      uint32 little-endian
    metadata length              uint32 little-endian
    metadata                     UTF-8 JSON (config, phase, epoch, step,
                                 RNG state, Adam step counters, manifest)
    blobs                        little-endian float32 arrays in manifest order

Manifest entries carry ``name``, ``group`` (``param``, ``adam_m`` or
``adam_v``), ``shape`` and a byte ``offset`` relative to the start of the
blob section.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PGCK"
VERSION = 1
_GROUPS = ("param", "adam_m", "adam_v")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    phase: dict  # level, alpha, epoch_in_phase
    epoch: int  # completed epochs
    step: int  # completed optimizer steps
    rng_state: dict
    params: dict  # name -> float32 array, "G." and "D." prefixes
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_steps: dict = field(default_factory=dict)
    version: int = VERSION

    def generator_params(self):
        return OrderedDict((k, v) for k, v in self.params.items() if k.startswith("G."))

    def discriminator_params(self):
        return OrderedDict((k, v) for k, v in self.params.items() if k.startswith("D."))


def _as_f32(name, arr):
    arr = np.asarray(arr)
    out = arr.astype("<f4")
    if arr.dtype != np.float32 and not np.array_equal(out.astype(arr.dtype), arr):
        raise CheckpointError(f"{name}: values are not exactly representable as float32")
    return np.ascontiguousarray(out)


def save_checkpoint(ckpt, path):
    manifest, blobs, offset = [], [], 0
    for group, table in zip(_GROUPS, (ckpt.params, ckpt.adam_m, ckpt.adam_v)):
        for name, arr in table.items():
            data = _as_f32(name, arr)
            manifest.append({"name": name, "group": group, "shape": list(data.shape), "offset": offset})
            blobs.append(data.tobytes())
            offset += data.nbytes
    meta = {
        "config": ckpt.config,
        "phase": ckpt.phase,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "adam_steps": ckpt.adam_steps,
        "manifest": manifest,
        "blob_bytes": offset,
    }
    doc = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)
        for b in blobs:
            fh.write(b)


def read_metadata(fh):
    head = fh.read(12)
    if len(head) < 12 or head[:4] != MAGIC:
        raise CheckpointError("not a PGCK checkpoint (bad magic)")
    (version,) = struct.unpack("<I", head[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (n,) = struct.unpack("<I", head[8:12])
    doc = fh.read(n)
    if len(doc) != n:
        raise CheckpointError("truncated metadata")
    try:
        meta = json.loads(doc.decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from exc
    meta["version"] = version
    return meta, 12 + n


def load_checkpoint(path, groups=_GROUPS, prefix=""):
    """Read a checkpoint. ``groups`` and ``prefix`` restrict which blobs are loaded."""
    with open(path, "rb") as fh:
        meta, start = read_metadata(fh)
        tables = {g: OrderedDict() for g in _GROUPS}
        for entry in meta["manifest"]:
            if entry["group"] not in groups or not entry["name"].startswith(prefix):
                continue
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            fh.seek(start + entry["offset"])
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"truncated blob for {entry['name']}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            tables[entry["group"]][entry["name"]] = arr
    return Checkpoint(
        config=meta["config"],
        phase=meta["phase"],
        epoch=meta["epoch"],
        step=meta["step"],
        rng_state=meta["rng_state"],
        params=tables["param"],
        adam_m=tables["adam_m"],
        adam_v=tables["adam_v"],
        adam_steps=meta["adam_steps"],
        version=meta["version"],
    )
