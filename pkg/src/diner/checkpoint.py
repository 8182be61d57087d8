"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DINR"  | u32 version | u64 metadata length | metadata (UTF-8 JSON) | payload

The payload is a sequence of little-endian float64 arrays whose names and
shapes are listed, in order, under ``metadata["sections"]``. Loading a saved
model gives back bitwise-identical arrays.
"""
import json
import struct

import numpy as np

from .coord_table import CoordTable
from .exceptions import CheckpointVersionError
from .imageio import atomic_write
from .network import Backbone, BackboneSpec
from .numerics import AdamState
from .training import INRModel

MAGIC = b"DINR"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _sections(model):
    bk = model.backbone
    for i, (W, b) in enumerate(zip(bk.weights, bk.biases)):
        yield f"W{i}", W
        yield f"b{i}", b
    for k, st in enumerate(model.net_state):
        yield f"adam_m{k}", st.m
        yield f"adam_v{k}", st.v
    if model.table is not None:
        t = model.table
        yield "table", t.entries
        yield "table_m", t.m
        yield "table_v", t.v
        yield "table_steps", t.steps.astype(np.float64)


def encode_checkpoint(model, train_config=None, extra=None):
    sections = list(_sections(model))
    meta = dict(
        backbone=model.backbone.spec.to_dict(),
        table=None if model.table is None else dict(n=model.table.n, d_in=model.table.d_in),
        train_config=train_config,
        epoch=model.epoch,
        adam_t=[st.t for st in model.net_state],
        sections=[dict(name=name, shape=list(arr.shape)) for name, arr in sections],
    )
    if extra:
        meta["extra"] = extra
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta_bytes)), meta_bytes]
    parts.extend(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in sections)
    return b"".join(parts)


def decode_checkpoint(buf):
    """Parse checkpoint bytes into ``(INRModel, metadata)``."""
    if buf[:4] != MAGIC:
        raise CheckpointFormatError("not a DINR checkpoint")
    version, meta_len = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    start = 16
    meta = json.loads(buf[start:start + meta_len].decode("utf-8"))
    offset = start + meta_len
    arrays = {}
    for sec in meta["sections"]:
        shape = tuple(sec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(buf):
            raise CheckpointFormatError(f"payload truncated in section {sec['name']}")
        arrays[sec["name"]] = np.frombuffer(buf, dtype="<f8", count=count,
                                            offset=offset).astype(np.float64).reshape(shape)
        offset = end
    if offset != len(buf):
        raise CheckpointFormatError("trailing bytes after the last payload section")

    spec = BackboneSpec(**meta["backbone"])
    n_layers = spec.depth + 1
    backbone = Backbone(spec, [arrays[f"W{i}"] for i in range(n_layers)],
                        [arrays[f"b{i}"] for i in range(n_layers)])
    state = [AdamState(arrays[f"adam_m{k}"], arrays[f"adam_v{k}"], int(t))
             for k, t in enumerate(meta["adam_t"])]
    table = None
    if meta["table"] is not None:
        table = CoordTable(arrays["table"])
        table.m = arrays["table_m"]
        table.v = arrays["table_v"]
        table.steps = arrays["table_steps"].astype(np.int64)
    return INRModel(backbone, table, state, int(meta["epoch"])), meta


def save_checkpoint(path, model, train_config=None, extra=None):
    atomic_write(path, encode_checkpoint(model, train_config, extra))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
