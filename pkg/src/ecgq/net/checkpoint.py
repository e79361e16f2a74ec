"""Binary checkpoint format.

Layout (little-endian)::

    b"ECGQ1" | u16 version | u8 kind | u32 n | n bytes of JSON hyperparameters
    then until EOF:  u16 name_len | name | u8 rank | rank * u32 dims | float32 payload
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderDet
from .unet import UNetLite

MAGIC = b"ECGQ1"
VERSION = 1
KINDS = {"unet_pixel": 0, "unet_latent": 1, "autoencoder": 2}
KIND_NAMES = {v: k for k, v in KINDS.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    version: int
    kind: str
    hyperparameters: dict
    hyper_json: bytes
    params: OrderedDict


def model_kind(model):
    if isinstance(model, AutoencoderDet):
        return "autoencoder"
    if isinstance(model, UNetLite):
        return "unet_pixel" if model.in_channels == 1 else "unet_latent"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(model, path, meta=None, kind=None):
    """Write ``model`` and a JSON block of its hyperparameters plus ``meta``."""
    kind = kind or model_kind(model)
    hyper = {"model": model.hyperparameters(), "meta": meta or {}}
    blob = json.dumps(hyper, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HBI", VERSION, KINDS[kind], len(blob)) + blob)
        for name, p in model.parameters().items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return path


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:5]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, kind, n = struct.unpack_from("<HBI", raw, 5)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if kind not in KIND_NAMES:
        raise CheckpointError(f"{path}: unknown model kind {kind}")
    pos = 12
    blob = raw[pos:pos + n]
    pos += n
    try:
        hyper = json.loads(blob)
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt hyperparameter block") from exc
    params = OrderedDict()
    try:
        while pos < len(raw):
            (ln,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            (rank,) = struct.unpack_from("<B", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated tensor table") from exc
    return ModelCheckpoint(version, KIND_NAMES[kind], hyper, blob, params)


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; checkpoint metadata lands in ``model.meta``."""
    ck = read_checkpoint(path)
    hp = dict(ck.hyperparameters["model"])
    if ck.kind == "autoencoder":
        model = AutoencoderDet(hp["in_channels"], hp["latent_channels"], tuple(hp["widths"]),
                               hp["seed"], hp["latent_scale"])
    else:
        model = UNetLite(hp["in_channels"], tuple(hp["widths"]), hp["seed"], hp["n_steps"])
    expected = model.parameters()
    if set(expected) != set(ck.params):
        raise CheckpointError(f"{path}: parameter names do not match a {ck.kind} model")
    for name, value in ck.params.items():
        model.set_parameter(name, value)
    model.zero_grad()
    model.meta = ck.hyperparameters.get("meta", {})
    model.checkpoint = ck
    return model
