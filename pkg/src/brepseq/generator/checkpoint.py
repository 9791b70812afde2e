"""Versioned binary checkpoints for next-token models.

Layout: ``b"BRTM"``, uint32 version, uint32 header length, JSON header,
payload. Transformer payloads are the parameters in ``state_dict`` order as
little-endian float32; n-gram payloads are the count tables as JSON.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from ..errors import SchemaError
from .ngram import NGramModel
from .transformer import DecoderOnlyTransformer, TransformerConfig, TransformerModel

MAGIC = b"BRTM"
VERSION = 1


def checkpoint_bytes(model, meta: dict | None = None) -> bytes:
    header = {"meta": meta or {}}
    if isinstance(model, NGramModel):
        header["kind"] = "ngram"
        payload = model.to_bytes()
    elif isinstance(model, TransformerModel):
        state = model.net.state_dict()
        header["kind"] = "transformer"
        header["config"] = model.cfg.to_dict()
        header["end_token"] = model.end_token
        header["params"] = [[name, list(t.shape)] for name, t in state.items()]
        payload = b"".join(t.detach().cpu().numpy().astype("<f4").tobytes() for t in state.values())
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    blob = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + payload


def checkpoint_from_bytes(data: bytes):
    """Return ``(model, header)``."""
    if data[:4] != MAGIC:
        raise SchemaError("not a model checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12:12 + hlen])
    except ValueError as exc:
        raise SchemaError(f"unreadable checkpoint header: {exc}") from None
    payload = data[12 + hlen:]
    if header.get("kind") == "ngram":
        try:
            return NGramModel.from_state(json.loads(payload)), header
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"corrupt n-gram payload: {exc}") from None
    if header.get("kind") == "transformer":
        cfg = TransformerConfig(**header["config"])
        net = DecoderOnlyTransformer(cfg)
        expected = 4 * sum(int(np.prod(shape)) for _, shape in header["params"])
        if expected != len(payload):
            raise SchemaError("checkpoint payload size does not match its header")
        state = {}
        off = 0
        for name, shape in header["params"]:
            n = int(np.prod(shape))
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape)
            state[name] = torch.from_numpy(arr.astype(np.float32))
            off += 4 * n
        net.load_state_dict(state)
        return TransformerModel(net, header.get("end_token")), header
    raise SchemaError(f"unknown checkpoint kind {header.get('kind')!r}")


def save_checkpoint(path, model, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, meta))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
