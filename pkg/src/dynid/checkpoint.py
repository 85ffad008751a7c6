"""Binary checkpoint container.

Layout (little-endian):

    bytes 0..3   magic "FCKP"
    byte  4      container version (0x01)
    bytes 5..8   u32 JSON header length H
    bytes 9..8+H UTF-8 JSON header
    rest         concatenated float32 arrays, row-major

The header carries the encoder config echo, optional classifier-head
metadata, the label map plus its sha256, an optional train-config echo, and
an array manifest (name, shape, offset, nbytes) describing the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .encoders import EncoderConfig, build_encoder
from .objectives import ClassifierHead

_MAGIC = b"FCKP"
_VERSION = 1
_PREFIX = struct.Struct("<4sBI")


class CheckpointError(ValueError):
    """Malformed container or config/params mismatch."""


def label_map_sha256(label_map: dict) -> str:
    blob = json.dumps(label_map, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def params_sha256(module: nn.Module) -> str:
    """Digest of all parameters and buffers, keyed order, float32 bytes."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(
            np.ascontiguousarray(state[name].detach().cpu().numpy(), dtype="<f4").tobytes()
        )
    return h.hexdigest()


@dataclass
class LoadedCheckpoint:
    encoder: nn.Module
    head: Optional[ClassifierHead]
    label_map: dict
    header: dict

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_json(self.header["encoder_config"])


def _state_arrays(prefix: str, module: nn.Module):
    out = []
    for name, tensor in module.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        out.append((f"{prefix}.{name}", arr))
    return out


def save_checkpoint(
    path,
    encoder: nn.Module,
    head: Optional[ClassifierHead] = None,
    label_map: Optional[dict] = None,
    stage: str = "",
    train_config: Optional[dict] = None,
    extra: Optional[dict] = None,
    extra_modules: Optional[dict] = None,
) -> None:
    """Serialize encoder (and optional head / auxiliary modules) to FCKP."""
    if not hasattr(encoder, "config"):
        raise CheckpointError("encoder lacks a config attribute; use build_encoder")
    label_map = label_map or {}

    arrays = _state_arrays("encoder", encoder)
    if head is not None:
        arrays += _state_arrays("head", head)
    for name, module in (extra_modules or {}).items():
        arrays += _state_arrays(name, module)

    manifest = []
    offset = 0
    for name, arr in arrays:
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
        )
        offset += arr.nbytes

    header = {
        "kind": "encoder+head" if head is not None else "encoder",
        "stage": stage,
        "encoder_config": encoder.config.to_json(),
        "head": None
        if head is None
        else {
            "num_classes": head.num_classes,
            "embed_dim": head.embed_dim,
            "scale": head.scale,
        },
        "label_map": label_map,
        "label_map_sha256": label_map_sha256(label_map),
        "train_config": train_config,
        "extra": extra or {},
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(_MAGIC, _VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> LoadedCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: shorter than container prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(data[_PREFIX.size : _PREFIX.size + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    payload = data[_PREFIX.size + header_len :]
    tensors = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']} overruns payload")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=start)
        tensors[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).copy()
        )

    stored_map = {str(k): int(v) for k, v in header["label_map"].items()}
    if label_map_sha256(stored_map) != header["label_map_sha256"]:
        raise CheckpointError(f"{path}: label map digest mismatch")

    cfg = EncoderConfig.from_json(header["encoder_config"])
    encoder = build_encoder(cfg)
    enc_state = {
        name[len("encoder.") :]: t
        for name, t in tensors.items()
        if name.startswith("encoder.")
    }
    try:
        encoder.load_state_dict(enc_state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: encoder params do not match config: {exc}") from exc

    head = None
    if header.get("head") is not None:
        meta = header["head"]
        head = ClassifierHead(meta["num_classes"], meta["embed_dim"], meta["scale"])
        head_state = {
            name[len("head.") :]: t
            for name, t in tensors.items()
            if name.startswith("head.")
        }
        try:
            head.load_state_dict(head_state, strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"{path}: head params do not match metadata: {exc}") from exc

    return LoadedCheckpoint(
        encoder=encoder, head=head, label_map=stored_map, header=header
    )
