"""Versioned binary checkpoints.

Layout, in order: the magic string ``IOGLM``; a little-endian uint32 format
version; a little-endian uint32 header length; a canonical JSON header
(sorted keys, compact separators) describing the configuration echo, the
vocabulary, the model/gate structure, and an array manifest of explicit
names, shapes, and dtypes; the raw array payload in manifest order as
little-endian floats; and finally an 8-byte BLAKE2b digest of every
preceding byte. A flipped byte anywhere changes the digest and the load
fails; saves go to a temporary file in the target directory and are renamed
into place, so an interrupted save never leaves a partial checkpoint behind.

Round trips are bit-exact: load(save(x)) reproduces every array, and saving
again yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import corpus, gate as gate_mod, model

MAGIC = b"IOGLM"
VERSION = 1
_DIGEST_SIZE = 8


class CheckpointError(Exception):
    """Malformed, truncated, or corrupted checkpoint file."""


@dataclass
class Checkpoint:
    vocab: corpus.Vocabulary
    lm: model.LMParams
    gate: gate_mod.IOGParams | None
    config: dict | None
    version: int = VERSION


def _named_checkpoint_arrays(lm: model.LMParams, gate: gate_mod.IOGParams | None) -> dict:
    out = {f"lm.{k}": v for k, v in lm.named_arrays().items()}
    if gate is not None:
        out.update({f"gate.{k}": v for k, v in gate.named_arrays().items()})
    return out


def save_checkpoint(path, vocab: corpus.Vocabulary, lm: model.LMParams,
                    gate: gate_mod.IOGParams | None = None,
                    config: dict | None = None) -> None:
    arrays = _named_checkpoint_arrays(lm, gate)
    manifest = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = np.dtype(arr.dtype).newbyteorder("<")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str})
        payload += arr.astype(dtype, copy=False).tobytes()
    header = {
        "arrays": manifest,
        "config": config,
        "model": {
            "cell_kind": lm.cell_kind,
            "layers": lm.layer_count,
            "d_e": lm.d_e,
            "d_h": lm.d_h,
            "tie_weights": lm.tie_weights,
            "vocab_size": lm.vocab_size,
        },
        "gate": None
        if gate is None
        else {"variant": gate.variant, "d_g": gate.d_g, "d_h": gate.d_h},
        "vocab": vocab.words,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"),
                              ensure_ascii=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    blob += payload
    blob += hashlib.blake2b(bytes(blob), digest_size=_DIGEST_SIZE).digest()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 8 + _DIGEST_SIZE:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    expected = hashlib.blake2b(body, digest_size=_DIGEST_SIZE).digest()
    if digest != expected:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    try:
        header = json.loads(body[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    offset += header_len

    arrays = {}
    for item in header["arrays"]:
        dtype = np.dtype(item["dtype"])
        shape = tuple(item["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = body[offset:offset + size]
        if len(raw) != size:
            raise CheckpointError(f"{path}: payload truncated at array {item['name']!r}")
        arrays[item["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        offset += size
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    vocab = corpus.Vocabulary(header["vocab"])
    info = header["model"]
    cells = []
    keys = ("weight", "bias") if info["cell_kind"] == "lstm" else ("w_xh", "w_hh", "bias")
    for layer in range(info["layers"]):
        cells.append({k: arrays[f"lm.cell{layer}.{k}"] for k in keys})
    lm = model.LMParams(
        arrays["lm.embedding"],
        cells,
        None if info["tie_weights"] else arrays["lm.out_weight"],
        arrays["lm.out_bias"],
        info["cell_kind"],
        info["tie_weights"],
    )
    gate = None
    if header["gate"] is not None:
        ginfo = header["gate"]
        gate = gate_mod.IOGParams(
            ginfo["variant"],
            arrays["gate.embedding"],
            arrays["gate.bias"],
            weight=arrays.get("gate.weight"),
            hidden_weight=arrays.get("gate.hidden_weight"),
            cell_weight=arrays.get("gate.cell_weight"),
            cell_bias=arrays.get("gate.cell_bias"),
            d_h=ginfo["d_h"],
        )
    return Checkpoint(vocab=vocab, lm=lm, gate=gate, config=header["config"], version=version)
