"""
File: app/utils/checkpoint.py
Description: Single-file checkpoint container.

Layout: 8-byte magic, 8-byte little-endian header length, a canonical JSON
header (entries with name, shape and offset, the payload SHA-256, the config
hash and free-form JSON state), then the concatenated float64 payload. The
same arrays and state always serialise to the same bytes.
"""

# Standard Library Imports
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.core.errors import CheckpointError

MAGIC = b"PIGCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    state: Dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""


def _canonical(header: Dict[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(checkpoint.arrays):
        array = np.ascontiguousarray(checkpoint.arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(array.tobytes())
        offset += array.size
    payload = b"".join(chunks)
    header = _canonical(
        {
            "version": FORMAT_VERSION,
            "config_hash": checkpoint.config_hash,
            "entries": entries,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
            "state": checkpoint.state,
        }
    )
    return MAGIC + len(header).to_bytes(8, "little") + header + payload


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)", source)
    size = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}", source) from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {header.get('version')}", source)

    payload = blob[16 + size :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(
            f"payload hash mismatch: stored {header['payload_sha256'][:12]}..., "
            f"computed {digest[:12]}...",
            source,
        )
    values = np.frombuffer(payload, dtype="<f8")
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + count > values.size:
            raise CheckpointError(f"entry {entry['name']} runs past the payload", source)
        arrays[entry["name"]] = (
            values[start : start + count].reshape(entry["shape"]).astype(np.float64)
        )
    return Checkpoint(arrays=arrays, state=header["state"], config_hash=header["config_hash"])


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Writes through a temporary file so a crash never leaves half a checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    os.replace(tmp, path)
    logger.debug(f"Checkpoint written: {path} ({len(checkpoint.arrays)} arrays)")
    return path


def load_checkpoint(
    path: Union[str, Path], expected_hash: Optional[str] = None
) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes(), str(path))
    if expected_hash is not None and checkpoint.config_hash != expected_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {checkpoint.config_hash[:12]}..., "
            f"run {expected_hash[:12]}...",
            str(path),
        )
    return checkpoint
