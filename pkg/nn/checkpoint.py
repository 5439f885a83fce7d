"""
Checkpoint persistence

A checkpoint is a directory holding:
- manifest.json: format version, metadata, and the ordered block list (name, shape)
- params.bin: little-endian float64 values of every block, concatenated in manifest order
"""

import json
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from errors import ConfigurationError
from nn.core import ParameterBlock

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "f64le-v1"
MANIFEST_NAME = "manifest.json"
VALUES_NAME = "params.bin"


def save_checkpoint(
    directory: Path,
    blocks: Iterable[ParameterBlock],
    metadata: Optional[dict] = None,
) -> Path:
    """
    Write blocks and metadata to `directory`.

    Returns:
        Path to the written manifest
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blocks = list(blocks)

    names = [block.name for block in blocks]
    if len(set(names)) != len(names):
        raise ConfigurationError("Checkpoint block names must be unique")

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "metadata": metadata or {},
        "blocks": [{"name": block.name, "shape": list(block.shape)} for block in blocks],
    }
    flat = np.concatenate([block.values.reshape(-1) for block in blocks]) if blocks else np.zeros(0)

    (directory / VALUES_NAME).write_bytes(flat.astype("<f8").tobytes())
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    logger.info(f"Checkpoint saved to {directory} ({len(blocks)} blocks, {flat.size} values)")
    return manifest_path


def read_manifest(directory: Path) -> dict:
    return json.loads((Path(directory) / MANIFEST_NAME).read_text(encoding="utf-8"))


def load_checkpoint(directory: Path, blocks: Iterable[ParameterBlock]) -> dict:
    """
    Load values into existing blocks, matched by name and shape.

    Returns:
        The checkpoint's metadata dict
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"Unsupported checkpoint format: {manifest.get('format')}")

    flat = np.frombuffer((directory / VALUES_NAME).read_bytes(), dtype="<f8")
    by_name = {block.name: block for block in blocks}

    expected = sum(int(np.prod(entry["shape"])) for entry in manifest["blocks"])
    if flat.size != expected:
        raise ConfigurationError(f"Checkpoint holds {flat.size} values, manifest describes {expected}")
    if set(by_name) != {entry["name"] for entry in manifest["blocks"]}:
        raise ConfigurationError("Checkpoint blocks do not match the network being restored")

    offset = 0
    for entry in manifest["blocks"]:
        block = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != block.shape:
            raise ConfigurationError(f"Block '{block.name}' has shape {block.shape}, checkpoint has {shape}")
        count = block.size
        block.values[...] = flat[offset:offset + count].reshape(shape)
        offset += count

    logger.info(f"Checkpoint loaded from {directory}")
    return manifest["metadata"]
