"""Checkpoint files shared by the language model and the classifiers.

A checkpoint is a numpy ``.npz`` archive. The entry ``__header__`` holds
UTF-8 JSON bytes::

    {"format": "bolt-checkpoint", "version": 1, "kind": "lm" | "classifier",
     "config": {...}, "vocab": [token, ...], "meta": {...}}

Every other entry is one float64 parameter array stored under its parameter
name. Loading returns bit-identical arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "bolt-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, kind: str, config: dict, vocab: list[str], params: dict[str, np.ndarray],
         meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT, "version": VERSION, "kind": kind, "config": config,
              "vocab": list(vocab), "meta": meta or {}}
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    arrays = {name: np.asarray(val, dtype=np.float64) for name, val in params.items()}
    if "__header__" in arrays:
        raise CheckpointError("parameter name __header__ is reserved")
    with open(path, "wb") as fh:
        np.savez(fh, __header__=blob, **arrays)
    return path


def load(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if "__header__" not in archive.files:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(archive["__header__"].tobytes().decode("utf-8"))
        params = {name: archive[name] for name in archive.files if name != "__header__"}
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {header.get('kind')}")
    return header, params
