"""Checkpoint files: JSON map name -> (shape, data) plus optimizer state."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from scenegen.nn.layers import ParamStore
from scenegen.nn.optim import AdamState

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, store: ParamStore, state: AdamState | None = None,
                    config: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "params": {k: {"shape": list(p.shape), "data": p.data.ravel().tolist()} for k, p in store.items()},
        "adam": state.to_json() if state is not None else None,
        "config": config or {},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")


def load_checkpoint(path: str | Path, store: ParamStore) -> tuple[AdamState | None, dict]:
    """Fill ``store`` (already shaped by the model config) from ``path``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = doc["params"]
    if set(params) != set(store):
        raise CheckpointError("checkpoint parameter names do not match the model")
    for name, rec in params.items():
        shape = tuple(rec["shape"])
        if shape != store[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {shape} != model shape {store[name].shape}")
        store[name].data = np.asarray(rec["data"], dtype=np.float64).reshape(shape)
    state = AdamState.from_json(doc["adam"], store) if doc.get("adam") else None
    return state, doc.get("config", {})
