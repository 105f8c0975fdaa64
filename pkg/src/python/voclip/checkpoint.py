"""
Checkpoint Container
====================

Parameters and Adam state are stored in a numpy ``.npz`` archive:

- ``meta/version``: int64 scalar, currently 1
- ``param/<name>``: parameter array (little-endian, original dtype)
- ``adam/m/<name>``, ``adam/v/<name>``: moment estimates
- ``adam/step``: int64 scalar
"""

from __future__ import annotations

import io
import logging
import zipfile
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .atomic import atomic_write_bytes
from .errors import ParseError
from .optim import AdamState

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _little_endian(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.asarray(arr).dtype.newbyteorder("<"))


def save_checkpoint(
    path: Union[str, Path],
    params: Mapping[str, np.ndarray],
    state: Optional[AdamState] = None,
) -> None:
    arrays: Dict[str, np.ndarray] = {"meta/version": np.array(CHECKPOINT_VERSION, dtype="<i8")}
    for name in sorted(params):
        arrays[f"param/{name}"] = _little_endian(params[name])
    if state is not None:
        arrays["adam/step"] = np.array(state.step, dtype="<i8")
        for name in sorted(state.m):
            arrays[f"adam/m/{name}"] = _little_endian(state.m[name])
            arrays[f"adam/v/{name}"] = _little_endian(state.v[name])
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(
        "checkpoint saved",
        extra={"fields": {"path": str(path), "n_params": len(params)}},
    )


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Optional[AdamState]]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise ParseError(path, None, f"not a checkpoint archive ({exc})") from None
    with archive:
        keys = set(archive.files)
        if "meta/version" not in keys:
            raise ParseError(path, None, "missing meta/version")
        version = int(archive["meta/version"])
        if version != CHECKPOINT_VERSION:
            raise ParseError(path, None, f"unsupported checkpoint version {version}")
        params = {k[len("param/") :]: archive[k] for k in sorted(keys) if k.startswith("param/")}
        state: Optional[AdamState] = None
        if "adam/step" in keys:
            state = AdamState(
                step=int(archive["adam/step"]),
                m={k[len("adam/m/") :]: archive[k] for k in sorted(keys) if k.startswith("adam/m/")},
                v={k[len("adam/v/") :]: archive[k] for k in sorted(keys) if k.startswith("adam/v/")},
            )
    return params, state
