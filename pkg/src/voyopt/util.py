"""Small file and RNG helpers."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for a named sub-stream of ``seed``.

    Streams are addressed by integer keys, so stream (seed, 3, 17) is the same
    no matter how many sibling streams exist.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
