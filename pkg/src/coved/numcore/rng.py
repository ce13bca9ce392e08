"""Seedable counter-based random streams.

Each stream is an independent Philox generator keyed by ``(stream, seed)``;
nothing is drawn from numpy's global state.
"""

from __future__ import annotations

import zlib

import numpy as np

TRAIN = 0
EVAL = 1
INIT = 2
GENERATE = 3


def make_rng(seed: int, stream: int = TRAIN) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(key=(stream << 64) | seed))


def keyed_rng(seed: int, label: str, stream: int = EVAL) -> np.random.Generator:
    """A generator that depends only on ``seed`` and a stable text label."""
    return make_rng((zlib.crc32(label.encode("utf-8")) << 32) | (seed & 0xFFFFFFFF), stream)


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bitgen = np.random.Philox()
    bitgen.state = state
    return np.random.Generator(bitgen)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": [int(x) for x in obj], "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _arrays(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _arrays(v) for k, v in obj.items()}
    return obj


def rng_state_json(rng: np.random.Generator) -> dict:
    """JSON-safe snapshot of a generator's full state."""
    return _plain(rng.bit_generator.state)


def rng_from_json(state: dict) -> np.random.Generator:
    return restore_rng(_arrays(state))
