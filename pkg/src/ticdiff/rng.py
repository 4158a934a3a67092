"""Deterministic random streams built on a counter-based generator.

Every stochastic routine in the package takes an explicit `Rng`.  Streams
are keyed rather than sequentially seeded: `derive_key(master, purpose)`
hashes a master seed together with a purpose string, so the stream used
for, say, buffer noise does not depend on how many draws the data
generator made first.  Identical key + identical call sequence gives an
identical stream, which is what the reproducibility checks rely on.
"""

import hashlib

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["Rng", "derive_key"]

_KEY_BITS = 128


def derive_key(master: int, purpose: str) -> int:
    """Return a 128-bit stream key from a master seed and a purpose string.

    Args:
        master: any Python integer; negative values are rejected.
        purpose: short label naming what the stream is for, e.g.
            ``"finetune/noise"``.  Distinct strings give unrelated streams.
    """
    if master < 0:
        raise InvalidArgumentError(f"master seed must be >= 0, got {master}")
    digest = hashlib.sha256(f"{master}\x1f{purpose}".encode()).digest()
    return int.from_bytes(digest[:_KEY_BITS // 8], "little")


class Rng:
    """Seedable counter-based stream (Philox under the hood).

    The full generator state round-trips through `state` / `set_state`,
    which the checkpoint format uses to resume training mid-stream.
    """

    def __init__(self, key: int):
        if not 0 <= key < (1 << _KEY_BITS):
            raise InvalidArgumentError("rng key must fit in 128 bits")
        self._key = key
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def key(self) -> int:
        return self._key

    def derive(self, purpose: str) -> "Rng":
        """Return an independent child stream; order of derivation is irrelevant."""
        return Rng(derive_key(self._key & ((1 << 63) - 1), purpose))

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws as float64."""
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        return self._gen.integers(low, high, size=shape, endpoint=True)

    def state(self) -> dict:
        """JSON-friendly snapshot of the full generator state."""
        raw = self._gen.bit_generator.state
        return {
            "key": [int(v) for v in raw["state"]["key"]],
            "counter": [int(v) for v in raw["state"]["counter"]],
            "buffer": [int(v) for v in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
            "stream_key": str(self._key),
        }

    def set_state(self, snap: dict) -> None:
        self._key = int(snap["stream_key"])
        bg = np.random.Philox(key=0)
        bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(snap["counter"], dtype=np.uint64),
                "key": np.array(snap["key"], dtype=np.uint64),
            },
            "buffer": np.array(snap["buffer"], dtype=np.uint64),
            "buffer_pos": snap["buffer_pos"],
            "has_uint32": snap["has_uint32"],
            "uinteger": snap["uinteger"],
        }
        self._gen = np.random.Generator(bg)

    @classmethod
    def from_state(cls, snap: dict) -> "Rng":
        rng = cls(0)
        rng.set_state(snap)
        return rng
