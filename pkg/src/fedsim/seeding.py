"""Deterministic seed derivation.

One master seed drives an entire run. Every consumer (dataset generation,
partitioning, model init, per-round shuffling, cohort sampling) gets its own
independent stream through ``derive_seed``, which mixes the base seed with a
sequence of string/integer tags via SHA-256 and keeps the first 8 bytes.
The mapping is stable across processes, platforms and Python versions, so a
worker process can re-derive exactly the streams the coordinator uses.
"""

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def derive_seed(base: int, *tags: int | str) -> int:
    """Mix ``base`` with ``tags`` into a new 64-bit unsigned seed."""
    h = hashlib.sha256()
    h.update(struct.pack("<Q", base & _MASK64))
    for tag in tags:
        if isinstance(tag, bool):
            raise TypeError("bool tags are ambiguous; use int or str")
        if isinstance(tag, int):
            h.update(b"i")
            h.update(struct.pack("<q", tag))
        elif isinstance(tag, str):
            h.update(b"s")
            h.update(tag.encode("utf-8"))
            h.update(b"\x00")
        else:
            raise TypeError(f"unsupported tag type: {type(tag).__name__}")
    return int.from_bytes(h.digest()[:8], "little")
