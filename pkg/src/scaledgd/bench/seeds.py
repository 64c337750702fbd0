"""Deterministic per-task seed derivation.

A derived seed is a BLAKE2b hash chain over the master seed and an ordered
list of ``(name, index)`` labels::

    h_0 = le64(master)
    h_k = blake2b(h_{k-1} || utf8(name_k) || 0x00 || le64(index_k), digest_size=8)
    seed = le64^-1(h_K)

The chain is order sensitive: permuting the labels changes the seed.  This
construction is part of the output contract and must stay stable.
"""

import hashlib

from ..errors import DomainError

__all__ = ["derive_seed", "seed_derivation"]

_MASK64 = (1 << 64) - 1


def derive_seed(master, labels):
    if not labels:
        raise DomainError("seed derivation needs at least one label")
    h = (int(master) & _MASK64).to_bytes(8, "little")
    for name, index in labels:
        index = int(index)
        if index < 0:
            raise DomainError(f"label index must be non-negative, got {index} for {name!r}")
        payload = h + str(name).encode("utf-8") + b"\x00" + (index & _MASK64).to_bytes(8, "little")
        h = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(h, "little")


seed_derivation = derive_seed
