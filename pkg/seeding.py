"""Seed splitting and generator construction.

Every random draw in the simulator goes through a generator built here so that a
run can be replayed bit-for-bit from its master seed. Sub-seeds are derived by
hashing the master seed together with the labels of the draw (elevation, RIS
size, band, ...), which keeps independent draws independent and means adding a
new sweep point never shifts the numbers of existing ones.
"""

import hashlib

import numpy as np

RNG_ALGORITHM = "PCG64"


def derive_seed(master: int, *parts) -> int:
    """Derive a 63-bit sub-seed from a master seed and a tuple of labels"""
    key = ":".join([str(int(master))] + [_label(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _label(part) -> str:
    if hasattr(part, "value"):
        return str(part.value)
    # 80 and 80.0 must name the same sweep point
    if isinstance(part, (int, float, np.integer, np.floating)) and not isinstance(part, bool):
        number = float(part)
        if number.is_integer():
            return str(int(number))
        return repr(round(number, 9))
    return str(part)
