"""Stable derivation of independent RNG streams from one scenario seed."""

import hashlib
import random


def derive_rng(seed: int, *labels: object) -> random.Random:
    """Return a Random seeded from (seed, labels); stable across runs and platforms."""
    key = "%d/%s" % (seed, "/".join(str(x) for x in labels))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
