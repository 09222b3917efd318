import hashlib
import json

import numpy as np


def derive_seed(*parts):
    """Stable 32-bit seed from any JSON-serializable parts."""
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def rng_streams(seed, n):
    """n independent generators spawned from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def median(values):
    values = [v for v in values if v is not None and np.isfinite(v)]
    if not values:
        return float("nan")
    return float(np.median(values))
