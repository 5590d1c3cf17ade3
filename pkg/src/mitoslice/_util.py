import hashlib
import json
import zlib

import numpy as np


def derive_seed(root: int, purpose: str, *keys: int) -> int:
    """Expand one root seed into independent per-purpose seeds."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(purpose.encode()), *map(int, keys)])
    return int(ss.generate_state(1)[0])


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
