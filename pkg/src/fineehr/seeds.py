from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: object) -> int:
    """Stable 63-bit seed for ``(master, *labels)``.

    Uses sha256 rather than ``hash()`` so results do not depend on
    PYTHONHASHSEED.
    """
    key = "\x1f".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
