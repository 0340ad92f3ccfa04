"""64-bit content digests for templates, programs, traces, and geometry.

Digests are the first 8 bytes of SHA-256, rendered as 16 hex digits.
They identify artifacts across stage boundaries (a sampled instance
carries the digest of the template it was drawn from, a trace carries
the digest of the geometry it was simulated on).
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def digest64_bytes(data: bytes) -> str:
    return hashlib.sha256(data).digest()[:8].hex()


def digest64_text(text: str) -> str:
    return digest64_bytes(text.encode("utf-8"))


def canonical_json(obj: Any) -> str:
    """Minified JSON with sorted keys; the only JSON form we ever hash."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest64_json(obj: Any) -> str:
    return digest64_text(canonical_json(obj))
