"""Canonical JSON encoding shared by the wire protocol and CLI export.

Both sides must produce byte-identical documents for the same value, so
there is exactly one encoder: sorted keys, no whitespace, UTF-8.
"""

import json


def canonical_json(value) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")
