"""Small shared helpers: deterministic parallel map, provenance strings."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor

__version__ = "0.1.0"


def ordered_thread_map(fn, items, workers: int = 1):
    """Map preserving input order; thread pool when workers > 1.

    Results are gathered in submission order, so the output is identical for
    any worker count as long as fn is pure.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def config_hash(config: dict) -> str:
    """Short stable digest of a canonical JSON rendering of the config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def provenance_line(config: dict | None = None) -> str:
    digest = config_hash(config) if config is not None else "adhoc"
    return f"config={digest} package=weakkam-{__version__}"
