"""Shared plumbing: deterministic RNG substreams and output-file provenance."""

from __future__ import annotations

import hashlib
import json

import numpy as np

TOOL_NAME = "sourceset"
VERSION = "0.1.0"


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a namespaced substream of a master seed.

    Built on numpy's SeedSequence spawn keys: the stream for a given
    (master_seed, path) pair is fixed, documented, and independent of how
    many sibling substreams exist. This is what makes datasets and
    experiments reproducible under both serial and pooled execution.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=path))


def as_generator(seed) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(int(seed))


def config_hash(obj) -> str:
    """Short stable digest of a JSON-serializable configuration object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def file_header(kind: str, seed, config: dict) -> dict:
    """Provenance record written as the first line of every output file.

    Contains no timestamps, so identical runs produce identical bytes.
    """
    return {
        "record": "header",
        "tool": TOOL_NAME,
        "version": VERSION,
        "kind": kind,
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
    }


def write_jsonl_header(fh, kind: str, seed, config: dict) -> None:
    fh.write(json.dumps(file_header(kind, seed, config), sort_keys=True) + "\n")


def read_jsonl(path):
    """Yield parsed records from a JSON-lines file, header included."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
