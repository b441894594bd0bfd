"""Run manifests: a JSON record of what a command produced.

The manifest lists every file in the output directory with its SHA-256, so
two runs can be compared (or a directory audited) without re-running anything.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    command: str
    config: dict
    seeds: list[int]
    files: dict[str, str]  # relative posix path -> sha256 hex digest


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_tree(out_dir: str | Path) -> dict[str, str]:
    """SHA-256 of every file under `out_dir`, keyed by relative posix path.

    The manifest file itself is skipped so writing it does not invalidate it.
    """
    out_dir = Path(out_dir)
    hashes = {}
    for path in sorted(p for p in out_dir.rglob("*") if p.is_file()):
        rel = path.relative_to(out_dir).as_posix()
        if rel == MANIFEST_NAME:
            continue
        hashes[rel] = sha256_file(path)
    return hashes


def write_manifest(
    out_dir: str | Path,
    command: str,
    config: dict,
    seeds: list[int],
    tool_version: str,
) -> RunManifest:
    out_dir = Path(out_dir)
    manifest = RunManifest(
        tool_version=tool_version,
        command=command,
        config=config,
        seeds=list(seeds),
        files=hash_tree(out_dir),
    )
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as handle:
        json.dump(dataclasses.asdict(manifest), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return manifest


def read_manifest(out_dir: str | Path) -> RunManifest:
    with open(Path(out_dir) / MANIFEST_NAME, encoding="utf-8") as handle:
        return RunManifest(**json.load(handle))


def verify_manifest(out_dir: str | Path) -> list[str]:
    """Paths whose current hash differs from (or is missing against) the manifest."""
    out_dir = Path(out_dir)
    recorded = read_manifest(out_dir).files
    current = hash_tree(out_dir)
    bad = [rel for rel, digest in recorded.items() if current.get(rel) != digest]
    bad.extend(rel for rel in current if rel not in recorded)
    return sorted(bad)
