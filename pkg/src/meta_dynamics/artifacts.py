"""Content-identity records for result files and checkpoint directories."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

RECORD_SUFFIX = ".artifact.json"
CHUNK = 1024 * 1024


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_location(path: str | Path) -> str:
    """Hash of a file, or of a directory's sorted (relative path, hash) manifest."""
    location = Path(path)
    if location.is_file():
        return sha256_file(location)
    if not location.is_dir():
        raise FileNotFoundError(location)
    manifest = [
        {"path": member.relative_to(location).as_posix(), "sha256": sha256_file(member)}
        for member in sorted(item for item in location.rglob("*") if item.is_file())
        if not member.name.endswith(RECORD_SUFFIX)
    ]
    encoded = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


@dataclass(frozen=True)
class ArtifactRecord:
    """``<name>@sha256:<hash>`` identity of a location and the configs that produced it."""

    id: str
    sha256: str
    location: str
    source: list[str]

    def __post_init__(self) -> None:
        if len(self.sha256) != 64 or any(c not in "0123456789abcdef" for c in self.sha256):
            raise ValueError("artifact sha256 must be 64 lowercase hex characters")
        if not self.id.endswith(f"@sha256:{self.sha256}"):
            raise ValueError("artifact id does not match its sha256")
        if not self.location:
            raise ValueError("artifact location must be non-empty")

    @classmethod
    def for_location(cls, name: str, location: str | Path, source: Iterable[str]) -> "ArtifactRecord":
        path = Path(location).expanduser().resolve()
        digest = sha256_location(path)
        return cls(f"{name}@sha256:{digest}", digest, str(path), list(source))

    def write(self, record_path: str | Path) -> Path:
        destination = Path(record_path)
        destination.parent.mkdir(parents=True, exist_ok=True)
        destination.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return destination


def record_artifact(location: str | Path, source: Iterable[str]) -> ArtifactRecord:
    """Write ``<location>.artifact.json`` beside a result file or directory."""
    path = Path(location)
    record = ArtifactRecord.for_location(path.name, path, source)
    record.write(path.with_name(path.name + RECORD_SUFFIX))
    return record
