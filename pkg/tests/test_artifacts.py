from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path

import pytest

from meta_dynamics.artifacts import RECORD_SUFFIX, ArtifactRecord, record_artifact, sha256_location


def test_records_use_content_identity(tmp_path: Path) -> None:
    original = tmp_path / "original.csv"
    moved = tmp_path / "moved.csv"
    original.write_bytes(b"stable")
    shutil.copy2(original, moved)

    first = ArtifactRecord.for_location("results.csv", original, ["config:abc"])
    second = ArtifactRecord.for_location("results.csv", moved, ["config:abc"])

    assert first.sha256 == hashlib.sha256(b"stable").hexdigest()
    assert first.id == second.id
    assert first.location != second.location


def test_record_is_written_beside_the_result(tmp_path: Path) -> None:
    result = tmp_path / "summary.json"
    result.write_text("{}\n", encoding="utf-8")

    record = record_artifact(result, ["experiment:rl", "seed:0"])

    written = json.loads((tmp_path / f"summary.json{RECORD_SUFFIX}").read_text(encoding="utf-8"))
    assert set(written) == {"id", "sha256", "location", "source"}
    assert written["id"] == record.id
    assert written["source"] == ["experiment:rl", "seed:0"]


def test_directory_hash_ignores_its_own_records(tmp_path: Path) -> None:
    (tmp_path / "a.txt").write_text("a", encoding="utf-8")
    before = sha256_location(tmp_path)
    (tmp_path / f"a.txt{RECORD_SUFFIX}").write_text("{}", encoding="utf-8")

    assert sha256_location(tmp_path) == before
    (tmp_path / "b.txt").write_text("b", encoding="utf-8")
    assert sha256_location(tmp_path) != before


def test_inconsistent_records_are_rejected() -> None:
    digest = "0" * 64
    with pytest.raises(ValueError):
        ArtifactRecord("x@sha256:" + "1" * 64, digest, "somewhere", [])
    with pytest.raises(ValueError):
        ArtifactRecord("x@sha256:XYZ", "XYZ", "somewhere", [])
