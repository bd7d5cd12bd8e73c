"""Ingest MNIST-family files, verify integrity, and persist pipeline artifacts.

Every artifact is content-addressed: the payload's SHA-256 is recorded in a
JSON sidecar and re-checked on load, and downstream records embed the digests
of what they were computed from, so a stale feature matrix can never silently
pair with a newer ranking.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import struct
import time
import urllib.request
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    FetchError,
    IntegrityError,
    LockError,
    NotFoundError,
    VersionError,
)
from .idx import (
    ImageSet,
    IdxTensor,
    image_set_from_tensors,
    load_image_set,
    parse_idx,
    serialize_idx,
)

SCHEMA_VERSION = 1

CANONICAL_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

STAGE_DIRS = {
    "raw": "raw",
    "features": "features",
    "ranking": "rankings",
    "verdict-log": "sessions",
    "report": "reports",
    "fair": "fair",
}

FEATURES_MAGIC = b"FAIRFEAT"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class DatasetBundle:
    name: str
    train: ImageSet
    test: ImageSet
    source_checksums: dict[str, str] = field(default_factory=dict)


def _fetch_url(url: str, retries: int = 2, backoff: float = 0.5) -> bytes:
    last = None
    for attempt in range(retries + 1):
        try:
            with urllib.request.urlopen(url, timeout=30) as r:
                return r.read()
        except Exception as e:  # noqa: BLE001 - any transport failure retries
            last = e
            if attempt < retries:
                time.sleep(backoff * (attempt + 1))
    raise FetchError(f"failed to fetch {url} after {retries + 1} attempts: {last}", retries=retries)


def _resolve_source(source: str | Path, key: str) -> tuple[str, bytes]:
    """Return (display name, raw bytes) for one of the four canonical files."""
    s = str(source)
    if s.startswith(("http://", "https://")):
        return s, _fetch_url(s)
    base = Path(source)
    if base.is_dir():
        stem = CANONICAL_NAMES[key]
        for name in (stem, stem + ".gz"):
            p = base / name
            if p.exists():
                return str(p), p.read_bytes()
        raise NotFoundError(f"no {stem}[.gz] in {base}")
    if base.exists():
        return str(base), base.read_bytes()
    raise NotFoundError(f"source {source} not found")


def ingest(
    source,
    name: str = "dataset",
    expected_checksums: dict[str, str] | None = None,
) -> DatasetBundle:
    """Load the four canonical files from a directory, URL list, or path list.

    Checksums, when supplied, are verified against the raw file bytes before
    any parsing happens; the offending file is named on mismatch.
    """
    keys = ["train_images", "train_labels", "test_images", "test_labels"]
    if isinstance(source, (str, Path)):
        sources = {k: source for k in keys}
    else:
        if len(source) != 4:
            raise NotFoundError(f"expected 4 sources (train/test x images/labels), got {len(source)}")
        sources = dict(zip(keys, source))

    raw: dict[str, bytes] = {}
    checksums: dict[str, str] = {}
    for key in keys:
        display, data = _resolve_source(sources[key], key)
        digest = sha256_hex(data)
        if expected_checksums:
            want = expected_checksums.get(Path(display).name) or expected_checksums.get(key)
            if want is not None and want != digest:
                raise IntegrityError(f"checksum mismatch for {display}: got {digest}, want {want}")
        raw[key] = data
        checksums[Path(display).name] = digest

    train = image_set_from_tensors(parse_idx(raw["train_images"]), parse_idx(raw["train_labels"]))
    test = image_set_from_tensors(parse_idx(raw["test_images"]), parse_idx(raw["test_labels"]))
    return DatasetBundle(name=name, train=train, test=test, source_checksums=checksums)


# --- workspace -------------------------------------------------------------

def default_workspace_root() -> Path:
    return Path(os.environ.get("FAIRSET_WORKSPACE", "workspace"))


@dataclass
class ArtifactRecord:
    kind: str
    name: str
    schema_version: int
    path: Path
    digest: str
    meta: dict = field(default_factory=dict)


class Workspace:
    """Per-bundle directory tree holding raw data and every stage's artifacts."""

    def __init__(self, root: str | Path, bundle_name: str):
        self.root = Path(root)
        self.bundle_name = bundle_name
        self.base = self.root / bundle_name
        for d in STAGE_DIRS.values():
            (self.base / d).mkdir(parents=True, exist_ok=True)

    def stage_dir(self, kind: str) -> Path:
        return self.base / STAGE_DIRS[kind]

    @contextmanager
    def _locked(self, lock_path: Path):
        fd = os.open(lock_path, os.O_CREAT | os.O_RDWR)
        try:
            try:
                fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError as e:
                raise LockError(f"{lock_path} is held by another writer") from e
            yield
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def store_artifact(self, kind: str, name: str, payload: bytes, meta: dict | None = None) -> ArtifactRecord:
        d = self.stage_dir(kind)
        payload_path = d / f"{name}.bin"
        sidecar = d / f"{name}.json"
        record = ArtifactRecord(
            kind=kind,
            name=name,
            schema_version=SCHEMA_VERSION,
            path=payload_path,
            digest=sha256_hex(payload),
            meta=meta or {},
        )
        with self._locked(d / f"{name}.lock"):
            tmp = payload_path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, payload_path)
            side = {
                "kind": kind,
                "name": name,
                "schema_version": record.schema_version,
                "digest": record.digest,
                "meta": record.meta,
            }
            tmp = sidecar.with_suffix(".tmpj")
            tmp.write_text(json.dumps(side, indent=2, sort_keys=True))
            os.replace(tmp, sidecar)
        return record

    def load_artifact(self, kind: str, name: str) -> tuple[bytes, ArtifactRecord]:
        d = self.stage_dir(kind)
        payload_path = d / f"{name}.bin"
        sidecar = d / f"{name}.json"
        if not payload_path.exists() or not sidecar.exists():
            raise NotFoundError(f"artifact {kind}/{name} not found in {d}")
        side = json.loads(sidecar.read_text())
        if side.get("schema_version") != SCHEMA_VERSION:
            raise VersionError(f"artifact {kind}/{name} has schema_version {side.get('schema_version')}")
        payload = payload_path.read_bytes()
        digest = sha256_hex(payload)
        if digest != side["digest"]:
            raise CorruptionError(
                f"artifact {kind}/{name} payload digest {digest} != recorded {side['digest']}"
            )
        return payload, ArtifactRecord(
            kind=kind,
            name=name,
            schema_version=side["schema_version"],
            path=payload_path,
            digest=digest,
            meta=side.get("meta", {}),
        )

    def has_artifact(self, kind: str, name: str) -> bool:
        d = self.stage_dir(kind)
        return (d / f"{name}.bin").exists() and (d / f"{name}.json").exists()

    def save_raw(self, bundle: DatasetBundle) -> dict:
        """Normalize the bundle's four files into raw/ as uncompressed IDX."""
        d = self.stage_dir("raw")
        files = {}
        pairs = [
            ("train_images", IdxTensor.from_array(bundle.train.images)),
            ("train_labels", IdxTensor.from_array(bundle.train.labels)),
            ("test_images", IdxTensor.from_array(bundle.test.images)),
            ("test_labels", IdxTensor.from_array(bundle.test.labels)),
        ]
        for key, tensor in pairs:
            payload = serialize_idx(tensor)
            path = d / CANONICAL_NAMES[key]
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, path)
            files[key] = {"path": str(path), "sha256": sha256_hex(payload), "n": tensor.dims[0]}
        manifest = {
            "name": bundle.name,
            "schema_version": SCHEMA_VERSION,
            "files": files,
            "source_checksums": bundle.source_checksums,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return manifest

    def load_raw(self) -> DatasetBundle:
        d = self.stage_dir("raw")
        manifest_path = d / "manifest.json"
        if not manifest_path.exists():
            raise NotFoundError(f"no ingested data under {d}; run ingest first")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise VersionError(f"raw manifest schema_version {manifest.get('schema_version')}")
        for key, info in manifest["files"].items():
            payload = Path(info["path"]).read_bytes()
            if sha256_hex(payload) != info["sha256"]:
                raise CorruptionError(f"raw file {info['path']} no longer matches its digest")
        train = load_image_set(
            manifest["files"]["train_images"]["path"], manifest["files"]["train_labels"]["path"]
        )
        test = load_image_set(
            manifest["files"]["test_images"]["path"], manifest["files"]["test_labels"]["path"]
        )
        return DatasetBundle(
            name=manifest["name"], train=train, test=test,
            source_checksums=manifest.get("source_checksums", {}),
        )

    def raw_digests(self) -> dict[str, str]:
        manifest = json.loads((self.stage_dir("raw") / "manifest.json").read_text())
        return {k: v["sha256"] for k, v in manifest["files"].items()}


# --- feature matrix binary format -------------------------------------------

def encode_features(values: np.ndarray) -> bytes:
    """magic, version, N, D as LE u64, then N*D LE float32."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    n, d = arr.shape
    header = FEATURES_MAGIC + struct.pack("<QQQ", SCHEMA_VERSION, n, d)
    return header + arr.tobytes()


def decode_features(buf: bytes) -> np.ndarray:
    if buf[:8] != FEATURES_MAGIC:
        raise CorruptionError("feature payload lacks magic")
    version, n, d = struct.unpack("<QQQ", buf[8:32])
    if version != SCHEMA_VERSION:
        raise VersionError(f"feature payload schema_version {version}")
    expect = 32 + n * d * 4
    if len(buf) != expect:
        raise CorruptionError(f"feature payload is {len(buf)} bytes, expected {expect}")
    return np.frombuffer(buf[32:], dtype="<f4").reshape(n, d).copy()
