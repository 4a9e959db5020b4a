"""Embedding stores, campaign records, and synthetic data.

Binary store layout (little endian throughout):

    magic   8 bytes  b"EMBSTOR1"
    dim     u32
    n       u64
    kind    u16 length + UTF-8 bytes
    names   n * (u16 length + UTF-8 bytes)
    data    n * dim float32, row-major

Campaign records travel as JSON lines, one object per record with fields
id, vec_name (a row name in a multimodal store), concept_names (row names
in a concept store) and label.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimMismatchError,
    DuplicateNameError,
    NonFiniteError,
    StoreFormatError,
    TruncatedStoreError,
)

STORE_MAGIC = b"EMBSTOR1"


@dataclass
class EmbeddingStore:
    """An ordered, named collection of equal-length float32 vectors."""

    dim: int
    names: list[str]
    vectors: np.ndarray
    kind_tag: str = ""

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.names), self.dim)
        if self.dim < 1:
            raise DimMismatchError(f"dim must be >= 1, got {self.dim}")
        if self.vectors.shape != (len(self.names), self.dim):
            raise DimMismatchError(
                f"vectors shape {self.vectors.shape} does not match "
                f"{len(self.names)} names x dim {self.dim}"
            )
        seen: set[str] = set()
        for name in self.names:
            if name in seen:
                raise DuplicateNameError(f"duplicate row name {name!r}")
            seen.add(name)
        bad = ~np.isfinite(self.vectors)
        if bad.any():
            row = int(np.nonzero(bad.any(axis=1))[0][0])
            raise NonFiniteError(
                f"non-finite value in row {row} ({self.names[row]!r})"
            )
        self._index = {name: i for i, name in enumerate(self.names)}

    @property
    def n(self) -> int:
        return len(self.names)

    def row(self, name: str) -> np.ndarray:
        try:
            return self.vectors[self._index[name]]
        except KeyError:
            raise KeyError(f"no row named {name!r} in store") from None

    def row_index(self, name: str) -> int:
        if name not in self._index:
            raise KeyError(f"no row named {name!r} in store")
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long to encode ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialise a store; output bytes are a pure function of the contents."""
    parts = [
        STORE_MAGIC,
        struct.pack("<I", store.dim),
        struct.pack("<Q", store.n),
        _encode_str(store.kind_tag),
    ]
    parts.extend(_encode_str(name) for name in store.names)
    parts.append(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, buf: bytes, what: str) -> None:
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedStoreError(
                f"{self.what}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"{self.what}: undecodable name bytes") from exc

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise StoreFormatError(
                f"{self.what}: {len(self.buf) - self.pos} trailing bytes"
            )


def read_store(path: str | Path, expected_dim: int | None = None) -> EmbeddingStore:
    """Read a store file, validating structure and contents.

    Raises BadMagicError, TruncatedStoreError, DuplicateNameError,
    NonFiniteError or DimMismatchError as appropriate; plain OSError
    surfaces for missing or unreadable paths.
    """
    buf = Path(path).read_bytes()
    rd = _Reader(buf, str(path))
    if rd.take(len(STORE_MAGIC)) != STORE_MAGIC:
        raise BadMagicError(f"{path}: not an embedding store (bad magic)")
    dim = rd.u32()
    n = rd.u64()
    if dim < 1:
        raise DimMismatchError(f"{path}: dim must be >= 1, got {dim}")
    if expected_dim is not None and dim != expected_dim:
        raise DimMismatchError(f"{path}: dim {dim}, expected {expected_dim}")
    kind_tag = rd.string()
    names = [rd.string() for _ in range(n)]
    payload = rd.take(n * dim * 4)
    rd.done()
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    return EmbeddingStore(dim=dim, names=names, vectors=vectors, kind_tag=kind_tag)


@dataclass
class CampaignRecord:
    """One classification example: a multimodal vector, its retrieved
    concept row ids, and a binary label (1 = successful)."""

    id: str
    multimodal_vec: np.ndarray
    concept_ids: list[int]
    label: int

    def __post_init__(self) -> None:
        self.multimodal_vec = np.asarray(self.multimodal_vec, dtype=np.float32)
        if self.multimodal_vec.ndim != 1:
            raise ValueError(f"record {self.id}: multimodal_vec must be 1-d")
        if not np.isfinite(self.multimodal_vec).all():
            raise ValueError(f"record {self.id}: non-finite multimodal_vec")
        if self.label not in (0, 1):
            raise ValueError(f"record {self.id}: label must be 0 or 1")


def records_to_store(records: list[CampaignRecord]) -> EmbeddingStore:
    """Stack record vectors into a store, row names = record ids."""
    if not records:
        raise ValueError("no records")
    dim = records[0].multimodal_vec.shape[0]
    return EmbeddingStore(
        dim=dim,
        names=[r.id for r in records],
        vectors=np.stack([r.multimodal_vec for r in records]),
        kind_tag="multimodal",
    )


def write_records_jsonl(
    records: list[CampaignRecord], concept_store: EmbeddingStore, path: str | Path
) -> None:
    """One JSON object per line: {id, vec_name, concept_names, label}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.id,
                "vec_name": r.id,
                "concept_names": [concept_store.names[i] for i in r.concept_ids],
                "label": r.label,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_records_jsonl(
    path: str | Path, mm_store: EmbeddingStore, concept_store: EmbeddingStore
) -> list[CampaignRecord]:
    """Resolve a JSONL records file against its stores.

    Raises ValueError on malformed lines or unresolvable names, with the
    line number in the message.
    """
    records: list[CampaignRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec_id = obj["id"]
                vec_name = obj["vec_name"]
                concept_names = obj["concept_names"]
                label = int(obj["label"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad record on line {lineno}: {exc}") from exc
            if vec_name not in mm_store:
                raise ValueError(
                    f"{path}: line {lineno}: vec_name {vec_name!r} not in store"
                )
            try:
                ids = [concept_store.row_index(c) for c in concept_names]
            except KeyError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            records.append(
                CampaignRecord(
                    id=rec_id,
                    multimodal_vec=mm_store.row(vec_name).copy(),
                    concept_ids=ids,
                    label=label,
                )
            )
    if not records:
        raise ValueError(f"{path}: no records found")
    return records


@dataclass
class SynthConfig:
    """Controls for the synthetic campaign generator.

    class_ratio is the fraction of label-0 (unsuccessful) records.
    concept_signal_strength is the probability that each retrieved concept
    is drawn from the label's own concept pool rather than uniformly, so 0
    makes concepts pure noise and 1 makes them (nearly) determine the label.
    """

    n: int = 1000
    dim: int = 768
    class_ratio: float = 0.6063
    concept_signal_strength: float = 1.0
    seed: int = 0
    concept_dim: int = 256
    n_concepts: int = 50
    concepts_per_record: int = 10
    cluster_separation: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 10:
            raise ValueError(f"n must be >= 10, got {self.n}")
        if not 0.0 < self.class_ratio < 1.0:
            raise ValueError(
                f"class_ratio must be strictly inside (0, 1), got {self.class_ratio}"
            )
        if not 0.0 <= self.concept_signal_strength <= 1.0:
            raise ValueError("concept_signal_strength must be in [0, 1]")
        if self.n_concepts < 4 or self.n_concepts % 2 != 0:
            raise ValueError("n_concepts must be an even number >= 4")
        if self.concepts_per_record < 1:
            raise ValueError("concepts_per_record must be >= 1")


def synth_dataset(cfg: SynthConfig) -> tuple[list[CampaignRecord], EmbeddingStore]:
    """Generate labelled records plus a concept store.

    Multimodal vectors form two Gaussian clusters whose centres sit
    cluster_separation apart along a random direction, one cluster per
    label. Concepts split into two pools with well separated Gaussian
    vectors; each record samples concepts_per_record ids, taking each from
    its label's pool with probability concept_signal_strength and uniformly
    from all concepts otherwise.
    """
    rng = np.random.default_rng(cfg.seed)

    n0 = int(round(cfg.n * cfg.class_ratio))
    n0 = min(max(n0, 1), cfg.n - 1)
    labels = np.array([0] * n0 + [1] * (cfg.n - n0))
    labels = rng.permutation(labels)

    axis = rng.standard_normal(cfg.dim)
    axis /= np.linalg.norm(axis)
    centers = np.stack([-0.5 * cfg.cluster_separation * axis, 0.5 * cfg.cluster_separation * axis])
    mm = centers[labels] + rng.standard_normal((cfg.n, cfg.dim))

    c_axis = rng.standard_normal(cfg.concept_dim)
    c_axis /= np.linalg.norm(c_axis)
    pool_centers = np.stack([-2.0 * c_axis, 2.0 * c_axis])
    half = cfg.n_concepts // 2
    pool_of_concept = np.repeat([0, 1], half)
    concept_vecs = (
        pool_centers[pool_of_concept]
        + 0.25 * rng.standard_normal((cfg.n_concepts, cfg.concept_dim))
    )
    concept_store = EmbeddingStore(
        dim=cfg.concept_dim,
        names=[f"concept_{i:04d}" for i in range(cfg.n_concepts)],
        vectors=concept_vecs,
        kind_tag="concept",
    )

    k = cfg.concepts_per_record
    from_pool = rng.random((cfg.n, k)) < cfg.concept_signal_strength
    pool_pick = rng.integers(0, half, size=(cfg.n, k))
    any_pick = rng.integers(0, cfg.n_concepts, size=(cfg.n, k))
    pool_base = labels[:, None] * half
    concept_ids = np.where(from_pool, pool_base + pool_pick, any_pick)

    width = len(str(cfg.n - 1))
    records = [
        CampaignRecord(
            id=f"rec_{i:0{width}d}",
            multimodal_vec=mm[i],
            concept_ids=concept_ids[i].tolist(),
            label=int(labels[i]),
        )
        for i in range(cfg.n)
    ]
    return records, concept_store
