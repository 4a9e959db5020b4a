"""Contextual congruence between paired modality embeddings.

Measures how close text and image embeddings sit, before and after each
side is pulled toward the pair's mean knowledge vector, to quantify how
much shared knowledge context tightens the pairing.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HISTOGRAM_BINS = 20


@dataclass
class ModalityPairSet:
    """Row i of text_vecs pairs with row i of image_vecs.

    knowledge_vecs, when present, holds one [k_i, d] matrix per pair with
    the knowledge vectors retrieved for that pair.
    """

    text_vecs: np.ndarray
    image_vecs: np.ndarray
    knowledge_vecs: list[np.ndarray] | None = None
    ids: list[str] | None = None

    def __post_init__(self) -> None:
        self.text_vecs = np.asarray(self.text_vecs, dtype=np.float64)
        self.image_vecs = np.asarray(self.image_vecs, dtype=np.float64)
        if self.text_vecs.ndim != 2 or self.image_vecs.ndim != 2:
            raise ValueError("modality vectors must be 2-d [n, d]")
        if self.text_vecs.shape != self.image_vecs.shape:
            raise ValueError(
                f"text {self.text_vecs.shape} and image {self.image_vecs.shape} "
                "shapes differ"
            )
        n, d = self.text_vecs.shape
        if n < 1:
            raise ValueError("need at least one pair")
        if self.knowledge_vecs is not None:
            if len(self.knowledge_vecs) != n:
                raise ValueError("one knowledge matrix per pair required")
            self.knowledge_vecs = [
                np.asarray(m, dtype=np.float64).reshape(-1, d)
                for m in self.knowledge_vecs
            ]
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]
        elif len(self.ids) != n:
            raise ValueError("one id per pair required")

    @property
    def n(self) -> int:
        return self.text_vecs.shape[0]


@dataclass
class CongruenceReport:
    centroid_distance: float
    mean_pairwise_cosine: float
    histogram_edges: list[float]
    histogram_counts: list[int]
    centroid_distance_with: float | None = None
    mean_pairwise_cosine_with: float | None = None
    histogram_counts_with: list[int] | None = None
    relative_similarity_change: float | None = None

    def to_dict(self) -> dict:
        return {
            "centroid_distance": self.centroid_distance,
            "mean_pairwise_cosine": self.mean_pairwise_cosine,
            "cosine_histogram": {
                "edges": self.histogram_edges,
                "counts": self.histogram_counts,
            },
            "with_knowledge": None
            if self.centroid_distance_with is None
            else {
                "centroid_distance": self.centroid_distance_with,
                "mean_pairwise_cosine": self.mean_pairwise_cosine_with,
                "cosine_histogram": {
                    "edges": self.histogram_edges,
                    "counts": self.histogram_counts_with,
                },
            },
            "relative_similarity_change": self.relative_similarity_change,
        }


def pairwise_cosines(pairs: ModalityPairSet) -> np.ndarray:
    """Cosine similarity of each (text, image) pair, clipped to [-1, 1]."""
    tn = np.linalg.norm(pairs.text_vecs, axis=1)
    vn = np.linalg.norm(pairs.image_vecs, axis=1)
    if np.any(tn == 0.0) or np.any(vn == 0.0):
        raise ValueError("zero-norm modality vector")
    dots = np.sum(pairs.text_vecs * pairs.image_vecs, axis=1)
    return np.clip(dots / (tn * vn), -1.0, 1.0)


def augment_with_knowledge(pairs: ModalityPairSet) -> ModalityPairSet:
    """Pull both modalities toward each pair's mean knowledge vector.

    Every modality vector is replaced by the L2-normalised mean of itself
    and the pair's knowledge mean; both sides of a pair receive the same
    knowledge mean. Raises ValueError when knowledge is missing, a
    knowledge mean has zero norm, or an augmented vector degenerates to
    zero.
    """
    if pairs.knowledge_vecs is None:
        raise ValueError("pair set has no knowledge vectors")
    km = np.empty_like(pairs.text_vecs)
    for i, mat in enumerate(pairs.knowledge_vecs):
        if mat.shape[0] == 0:
            raise ValueError(f"pair {i}: empty knowledge matrix")
        km[i] = mat.mean(axis=0)
    km_norms = np.linalg.norm(km, axis=1)
    if np.any(km_norms == 0.0):
        bad = int(np.nonzero(km_norms == 0.0)[0][0])
        raise ValueError(f"pair {bad}: knowledge mean has zero norm")

    def _augment(vecs: np.ndarray) -> np.ndarray:
        mean = 0.5 * (vecs + km)
        norms = np.linalg.norm(mean, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.nonzero(norms == 0.0)[0][0])
            raise ValueError(f"pair {bad}: augmented vector has zero norm")
        return mean / norms[:, None]

    return ModalityPairSet(
        text_vecs=_augment(pairs.text_vecs),
        image_vecs=_augment(pairs.image_vecs),
        knowledge_vecs=pairs.knowledge_vecs,
        ids=list(pairs.ids),
    )


def _centroid_distance(pairs: ModalityPairSet) -> float:
    return float(
        np.linalg.norm(pairs.text_vecs.mean(axis=0) - pairs.image_vecs.mean(axis=0))
    )


def _histogram(cosines: np.ndarray) -> tuple[list[float], list[int]]:
    counts, edges = np.histogram(cosines, bins=HISTOGRAM_BINS, range=(-1.0, 1.0))
    return edges.tolist(), counts.tolist()


def report(pairs: ModalityPairSet) -> CongruenceReport:
    """Congruence summary, with and (when knowledge is present) without
    knowledge augmentation.

    relative_similarity_change = (cos_with - cos_without) / |cos_without|
    on the mean pairwise cosine.
    """
    if pairs.n < 2:
        raise ValueError(f"need at least 2 pairs, got {pairs.n}")
    cosines = pairwise_cosines(pairs)
    edges, counts = _histogram(cosines)
    rep = CongruenceReport(
        centroid_distance=_centroid_distance(pairs),
        mean_pairwise_cosine=float(cosines.mean()),
        histogram_edges=edges,
        histogram_counts=counts,
    )
    if pairs.knowledge_vecs is not None:
        augmented = augment_with_knowledge(pairs)
        cos_with = pairwise_cosines(augmented)
        _, counts_with = _histogram(cos_with)
        rep.centroid_distance_with = _centroid_distance(augmented)
        rep.mean_pairwise_cosine_with = float(cos_with.mean())
        rep.histogram_counts_with = counts_with
        without = rep.mean_pairwise_cosine
        if without == 0.0:
            raise ValueError(
                "relative change undefined: mean cosine without knowledge is 0"
            )
        rep.relative_similarity_change = (
            rep.mean_pairwise_cosine_with - without
        ) / abs(without)
    return rep


def write_pair_csv(pairs: ModalityPairSet, path: str | Path) -> None:
    """Per-pair cosine CSV: pair_id, cos_without, cos_with."""
    cos_without = pairwise_cosines(pairs)
    if pairs.knowledge_vecs is not None:
        cos_with = pairwise_cosines(augment_with_knowledge(pairs))
    else:
        cos_with = None
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "cos_without", "cos_with"])
        for i, pid in enumerate(pairs.ids):
            writer.writerow(
                [
                    pid,
                    repr(float(cos_without[i])),
                    "" if cos_with is None else repr(float(cos_with[i])),
                ]
            )
