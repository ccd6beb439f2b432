"""Synthetic desk-scale corpora for tests, demos and benchmarks.

Real deployments ingest caption files plus precomputed CNN feature vectors;
these generators stand in for both.  Features are unit-norm seeded random
vectors, so every corpus is fully reproducible from its seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .training import CorpusRecord, FeatureStore

_ALPHABET = "abcdefghijkl"

#: Caption families sharing a 4-character prefix; the differing remainders
#: make text right of the cursor informative for completion.  Equal lengths
#: keep the fixed-length backward pass fully forced when N equals the
#: caption length.
FAMILY_A = "adogrunsonagrass"
FAMILY_B = "adogplaysfrisbee"
FAMILY_PREFIX = "adog"


def synthetic_features(image_ids: list[str], dim: int, seed: int = 0) -> FeatureStore:
    """One unit-norm random feature vector per image id."""
    rng = np.random.default_rng(seed)
    vectors = {}
    for image_id in image_ids:
        v = rng.normal(size=dim)
        vectors[image_id] = v / np.linalg.norm(v)
    return FeatureStore(dim=dim, vectors=vectors)


def memorization_corpus(
    n: int = 30, seed: int = 0, min_len: int = 6, max_len: int = 10
) -> list[CorpusRecord]:
    """Distinct random captions, one per image, for overfitting runs."""
    rng = np.random.default_rng(seed)
    captions: set[str] = set()
    while len(captions) < n:
        length = int(rng.integers(min_len, max_len + 1))
        captions.add("".join(rng.choice(list(_ALPHABET), size=length)))
    return [
        CorpusRecord(image_id=f"img{i:04d}", caption=cap)
        for i, cap in enumerate(sorted(captions))
    ]


def disambiguation_corpus(
    n_images: int = 120, seed: int = 0
) -> tuple[list[CorpusRecord], dict[str, str]]:
    """Two-family corpus: each image gets one of two captions that share a
    prefix but diverge after it.  Returns the records and the image→caption
    truth map."""
    rng = np.random.default_rng(seed)
    records = []
    truth = {}
    for i in range(n_images):
        caption = FAMILY_A if rng.random() < 0.5 else FAMILY_B
        image_id = f"two{i:04d}"
        records.append(CorpusRecord(image_id=image_id, caption=caption))
        truth[image_id] = caption
    return records, truth


def write_corpus(path: str | Path, records: list[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({"image_id": r.image_id, "caption": r.caption}, ensure_ascii=False))
            f.write("\n")


def write_features(path: str | Path, store: FeatureStore) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for image_id, vec in store.vectors.items():
            f.write(json.dumps({"image_id": image_id, "feature": vec.tolist()}))
            f.write("\n")
