"""Procedural tiny image datasets with reproducible class-balanced splits.

``synthetic-blobs`` draws each class around a fixed seeded pattern, so any
small CNN can separate classes within a few epochs on a CPU. Sample
identities are (class, index) pairs into a fixed per-class pool; split
manifests list the chosen indices so a selection is replayable from
(dataset id, fraction, resolution, seed) alone. Validation images come from
a reserved index range disjoint from every training pool.
"""

from __future__ import annotations

import hashlib
import math
import random
from fractions import Fraction

import torch

MANIFEST_SCHEMA = "widthforge.bridge.manifest@1"

DATASETS = {
    "synthetic-blobs": {"num_classes": 10, "pool_per_class": 256},
}

VAL_PER_CLASS = 16
_NOISE = 0.6


class DataError(ValueError):
    pass


def _seed_from(*parts) -> int:
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def class_pattern(dataset_id: str, class_idx: int, resolution: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(_seed_from(dataset_id, class_idx, "pattern"))
    return torch.randn(3, resolution, resolution, generator=gen)


def sample_image(dataset_id: str, class_idx: int, sample_idx: int, resolution: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(_seed_from(dataset_id, class_idx, sample_idx, "noise"))
    noise = torch.randn(3, resolution, resolution, generator=gen)
    return class_pattern(dataset_id, class_idx, resolution) + _NOISE * noise


def balanced_counts(total_per_class: list[int], fraction: Fraction) -> list[int]:
    """floor(fraction * count) per class plus round-robin remainder, matching
    the optimizer side's subsampling rule."""
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    total = sum(total_per_class)
    target = math.floor(fraction * total + Fraction(1, 2))
    counts = [math.floor(fraction * c) for c in total_per_class]
    remainder = target - sum(counts)
    for i, cap in enumerate(total_per_class):
        if remainder == 0:
            break
        if counts[i] < cap:
            counts[i] += 1
            remainder -= 1
    return counts


def split_manifest(dataset_id: str, fraction, resolution: int, seed: int) -> dict:
    """Reproducible class-balanced selection: seeded shuffle, prefix take."""
    if dataset_id not in DATASETS:
        raise DataError(f"unknown dataset id {dataset_id!r}")
    frac = Fraction(fraction)
    spec = DATASETS[dataset_id]
    pool = spec["pool_per_class"]
    counts = balanced_counts([pool] * spec["num_classes"], frac)
    selected = []
    for class_idx, count in enumerate(counts):
        rng = random.Random(_seed_from(dataset_id, seed, class_idx, "split"))
        ids = list(range(pool))
        rng.shuffle(ids)
        selected.append(sorted(ids[:count]))
    return {
        "schema": MANIFEST_SCHEMA,
        "dataset_id": dataset_id,
        "fraction": str(frac),
        "resolution": resolution,
        "seed": seed,
        "selected": selected,
    }


def select_counts(dataset_id: str, counts: list[int], seed: int) -> list[list[int]]:
    """Per-class index selection for explicit counts (the protocol path)."""
    if dataset_id not in DATASETS:
        raise DataError(f"unknown dataset id {dataset_id!r}")
    pool = DATASETS[dataset_id]["pool_per_class"]
    selected = []
    for class_idx, count in enumerate(counts):
        if count > pool:
            raise DataError(
                f"class {class_idx}: requested {count} samples, pool holds {pool}"
            )
        rng = random.Random(_seed_from(dataset_id, seed, class_idx, "split"))
        ids = list(range(pool))
        rng.shuffle(ids)
        selected.append(sorted(ids[:count]))
    return selected


def materialize(dataset_id: str, selected: list[list[int]], resolution: int):
    """Tensors (images, labels) for the selected per-class sample ids."""
    images, labels = [], []
    for class_idx, ids in enumerate(selected):
        for sample_idx in ids:
            images.append(sample_image(dataset_id, class_idx, sample_idx, resolution))
            labels.append(class_idx)
    if not images:
        raise DataError("selection is empty")
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def validation_set(dataset_id: str, num_classes: int, resolution: int):
    """Held-out images from indices beyond every training pool."""
    pool = DATASETS[dataset_id]["pool_per_class"]
    images, labels = [], []
    for class_idx in range(num_classes):
        for offset in range(VAL_PER_CLASS):
            images.append(sample_image(dataset_id, class_idx, pool + offset, resolution))
            labels.append(class_idx)
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)
