from fractions import Fraction

import pytest
import torch

from widthforge_bridge.data import (
    DataError,
    balanced_counts,
    materialize,
    sample_image,
    select_counts,
    split_manifest,
    validation_set,
)


def test_balanced_counts_exact_division():
    assert balanced_counts([100] * 10, Fraction(1, 2)) == [50] * 10


def test_balanced_counts_remainder_round_robin():
    counts = balanced_counts([10, 10, 10, 10], Fraction(3, 8))
    assert counts == [4, 4, 4, 3]
    assert sum(counts) == 15


def test_manifest_full_split():
    manifest = split_manifest("synthetic-blobs", 1, 16, seed=0)
    assert all(len(ids) == 256 for ids in manifest["selected"])


def test_manifest_determinism():
    for seed, num in [(s, n) for s in range(5) for n in (5, 25, 50, 100)]:
        fraction = Fraction(num, 100)
        a = split_manifest("synthetic-blobs", fraction, 16, seed)
        b = split_manifest("synthetic-blobs", fraction, 16, seed)
        assert a == b


def test_manifest_seed_sensitivity():
    a = split_manifest("synthetic-blobs", Fraction(1, 4), 16, seed=0)
    b = split_manifest("synthetic-blobs", Fraction(1, 4), 16, seed=1)
    assert a["selected"] != b["selected"]


def test_select_counts_respects_pool():
    with pytest.raises(DataError):
        select_counts("synthetic-blobs", [500], seed=0)


def test_unknown_dataset():
    with pytest.raises(DataError):
        split_manifest("cifar-zillion", Fraction(1, 2), 16, 0)


def test_materialize_shapes_and_labels():
    selected = select_counts("synthetic-blobs", [3, 5, 2], seed=7)
    x, y = materialize("synthetic-blobs", selected, 8)
    assert x.shape == (10, 3, 8, 8)
    assert y.tolist() == [0] * 3 + [1] * 5 + [2] * 2


def test_images_deterministic():
    a = sample_image("synthetic-blobs", 2, 17, 8)
    b = sample_image("synthetic-blobs", 2, 17, 8)
    assert torch.equal(a, b)
    c = sample_image("synthetic-blobs", 2, 18, 8)
    assert not torch.equal(a, c)


def test_validation_disjoint_from_pool():
    # Validation draws indices at pool..pool+k, so identical class/resolution
    # training images can never coincide with them.
    val_x, val_y = validation_set("synthetic-blobs", 4, 8)
    assert val_x.shape[0] == 4 * 16
    train_img = sample_image("synthetic-blobs", 0, 0, 8)
    assert not any(torch.equal(train_img, val_x[i]) for i in range(16))
