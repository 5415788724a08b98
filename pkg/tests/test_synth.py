import filecmp

import numpy as np
import pytest

from fast0tag.dataset import read_dataset, read_partition
from fast0tag.embeddings import read_embeddings
from fast0tag.errors import DataError
from fast0tag.ranksvm import train_rank_svm, violated_constraints
from fast0tag.synth import SYNTH_FILES, SynthSpec, generate, write_synth
from fast0tag.tagger import read_model

SMALL = SynthSpec(num_images=150, num_seen_tags=15, num_unseen_tags=5, feature_dim=6, embed_dim=6,
                  noise_sigma=0.0, seed=9)


def test_noiseless_rules_are_separable():
    d = generate(SMALL)
    seen = d.partition.seen
    for tags in d.dataset.tags:
        pos = [t for t in seen if t in tags]
        neg = [t for t in seen if t not in tags]
        if pos and neg:
            w = train_rank_svm(d.table.matrix(pos), d.table.matrix(neg), 1e-3).w
            assert violated_constraints(w, d.table.matrix(pos), d.table.matrix(neg)) == 0


def test_determinism():
    a, b = generate(SMALL), generate(SMALL)
    assert a.dataset.equals(b.dataset)
    assert np.array_equal(a.table.vectors, b.table.vectors)


def test_labels_follow_planted_map():
    d = generate(SMALL)
    z = d.dataset.features @ d.planted.T
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    np.testing.assert_allclose(z, d.directions, atol=1e-12)
    scores = d.directions @ d.table.vectors.T
    for m in range(len(d.dataset)):
        rel = scores[m] >= np.median(scores[m]) + SMALL.margin
        assert d.dataset.tags[m] == {n for n, r in zip(d.table.names, rel) if r}


def test_splits_proportions():
    d = generate(SynthSpec(num_images=100, num_seen_tags=5, num_unseen_tags=2, seed=1))
    counts = {s: d.dataset.splits.count(s) for s in ("train", "val", "test")}
    assert counts == {"train": 60, "val": 20, "test": 20}


def test_infeasible_margin():
    with pytest.raises(DataError, match="infeasible"):
        generate(SynthSpec(margin=2.5))


def test_files_round_trip(tmp_path):
    d = generate(SMALL)
    paths = write_synth(d, tmp_path / "a")
    assert set(paths) == set(SYNTH_FILES)
    table = read_embeddings(paths["embeddings"])
    part = read_partition(paths["seen"], paths["unseen"], table)
    ds = read_dataset(paths["features"], paths["annotations"], paths["splits"], part.all_tags)
    assert ds.ids == d.dataset.ids and ds.tags == d.dataset.tags and ds.splits == d.dataset.splits
    np.testing.assert_allclose(ds.features, d.dataset.features, atol=1e-15)
    np.testing.assert_array_equal(read_model(paths["planted_map"]).A, d.planted)

    again = write_synth(generate(SMALL), tmp_path / "b")
    for role in paths:
        assert filecmp.cmp(paths[role], again[role], shallow=False)

    binary = write_synth(d, tmp_path / "c", binary=True)
    ds2 = read_dataset(binary["features"], binary["annotations"], binary["splits"])
    np.testing.assert_allclose(ds2.features, d.dataset.features, atol=1e-6)
