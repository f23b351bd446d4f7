import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amgan import corpus


def _tree_hash(root):
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_sample_count(corpus_root):
    _, train = corpus.load_dataset(corpus_root, "train")
    _, test = corpus.load_dataset(corpus_root, "test")
    assert train.sample_count + test.sample_count == 200
    assert train.sample_count == 160
    assert test.sample_count == 40


def test_regeneration_is_byte_identical(tmp_path):
    spec = corpus.ShapeSpec(num_classes=6)
    corpus.generate_synthetic_dataset(spec, 5, 7, tmp_path / "a")
    corpus.generate_synthetic_dataset(spec, 5, 7, tmp_path / "b")
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")


def test_different_seed_differs(tmp_path):
    spec = corpus.ShapeSpec(num_classes=6)
    corpus.generate_synthetic_dataset(spec, 5, 7, tmp_path / "a")
    corpus.generate_synthetic_dataset(spec, 5, 8, tmp_path / "b")
    assert _tree_hash(tmp_path / "a") != _tree_hash(tmp_path / "b")


def _factor_indices(attrs):
    shape = int(np.flatnonzero(attrs[: corpus.NUM_SHAPES])[0])
    fill = int(np.flatnonzero(attrs[corpus.FILL_OFFSET : corpus.FILL_OFFSET + corpus.NUM_COLORS])[0])
    border = int(
        np.flatnonzero(attrs[corpus.BORDER_OFFSET : corpus.BORDER_OFFSET + corpus.NUM_COLORS])[0]
    )
    size = int(np.flatnonzero(attrs[corpus.SIZE_OFFSET :])[0])
    return shape, fill, border, size


def test_attribute_faithfulness_by_rerender(train_samples):
    """Oracle: re-render each sample from its labeled factors; the stored image
    must match the oracle render on >= 99% of foreground pixels (it matches
    everywhere except possibly position, which is not an attribute)."""
    spec = corpus.ShapeSpec(num_classes=10)
    for sample in train_samples:
        shape, fill, border, size = _factor_indices(sample.attributes)
        stored = corpus.unit_to_image(sample.image)
        fg = sample.mask.astype(bool)
        # recover the center from the mask bounding box (position is not an
        # attribute), searching a small neighborhood for the exact alignment
        ys, xs = np.nonzero(fg)
        cy0 = int(round((ys.min() + ys.max()) / 2))
        cx0 = int(round((xs.min() + xs.max()) / 2))
        best = 0.0
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                rerendered, _ = corpus.render_sample(
                    spec, shape, fill, border, size, (cy0 + dy, cx0 + dx)
                )
                match = (stored[fg] == rerendered[fg]).all(axis=-1).mean()
                best = max(best, float(match))
        assert best >= 0.99


def test_class_factors_match_attributes(train_samples):
    spec = corpus.ShapeSpec(num_classes=10)
    for sample in train_samples:
        shape, fill, _, _ = _factor_indices(sample.attributes)
        assert (shape, fill) == spec.class_factors(sample.class_id)


def test_mask_consistency(train_samples):
    """Foreground pixels are non-background in the image; background is black."""
    for sample in train_samples:
        img = corpus.unit_to_image(sample.image)
        bg = sample.mask == 0
        assert (img[bg] == 0).all()
        assert (img[sample.mask == 1] != 0).any(axis=-1).all()
        assert sample.mask.sum() > 0


def test_split_disjointness(corpus_root):
    _, train = corpus.load_dataset(corpus_root, "train")
    _, test = corpus.load_dataset(corpus_root, "test")
    assert not set(train.class_ids) & set(test.class_ids)


def test_overlapping_split_rejected(tmp_path, corpus_root):
    root = tmp_path / "bad"
    spec = corpus.ShapeSpec(num_classes=6)
    corpus.generate_synthetic_dataset(spec, 2, 0, root)
    # forge a test manifest that reuses a train class
    manifest = corpus.read_manifest(root / "test" / "manifest.txt")
    manifest.class_ids = [0] + manifest.class_ids
    corpus.write_manifest(manifest, root / "test" / "manifest.txt")
    with pytest.raises(corpus.SplitOverlapError):
        corpus.load_dataset(root, "train")


def test_empty_directory_is_load_error(tmp_path):
    with pytest.raises(corpus.LoadError):
        corpus.load_dataset(tmp_path, "train")


def test_missing_mask_file_names_record(tmp_path):
    spec = corpus.ShapeSpec(num_classes=2)
    corpus.generate_synthetic_dataset(spec, 2, 0, tmp_path)
    victim = next((tmp_path / "train").glob("*.mask.png"))
    victim.unlink()
    with pytest.raises(corpus.LoadError, match=victim.name.split(".")[0]):
        corpus.load_dataset(tmp_path, "train")


def test_spec_validation():
    with pytest.raises(corpus.SpecError):
        corpus.ShapeSpec(num_classes=0)
    with pytest.raises(corpus.SpecError):
        corpus.ShapeSpec(num_classes=corpus.MAX_CLASSES + 1)
    with pytest.raises(corpus.SpecError):
        corpus.ShapeSpec(num_attributes=5)


def test_image_round_trip():
    rng = np.random.default_rng(0)
    u8 = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    assert (corpus.unit_to_image(corpus.image_to_unit(u8)) == u8).all()


def test_corrupt_flip_rate_zero_is_identity(corpus_root, tmp_path):
    corpus.corrupt_attributes(corpus_root, tmp_path / "c", 0.0, 1)
    before = corpus.label_matrix(corpus.load_dataset(corpus_root, "train")[0])
    after = corpus.label_matrix(corpus.load_dataset(tmp_path / "c", "train")[0])
    assert (before == after).all()


def test_corrupt_flip_rate_one_inverts(corpus_root, tmp_path):
    corpus.corrupt_attributes(corpus_root, tmp_path / "c", 1.0, 1)
    before = corpus.label_matrix(corpus.load_dataset(corpus_root, "train")[0])
    after = corpus.label_matrix(corpus.load_dataset(tmp_path / "c", "train")[0])
    assert (after == 1 - before).all()


def test_corrupt_leaves_original_untouched(corpus_root, tmp_path):
    before = _tree_hash(corpus_root)
    corpus.corrupt_attributes(corpus_root, tmp_path / "c", 0.5, 1)
    assert _tree_hash(corpus_root) == before


def test_empirical_flip_fraction():
    rng = np.random.default_rng(42)
    labels = rng.integers(0, 2, size=(600, 19)).astype(np.int8)  # > 10^4 bits
    flipped, flips = corpus.flip_labels(labels, 0.4, np.random.default_rng(5))
    assert flips.size >= 10_000
    assert abs(flips.mean() - 0.4) <= 0.03
    assert ((flipped != labels) == flips).all()


def test_flip_log_matches_mask(corpus_root, corrupted_root):
    root, flips = corrupted_root
    log = corpus.read_flip_log(root / "fliplog_train.txt")
    _, manifest = corpus.load_dataset(root, "train")
    id_to_row = {sid: i for i, (sid, _) in enumerate(manifest.records)}
    logged = np.zeros_like(flips)
    for sid, j in log:
        logged[id_to_row[sid], j] = True
    assert (logged == flips).all()


@given(
    flip_rate=st.floats(min_value=0.0, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=25, deadline=None)
def test_flip_labels_stays_binary(flip_rate, seed):
    labels = np.random.default_rng(0).integers(0, 2, size=(30, 19)).astype(np.int8)
    flipped, _ = corpus.flip_labels(labels, flip_rate, np.random.default_rng(seed))
    assert np.isin(flipped, (0, 1)).all()
