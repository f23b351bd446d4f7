import numpy as np
import pytest

from amgan import corpus


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    """10-class shapes corpus, 20 per class, seed 7 (160 train / 40 test)."""
    root = tmp_path_factory.mktemp("corpus")
    spec = corpus.ShapeSpec(num_classes=10)
    corpus.generate_synthetic_dataset(spec, 20, 7, root)
    return root


@pytest.fixture(scope="session")
def train_samples(corpus_root):
    samples, _ = corpus.load_dataset(corpus_root, "train")
    return samples


@pytest.fixture(scope="session")
def corrupted_root(tmp_path_factory, corpus_root):
    """Copy of the corpus with 40% planted flip noise on the train split."""
    root = tmp_path_factory.mktemp("corrupted")
    flips = corpus.corrupt_attributes(corpus_root, root, 0.4, 123)
    return root, flips["train"]


@pytest.fixture(scope="session")
def feature_setup(train_samples):
    """Trained feature extractor + feature table over the clean train split."""
    from amgan import attr_denoise

    images = np.stack([s.image for s in train_samples])
    class_ids = np.array([s.class_id for s in train_samples])
    extractor = attr_denoise.train_feature_extractor(images, class_ids, seed=0)
    table = attr_denoise.extract_features(
        extractor, images, [s.sample_id for s in train_samples]
    )
    return extractor, table


@pytest.fixture(scope="session")
def denoise_setup(tmp_path_factory):
    """Larger corpus for label-denoising recovery: clean labels, 40%-flipped
    labels, and the factor-statistic feature table over the train split."""
    from amgan import attr_denoise

    root = tmp_path_factory.mktemp("denoise_corpus")
    noisy_root = tmp_path_factory.mktemp("denoise_corrupted")
    spec = corpus.ShapeSpec(num_classes=24)
    corpus.generate_synthetic_dataset(spec, 100, 11, root)
    corpus.corrupt_attributes(root, noisy_root, 0.4, 123)
    samples, _ = corpus.load_dataset(root, "train")
    noisy_samples, _ = corpus.load_dataset(noisy_root, "train")
    table = attr_denoise.factor_statistics(
        np.stack([s.image for s in samples]),
        np.stack([s.mask for s in samples]),
        [s.sample_id for s in samples],
    )
    return table, corpus.label_matrix(samples), corpus.label_matrix(noisy_samples)
