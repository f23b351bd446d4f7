"""Attribute label denoising: per-attribute robust consensus over image features.

For each attribute column independently: run R rounds of hypothesis fitting,
where a hypothesis is a majority vote of the sampled labels within consensus
cells of one feature block (exact value groups for near-discrete blocks,
k-means cells otherwise); count inliers (points whose current label matches
the hypothesis); keep the best hypothesis; if its inlier ratio reaches the
acceptance threshold, fit a linear max-margin classifier on the inliers and
flip every label the classifier contradicts with confidence above the flip
threshold. Confidence is the logistic squash of the decision value, so a flip
threshold of 1.0 is unreachable and the pass is a guaranteed no-op.

Majority voting inside feature cells is what makes the consensus robust at
high symmetric flip rates: a lone linear fit on 40%-flipped labels drifts
toward whichever side the noise tips each cluster, while the per-cell vote
pools every sample that shares a factor value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from sklearn.cluster import KMeans
from sklearn.svm import LinearSVC


@dataclass
class FeatureTable:
    features: np.ndarray  # (N, F)
    ids: list[str]
    # Disjoint groups of feature columns that describe one visual factor
    # each; None means a single block spanning every column.
    blocks: list[list[int]] | None = None

    def block_list(self) -> list[list[int]]:
        if self.blocks:
            return self.blocks
        return [list(range(self.features.shape[1]))]


@dataclass
class DenoiseParams:
    rounds: int = 50
    sample_size: int | None = None  # default max(2F, N/2), capped at N
    margin: float = 0.0
    accept_ratio: float = 0.55
    flip_confidence: float | None = None  # None -> percentile of inlier confidences
    flip_percentile: float = 5.0
    min_samples: int = 20
    min_per_class: int = 5
    n_clusters: int = 12
    max_exact_cells: int = 64
    svm_c: float = 1.0
    seed: int = 0


@dataclass
class AttributeReport:
    attribute_id: int
    skipped: bool
    consensus_accuracy: float
    inlier_count: int
    flips: int


@dataclass
class DenoiseReport:
    per_attribute: list[AttributeReport] = field(default_factory=list)

    @property
    def total_flips(self) -> int:
        return sum(r.flips for r in self.per_attribute)


class FeatureExtractor(nn.Module):
    """Small convolutional classifier; features are the penultimate layer."""

    def __init__(self, num_classes: int, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim
        self.conv = nn.Sequential(
            nn.Conv2d(3, 16, 4, stride=2, padding=1),  # 32
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(16, 32, 4, stride=2, padding=1),  # 16
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(32, 64, 4, stride=2, padding=1),  # 8
            nn.LeakyReLU(0.2, inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc = nn.Linear(64, feature_dim)
        self.head = nn.Linear(feature_dim, num_classes)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.fc(self.conv(images).flatten(1))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(torch.relu(self.features(images)))


def train_feature_extractor(
    images: np.ndarray,
    class_ids: np.ndarray,
    epochs: int = 12,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """Train the extractor on the corpus's class labels (stand-in for a large
    pretrained backbone; any extractor with the same interface can substitute)."""
    classes = np.unique(class_ids)
    remap = {c: i for i, c in enumerate(classes)}
    targets = torch.tensor([remap[c] for c in class_ids])
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    model = FeatureExtractor(num_classes=len(classes))
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    image_t = torch.from_numpy(images).permute(0, 3, 1, 2).float()
    n = image_t.shape[0]
    model.train()
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits = model(image_t[idx])
            loss = nn.functional.cross_entropy(logits, targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return model


def extract_features(
    extractor: FeatureExtractor, images: np.ndarray, ids: list[str], batch_size: int = 64
) -> FeatureTable:
    """(N, H, W, 3) images in [-1, 1] -> (N, F) learned feature table."""
    image_t = torch.from_numpy(images).permute(0, 3, 1, 2).float()
    rows = []
    extractor.eval()
    with torch.no_grad():
        for start in range(0, image_t.shape[0], batch_size):
            rows.append(extractor.features(image_t[start : start + batch_size]).numpy())
    return FeatureTable(np.concatenate(rows, axis=0), list(ids))


def _erode(mask: np.ndarray) -> np.ndarray:
    return (
        mask
        & np.roll(mask, 1, axis=0)
        & np.roll(mask, -1, axis=0)
        & np.roll(mask, 1, axis=1)
        & np.roll(mask, -1, axis=1)
    )


FACTOR_BLOCKS = [[0, 1, 2], [3, 4, 5], [6, 7], [8, 9, 10]]


def factor_statistics(images: np.ndarray, masks: np.ndarray, ids: list[str]) -> FeatureTable:
    """Mask-guided per-image statistics, one standardized block per factor.

    Blocks: interior color (3x3 patch at the foreground centroid), boundary
    color (outermost 1px shell of the mask), object extent (bbox extent and
    its deviation from the dataset median), and silhouette geometry (bbox
    occupancy, isoperimetric ratio, vertical asymmetry).
    """
    rows = []
    for img, mask in zip(images, masks):
        m = mask.astype(bool)
        if not m.any():
            rows.append(np.zeros(11))
            continue
        shell = m & ~_erode(m)
        ys, xs = np.nonzero(m)
        cy, cx = int(round(ys.mean())), int(round(xs.mean()))
        patch = img[max(cy - 1, 0) : cy + 2, max(cx - 1, 0) : cx + 2].reshape(-1, 3)
        area = m.sum()
        h = ys.max() - ys.min() + 1
        w = xs.max() - xs.min() + 1
        extent = float(max(h, w))
        perim = shell.sum()
        rows.append(
            np.concatenate(
                [
                    patch.mean(axis=0),
                    img[shell].mean(axis=0),
                    [
                        extent,
                        0.0,  # filled below: |extent - median extent|
                        area / (h * w),
                        perim**2 / (4 * np.pi * area),
                        (ys.mean() - (ys.min() + ys.max()) / 2) / h,
                    ],
                ]
            )
        )
    feats = np.stack(rows).astype(np.float64)
    feats[:, 7] = np.abs(feats[:, 6] - np.median(feats[:, 6]))
    feats = (feats - feats.mean(axis=0)) / (feats.std(axis=0) + 1e-8)
    return FeatureTable(feats, list(ids), blocks=[list(b) for b in FACTOR_BLOCKS])


def _confidence(decision: np.ndarray) -> np.ndarray:
    # |decision| squashed to (0.5, 1); 1.0 is unreachable
    return 1.0 / (1.0 + np.exp(-np.abs(decision)))


def _fit_svm(features: np.ndarray, labels01: np.ndarray, c: float) -> LinearSVC:
    clf = LinearSVC(C=c, loss="hinge", max_iter=5000, tol=1e-4)
    clf.fit(features, labels01)
    return clf


def _cell_assignment(
    block_features: np.ndarray, params: DenoiseParams, rng: np.random.Generator
) -> np.ndarray:
    """Consensus cells of one block: exact value groups when the block is
    near-discrete, k-means cells otherwise."""
    rounded = np.round(block_features, 4)
    cells, inverse = np.unique(rounded, axis=0, return_inverse=True)
    if len(cells) <= params.max_exact_cells:
        return inverse
    km = KMeans(
        n_clusters=min(params.n_clusters, len(block_features)),
        n_init=4,
        random_state=int(rng.integers(2**31)),
    )
    return km.fit(block_features).labels_


def _vote_hypothesis(
    cells: np.ndarray, column: np.ndarray, sample_idx: np.ndarray
) -> np.ndarray:
    """Predicted label per point: majority of the sampled labels in its cell."""
    sampled_cells = cells[sample_idx]
    sampled_labels = column[sample_idx]
    fallback = int(sampled_labels.mean() > 0.5)
    pred = np.full(len(column), fallback, dtype=np.int8)
    for c in np.unique(sampled_cells):
        vote = int(sampled_labels[sampled_cells == c].mean() > 0.5)
        pred[cells == c] = vote
    return pred


def _denoise_column(
    table: FeatureTable, column: np.ndarray, params: DenoiseParams, rng: np.random.Generator
) -> tuple[np.ndarray, AttributeReport]:
    features = table.features
    n, f = features.shape
    attr_id = -1  # filled by caller
    pos = int(column.sum())
    neg = n - pos
    if pos < params.min_per_class or neg < params.min_per_class:
        return column.copy(), AttributeReport(attr_id, True, 0.0, 0, 0)
    s = params.sample_size if params.sample_size is not None else max(2 * f, n // 2)
    s = min(s, n)
    cell_sets = [
        _cell_assignment(features[:, block], params, rng) for block in table.block_list()
    ]
    blocks = table.block_list()
    best: tuple[int, int] | None = None
    for r in range(params.rounds):
        block_idx = r % len(cell_sets)
        cells = cell_sets[block_idx]
        idx = rng.choice(n, size=s, replace=False)
        if len(np.unique(column[idx])) < 2:
            continue
        pred = _vote_hypothesis(cells, column, idx)
        inliers = pred == column
        if best is None or inliers.sum() > best[0]:
            best = (int(inliers.sum()), block_idx)
    if best is None:
        return column.copy(), AttributeReport(attr_id, True, 0.0, 0, 0)
    # consolidate the winning cell structure with a full-data vote: every
    # label participates, so per-cell majorities are as stable as n allows
    pred = _vote_hypothesis(cell_sets[best[1]], column, np.arange(n))
    best_inliers = pred == column
    ratio = best_inliers.sum() / n
    if ratio < params.accept_ratio or len(np.unique(column[best_inliers])) < 2:
        return column.copy(), AttributeReport(attr_id, True, float(ratio), int(best_inliers.sum()), 0)
    # refit on the winning block's columns only: the decision then depends
    # solely on the factor that explains the label, so every point in a
    # consensus cell gets the same verdict
    block_cols = blocks[best[1]]
    refit = _fit_svm(features[best_inliers][:, block_cols], column[best_inliers], params.svm_c)
    decision = refit.decision_function(features[:, block_cols])
    pred = ((decision > 0) & (np.abs(decision) >= params.margin)).astype(np.int8)
    conf = _confidence(decision)
    if params.flip_confidence is None:
        threshold = float(np.percentile(conf[best_inliers], params.flip_percentile))
    else:
        threshold = params.flip_confidence
    flip = (pred != column) & (conf >= threshold)
    corrected = np.where(flip, pred, column).astype(column.dtype)
    report = AttributeReport(attr_id, False, float(ratio), int(best_inliers.sum()), int(flip.sum()))
    return corrected, report


def denoise_labels(
    table: FeatureTable, labels: np.ndarray, params: DenoiseParams | None = None
) -> tuple[np.ndarray, DenoiseReport]:
    """Correct a binary (N, A) label matrix column by column.

    Columns are processed independently; each gets its own RNG substream so
    column order and neighboring columns cannot affect its outcome."""
    params = params or DenoiseParams()
    n, _ = table.features.shape
    if labels.shape[0] != n:
        raise ValueError(f"labels rows {labels.shape[0]} != feature rows {n}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    if n < params.min_samples:
        raise ValueError(f"need at least {params.min_samples} samples, got {n}")
    corrected = labels.copy()
    report = DenoiseReport()
    for a in range(labels.shape[1]):
        column = labels[:, a]
        # RNG keyed by column content, not position, so permuting columns
        # permutes the results identically
        digest = hashlib.sha256(np.ascontiguousarray(column).tobytes()).digest()
        rng = np.random.default_rng((params.seed, int.from_bytes(digest[:8], "little")))
        col, attr_report = _denoise_column(table, column, params, rng)
        attr_report.attribute_id = a
        corrected[:, a] = col
        report.per_attribute.append(attr_report)
    return corrected, report


def write_report(report: DenoiseReport, text_path, csv_path) -> None:
    lines = [
        f"attribute {r.attribute_id}: "
        + ("skipped" if r.skipped else f"consensus={r.consensus_accuracy:.3f} inliers={r.inlier_count} flips={r.flips}")
        for r in report.per_attribute
    ]
    lines.append(f"total flips {report.total_flips}")
    with open(text_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(csv_path, "w") as fh:
        fh.write("attribute_id,skipped,consensus_accuracy,inlier_count,flips\n")
        for r in report.per_attribute:
            fh.write(
                f"{r.attribute_id},{int(r.skipped)},{r.consensus_accuracy:.6f},{r.inlier_count},{r.flips}\n"
            )
