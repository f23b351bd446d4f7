"""Evaluation: scoring classifier, Inception Score, ablation runner, grids and plots.

The scoring protocol mirrors the evaluation setup exactly at desk scale: a
small convolutional classifier is trained on the REAL images of the test
split, then generated images conditioned on test-split attributes/masks are
scored with exp(E_x KL(p(y|x) || p(y))), mean +- std over splits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn as nn
from PIL import Image

KL_EPS = 1e-12


class EvalError(ValueError):
    pass


@dataclass
class ScoreResult:
    mean: float
    std: float
    splits: int
    n_images: int


class ScorerNet(nn.Module):
    """Three-block convolutional classifier over the evaluation split's classes."""

    def __init__(self, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 4, stride=2, padding=1),  # 32
            nn.GroupNorm(4, 16),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(16, 32, 4, stride=2, padding=1),  # 16
            nn.GroupNorm(4, 32),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(32, 64, 4, stride=2, padding=1),  # 8
            nn.GroupNorm(4, 64),
            nn.LeakyReLU(0.2, inplace=True),
        )
        # Average pooling carries colour statistics; max pooling keeps the
        # strongest local responses so shape-selective channels stay visible.
        self.head = nn.Linear(128, num_classes)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        feat = self.features(images)
        pooled = torch.cat([feat.mean(dim=(2, 3)), feat.amax(dim=(2, 3))], dim=1)
        return self.head(pooled)


def train_scorer(
    images: np.ndarray,
    class_ids: np.ndarray,
    epochs: int = 80,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    holdout_fraction: float = 0.2,
) -> tuple[ScorerNet, float]:
    """Train the scorer on real images; returns (scorer, held-out accuracy)."""
    classes = np.unique(class_ids)
    if len(classes) < 2:
        raise EvalError("Inception Score is undefined for a single-class split")
    remap = {c: i for i, c in enumerate(classes)}
    targets = torch.tensor([remap[c] for c in class_ids])
    image_t = torch.from_numpy(images).permute(0, 3, 1, 2).float()
    n = image_t.shape[0]
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    perm = torch.randperm(n, generator=gen)
    n_hold = max(1, int(holdout_fraction * n))
    hold, fit = perm[:n_hold], perm[n_hold:]
    model = ScorerNet(len(classes))
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    for _ in range(epochs):
        order = fit[torch.randperm(len(fit), generator=gen)]
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = nn.functional.cross_entropy(model(image_t[idx]), targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        acc = float((model(image_t[hold]).argmax(dim=1) == targets[hold]).float().mean())
    return model, acc


def class_probabilities(scorer: ScorerNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """p(y|x) rows for each image, shape (N, C)."""
    image_t = torch.from_numpy(images).permute(0, 3, 1, 2).float()
    scorer.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, image_t.shape[0], batch_size):
            rows.append(torch.softmax(scorer(image_t[start : start + batch_size]), dim=1).numpy())
    return np.concatenate(rows, axis=0).astype(np.float64)


def inception_score_from_probs(probs: np.ndarray, n_splits: int = 10) -> ScoreResult:
    """exp(mean_x KL(p(y|x) || p(y))) per split, aggregated mean +- std."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    if n < n_splits:
        raise EvalError(f"need at least {n_splits} images for {n_splits} splits, got {n}")
    # Strided assignment keeps every split class-diverse even when the
    # incoming images are grouped by condition, so the split marginal p(y)
    # reflects the full batch rather than a single class.
    scores = []
    for part in (np.arange(n)[i::n_splits] for i in range(n_splits)):
        p_yx = probs[part]
        p_y = p_yx.mean(axis=0, keepdims=True)
        kl = p_yx * (np.log(p_yx + KL_EPS) - np.log(p_y + KL_EPS))
        scores.append(float(np.exp(kl.sum(axis=1).mean())))
    return ScoreResult(float(np.mean(scores)), float(np.std(scores)), n_splits, n)


def inception_score(images: np.ndarray, scorer: ScorerNet, n_splits: int = 10) -> ScoreResult:
    return inception_score_from_probs(class_probabilities(scorer, images), n_splits)


def emit_grid(images: np.ndarray, rows: int, cols: int, path, border: int = 2) -> None:
    """Tile images ((N, H, W, 3) float in [-1, 1] or uint8) into one PNG."""
    n = images.shape[0]
    if rows * cols != n:
        raise EvalError(f"grid {rows}x{cols} does not hold {n} images")
    if images.dtype != np.uint8:
        images = np.clip(np.round((images + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = images.shape[1], images.shape[2]
    canvas = np.full(
        (rows * h + (rows + 1) * border, cols * w + (cols + 1) * border, 3), 255, dtype=np.uint8
    )
    for k in range(n):
        r, c = divmod(k, cols)
        y = border + r * (h + border)
        x = border + c * (w + border)
        canvas[y : y + h, x : x + w] = images[k]
    Image.fromarray(canvas).save(path)


def emit_metric_plot(metrics_csv, path) -> list[str]:
    """Line plot with one series per loss term in the CSV; a `.legend.txt`
    sidecar lists the plotted series. Returns the series names."""
    series: dict[str, list[tuple[int, float]]] = {}
    with open(metrics_csv) as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row["term"], []).append((int(row["iteration"]), float(row["value"])))
    if not series:
        raise EvalError(f"no rows in {metrics_csv}")
    fig, ax = plt.subplots(figsize=(8, 5))
    names = sorted(series)
    for name in names:
        pts = sorted(series[name])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("value")
    ax.legend(fontsize=6, ncol=2)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    Path(str(path) + ".legend.txt").write_text("\n".join(names) + "\n")
    return names


def run_ablation(
    arm_checkpoints: dict[str, str],
    dataset_root: str,
    out_csv,
    out_png=None,
    n_splits: int = 10,
    scorer_seed: int = 0,
    z_seed: int = 0,
) -> list[dict]:
    """Score each trained arm's generations on the test split.

    Missing checkpoints are skipped with a warning row; the CSV is flagged
    partial in that case."""
    from . import trainer as trainer_mod
    from .corpus import load_dataset

    samples, _ = load_dataset(dataset_root, "test")
    real = np.stack([s.image for s in samples])
    class_ids = np.array([s.class_id for s in samples])
    scorer, scorer_acc = train_scorer(real, class_ids, seed=scorer_seed)

    results = []
    partial = False
    for arm, ckpt in arm_checkpoints.items():
        if not Path(ckpt).is_file():
            print(f"warning: missing checkpoint for arm {arm!r}: {ckpt} (skipped)")
            partial = True
            continue
        images = trainer_mod.generate_from_checkpoint(ckpt, samples, z_seed=z_seed)
        score = inception_score(images, scorer, n_splits=n_splits)
        results.append(
            {
                "arm": arm,
                "is_mean": score.mean,
                "is_std": score.std,
                "n_images": score.n_images,
                "scorer_accuracy": scorer_acc,
            }
        )
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["arm", "is_mean", "is_std", "n_images", "scorer_accuracy"]
        )
        writer.writeheader()
        writer.writerows(results)
        if partial:
            fh.write("# partial: one or more arms skipped\n")
    if out_png is not None and results:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(
            [r["arm"] for r in results],
            [r["is_mean"] for r in results],
            yerr=[r["is_std"] for r in results],
            fmt="o-",
        )
        ax.set_ylabel("Inception Score")
        fig.savefig(out_png, dpi=100)
        plt.close(fig)
    return results
