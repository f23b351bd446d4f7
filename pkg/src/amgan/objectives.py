"""Adversarial loss terms and objective assembly.

All adversarial terms share the form mean(log d_real) + mean(log(1 - d_fake)),
with probabilities clamped to [1e-7, 1 - 1e-7] before the logs. The
discriminator maximizes the 15-term sum L; the generator minimizes
L + lambda * damsm, with its adversarial parts computed in the non-saturating
form by the trainer (config-switchable back to the saturating min-max form).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

PROB_EPS = 1e-7
STAGE_TERMS = ("all", "part", "mask_all", "mask_part", "condition")
NUM_STAGES = 3
TERM_NAMES = tuple(
    f"{t}_{i}" for i in range(1, NUM_STAGES + 1) for t in STAGE_TERMS
) + ("damsm",)


class LossDomainError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


@dataclass
class LossReport:
    """Named scalar per objective term plus assembled totals."""

    terms: dict[str, float] = field(default_factory=dict)
    l_d: float = 0.0
    l_g: float = 0.0

    def rows(self, iteration: int) -> list[tuple[int, str, float]]:
        out = [(iteration, name, value) for name, value in self.terms.items()]
        out += [(iteration, "L_D", self.l_d), (iteration, "L_G", self.l_g)]
        return out


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    p = torch.as_tensor(p, dtype=torch.float32) if not torch.is_tensor(p) else p
    if (p < 0).any() or (p > 1).any():
        raise LossDomainError("probabilities must lie in [0, 1]")
    return torch.log(p.clamp(PROB_EPS, 1.0 - PROB_EPS))


def loss_all(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """mean log d_real + mean log(1 - d_fake)."""
    d_real = torch.as_tensor(d_real, dtype=torch.float32) if not torch.is_tensor(d_real) else d_real
    d_fake = torch.as_tensor(d_fake, dtype=torch.float32) if not torch.is_tensor(d_fake) else d_fake
    return _clamped_log(d_real).mean() + _clamped_log(1.0 - d_fake).mean()


def loss_part(part_real: torch.Tensor, part_fake: torch.Tensor) -> torch.Tensor:
    """Average of the loss_all form over the 4 quadrant verdict rows."""
    part_real = torch.as_tensor(part_real, dtype=torch.float32) if not torch.is_tensor(part_real) else part_real
    part_fake = torch.as_tensor(part_fake, dtype=torch.float32) if not torch.is_tensor(part_fake) else part_fake
    if part_real.shape[0] != 4 or part_fake.shape[0] != 4:
        raise AssemblyError(f"expected 4 regions, got {part_real.shape[0]}/{part_fake.shape[0]}")
    return torch.stack([loss_all(part_real[j], part_fake[j]) for j in range(4)]).mean()


def loss_mask(form: str, masked_real, masked_fake) -> torch.Tensor:
    """Same functional form as loss_all / loss_part, over foreground-discriminator
    verdicts on mask-cropped inputs."""
    if form == "all":
        return loss_all(masked_real, masked_fake)
    if form == "part":
        return loss_part(masked_real, masked_fake)
    raise AssemblyError(f"unknown mask loss form {form!r}")


def loss_condition(d_match: torch.Tensor, d_mismatch: torch.Tensor) -> torch.Tensor:
    """mean log d_match + mean log(1 - d_mismatch), both from real images."""
    return loss_all(d_match, d_mismatch)


def loss_damsm(
    region_features: torch.Tensor,
    local_embeddings: torch.Tensor,
    valid: torch.Tensor | None = None,
    gamma1: float = 5.0,
    gamma2: float = 5.0,
    gamma3: float = 10.0,
) -> torch.Tensor:
    """Symmetric contrastive attention-matching loss over the batch pairing.

    region_features: (B, D, R) image region features; local_embeddings:
    (B, T, D) attribute token features; valid: (B, T) True at real tokens.
    For every (image j, attribute sequence i) pair, each token attends over
    the image's regions and the pair's match score aggregates the per-token
    cosine relevances; softmax over the batch in both directions, diagonal
    pairs are the positives.
    """
    b = region_features.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs batch size >= 2")
    if local_embeddings.shape[0] != b:
        raise AssemblyError("batch pairing mismatch between images and attribute sequences")
    regions = torch.nn.functional.normalize(region_features, dim=1)  # (B, D, R)
    words = torch.nn.functional.normalize(local_embeddings, dim=2)  # (B, T, D)

    rows = []
    for i in range(b):
        w = words[i]  # (T, D)
        sim = torch.einsum("td,bdr->btr", w, regions)  # tokens of i vs every image's regions
        attn = torch.softmax(gamma1 * sim, dim=-1)
        context = torch.einsum("btr,bdr->btd", attn, regions)
        rel = torch.nn.functional.cosine_similarity(
            context, w.unsqueeze(0).expand_as(context), dim=-1
        )  # (B, T)
        if valid is not None:
            rel = rel.masked_fill(~valid[i].unsqueeze(0), float("-inf"))
        rows.append(torch.logsumexp(gamma2 * rel, dim=-1) / gamma2)  # (B,)
    # scores[i, j] = match of attribute sequence i with image j
    scores = torch.stack(rows)
    logits = gamma3 * scores
    targets = torch.arange(b)
    loss_text_to_image = torch.nn.functional.cross_entropy(logits, targets)
    loss_image_to_text = torch.nn.functional.cross_entropy(logits.t(), targets)
    return loss_text_to_image + loss_image_to_text


def assemble_objectives(
    terms: dict[str, torch.Tensor | float], lam: float
) -> tuple[torch.Tensor | float, torch.Tensor | float]:
    """(L_D to maximize, L_G to minimize) from the full 15-term report plus damsm."""
    missing = [name for name in TERM_NAMES if name not in terms]
    if missing:
        raise AssemblyError(f"missing objective terms: {missing}")
    total = sum(terms[name] for name in TERM_NAMES if name != "damsm")
    return total, total + lam * terms["damsm"]
