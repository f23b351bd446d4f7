"""Attribute- and mask-conditioned multi-stage adversarial image synthesis,
with attribute-label denoising and Inception Score evaluation, on a synthetic
shapes corpus."""

__version__ = "0.1.0"
