"""Alternating adversarial training: one discriminator update then one
generator(+mask encoder) update per iteration, Adam(2e-4, 0.5, 0.999).

A run first pretrains the cross-modal matching encoders (attribute encoder +
image region encoder), freezes them, then runs the adversarial loop with
periodic atomic checkpoints, sample grids, and a per-iteration metrics CSV.
RNG streams are partitioned by purpose (initialization, data order, noise,
pretraining) so toggling one module does not shift another's randomness.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import evalkit
from .attr_encoder import AttributeEncoder, tokenize_attributes
from .corpus import Sample, load_dataset, read_manifest
from .damsm import RegionEncoder, pretrain_matching, region_features
from .gan_core import (
    COND_DIM,
    STAGE_RESOLUTIONS,
    Z_DIM,
    DiscriminatorSuite,
    Generator,
    init_weights,
)
from .mask_prior import MaskEncoder, apply_mask
from .objectives import (
    TERM_NAMES,
    LossReport,
    assemble_objectives,
    loss_all,
    loss_condition,
    loss_damsm,
    loss_part,
)

CHECKPOINT_VERSION = 1


class TrainerError(RuntimeError):
    pass


class CheckpointError(TrainerError):
    pass


class ConfigMismatchError(TrainerError):
    pass


@dataclass
class TrainConfig:
    dataset_root: str = ""
    out_dir: str = ""
    iterations: int = 300
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lam: float = 5.0
    seed: int = 0
    z_dim: int = Z_DIM
    embed_dim: int = 128
    stage_resolutions: tuple[int, int, int] = STAGE_RESOLUTIONS
    checkpoint_interval: int = 100
    attribute_source: str = "original"  # original | denoised
    denoised_root: str = ""  # attr files read from here when source is denoised
    use_mask_module: bool = True
    use_part_discriminator: bool = True
    non_saturating: bool = True
    pretrain_iterations: int = 1000
    pretrain_lr: float = 2e-4

    def validate(self) -> None:
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ValueError("learning rate must be > 0")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive matching loss)")
        if tuple(self.stage_resolutions) != STAGE_RESOLUTIONS:
            raise ValueError(f"stage resolutions are fixed at {STAGE_RESOLUTIONS}")
        if self.attribute_source not in ("original", "denoised"):
            raise ValueError("attribute_source must be 'original' or 'denoised'")
        if self.attribute_source == "denoised" and not self.denoised_root:
            raise ValueError("denoised attribute_source requires denoised_root")

    def to_file(self, path) -> None:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        kwargs = {}
        field_types = {f.name: f for f in dataclasses.fields(cls)}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in field_types:
                raise ValueError(f"unknown config key {key!r}")
            default = getattr(cls, key, field_types[key].default)
            if isinstance(default, bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            elif isinstance(default, tuple):
                kwargs[key] = tuple(int(v) for v in value.split(","))
            else:
                kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    def hash(self) -> str:
        # out_dir and iterations are excluded: a resumed run may write
        # elsewhere and extend the schedule, but must not silently change
        # anything that alters the optimization problem
        payload = ";".join(
            f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)
            if f.name not in ("out_dir", "iterations")
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class Networks:
    attr_encoder: AttributeEncoder
    region_encoder: RegionEncoder
    mask_encoder: MaskEncoder
    generator: Generator
    discriminators: DiscriminatorSuite


def build_networks(config: TrainConfig, vocab_size: int) -> Networks:
    torch.manual_seed(config.seed * 1000)
    attr_enc = AttributeEncoder(vocab_size, config.embed_dim)
    region_enc = RegionEncoder(config.embed_dim)
    mask_enc = MaskEncoder()
    gen = Generator(
        embed_dim=config.embed_dim, z_dim=config.z_dim, use_mask=config.use_mask_module
    )
    suite = DiscriminatorSuite(embed_dim=config.embed_dim)
    init_weights(gen)
    init_weights(suite)
    init_weights(mask_enc)
    return Networks(attr_enc, region_enc, mask_enc, gen, suite)


def _load_training_data(config: TrainConfig) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
    samples, _ = load_dataset(config.dataset_root, "train")
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    if config.attribute_source == "denoised":
        manifest = read_manifest(Path(config.denoised_root) / "train" / "manifest.txt")
        by_id = dict(manifest.records)
        labels = []
        for s in samples:
            if s.sample_id not in by_id:
                raise TrainerError(f"denoised dataset is missing record {s.sample_id}")
            attr_path = Path(config.denoised_root) / "train" / f"{s.sample_id}.attr.txt"
            labels.append(np.array(attr_path.read_text().split(), dtype=np.int8))
        label_matrix = np.stack(labels)
    else:
        label_matrix = np.stack([s.attributes for s in samples])
    token_lists = [tokenize_attributes(row) for row in label_matrix]
    return images, masks, token_lists


def _pool_to(images: torch.Tensor, resolution: int) -> torch.Tensor:
    factor = images.shape[-1] // resolution
    return F.avg_pool2d(images, factor) if factor > 1 else images


def _zero() -> torch.Tensor:
    return torch.zeros(())


def _check_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise TrainerError(f"NaN/Inf in loss term {name!r}; aborting")


def train_step(
    nets: Networks,
    opt_d: torch.optim.Optimizer,
    opt_g: torch.optim.Optimizer,
    images: torch.Tensor,
    masks: torch.Tensor,
    token_lists: list[list[int]],
    config: TrainConfig,
    g_noise: torch.Generator,
) -> LossReport:
    """One discriminator update on the full objective, then one generator
    (+mask encoder) update; returns the pre-update loss report."""
    b = images.shape[0]
    with torch.no_grad():
        global_vec, local, valid = nets.attr_encoder.encode_batch(token_lists)
    pyramid = nets.mask_encoder(masks) if config.use_mask_module else None
    z = torch.randn(b, config.z_dim, generator=g_noise)
    c_noise = torch.randn(b, COND_DIM, generator=g_noise)
    outputs = nets.generator(z, global_vec, local, pyramid, valid, c_noise)
    fakes = [o.image for o in outputs]
    reals = [_pool_to(images, r) for r in config.stage_resolutions]

    terms: dict[str, torch.Tensor] = {}
    cond_mismatch = torch.roll(global_vec, shifts=1, dims=0)
    for i, stage_res in enumerate(config.stage_resolutions, start=1):
        disc = nets.discriminators
        vr = disc.plain[i - 1](reals[i - 1])
        vf = disc.plain[i - 1](fakes[i - 1].detach())
        terms[f"all_{i}"] = loss_all(vr.overall, vf.overall)
        terms[f"part_{i}"] = (
            loss_part(vr.parts, vf.parts) if config.use_part_discriminator else _zero()
        )
        if config.use_mask_module:
            mvr = disc.foreground[i - 1](apply_mask(reals[i - 1], masks))
            mvf = disc.foreground[i - 1](apply_mask(fakes[i - 1].detach(), masks))
            terms[f"mask_all_{i}"] = loss_all(mvr.overall, mvf.overall)
            terms[f"mask_part_{i}"] = (
                loss_part(mvr.parts, mvf.parts) if config.use_part_discriminator else _zero()
            )
        else:
            terms[f"mask_all_{i}"] = _zero()
            terms[f"mask_part_{i}"] = _zero()
        d_match = disc.discriminate_conditional(reals[i - 1], i, global_vec)
        d_mismatch = disc.discriminate_conditional(reals[i - 1], i, cond_mismatch)
        terms[f"condition_{i}"] = loss_condition(d_match, d_mismatch)
    for name, value in terms.items():
        _check_finite(name, value)

    d_objective = sum(terms.values())
    opt_d.zero_grad()
    (-d_objective).backward()
    opt_d.step()

    # generator update against the refreshed discriminators
    g_adv = _zero()
    for i in range(1, 4):
        disc = nets.discriminators
        vf = disc.plain[i - 1](fakes[i - 1])
        g_adv = g_adv + _gen_adv(vf.overall, config)
        if config.use_part_discriminator:
            g_adv = g_adv + torch.stack([_gen_adv(vf.parts[j], config) for j in range(4)]).mean()
        if config.use_mask_module:
            mvf = disc.foreground[i - 1](apply_mask(fakes[i - 1], masks))
            g_adv = g_adv + _gen_adv(mvf.overall, config)
            if config.use_part_discriminator:
                g_adv = g_adv + torch.stack(
                    [_gen_adv(mvf.parts[j], config) for j in range(4)]
                ).mean()
    regions = region_features(nets.region_encoder, fakes[2])
    damsm = loss_damsm(regions, local, valid)
    terms["damsm"] = damsm
    _check_finite("damsm", damsm)
    g_objective = g_adv + config.lam * damsm
    _check_finite("generator objective", g_objective)
    opt_g.zero_grad()
    g_objective.backward()
    opt_g.step()

    scalar_terms = {name: float(terms[name].detach()) for name in TERM_NAMES}
    l_d, l_g = assemble_objectives(scalar_terms, config.lam)
    return LossReport(terms=scalar_terms, l_d=float(l_d), l_g=float(l_g))


def _gen_adv(d_fake: torch.Tensor, config: TrainConfig) -> torch.Tensor:
    from .objectives import _clamped_log

    if config.non_saturating:
        return -_clamped_log(d_fake).mean()
    return _clamped_log(1.0 - d_fake).mean()


def _optimizers(nets: Networks, config: TrainConfig):
    betas = (config.beta1, config.beta2)
    g_params = list(nets.generator.parameters()) + list(nets.mask_encoder.parameters())
    opt_g = torch.optim.Adam(g_params, lr=config.lr, betas=betas)
    opt_d = torch.optim.Adam(nets.discriminators.parameters(), lr=config.lr, betas=betas)
    return opt_d, opt_g


def save_checkpoint(
    path,
    nets: Networks,
    opt_d,
    opt_g,
    iteration: int,
    config: TrainConfig,
    rng_states: dict,
) -> None:
    """Atomic write (temp then rename)."""
    blob = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config.hash(),
        "config": dataclasses.asdict(config),
        "iteration": iteration,
        "vocab_size": nets.attr_encoder.vocab_size,
        "networks": {
            "attr_encoder": nets.attr_encoder.state_dict(),
            "region_encoder": nets.region_encoder.state_dict(),
            "mask_encoder": nets.mask_encoder.state_dict(),
            "generator": nets.generator.state_dict(),
            "discriminators": nets.discriminators.state_dict(),
        },
        "optimizers": {"opt_d": opt_d.state_dict(), "opt_g": opt_g.state_dict()},
        "rng": rng_states,
    }
    tmp = str(path) + ".tmp"
    torch.save(blob, tmp)
    os.replace(tmp, path)


REQUIRED_SECTIONS = ("version", "config_hash", "config", "iteration", "networks", "optimizers", "rng")
REQUIRED_NETWORKS = ("attr_encoder", "region_encoder", "mask_encoder", "generator", "discriminators")


def load_checkpoint(path) -> dict:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict):
        raise CheckpointError(f"checkpoint {path} has unexpected payload type")
    missing = [k for k in REQUIRED_SECTIONS if k not in blob]
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing sections: {missing}")
    if blob["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {blob['version']} != supported {CHECKPOINT_VERSION}"
        )
    missing_nets = [k for k in REQUIRED_NETWORKS if k not in blob["networks"]]
    if missing_nets:
        raise CheckpointError(f"checkpoint {path} is missing networks: {missing_nets}")
    return blob


def restore_networks(blob: dict) -> tuple[Networks, TrainConfig]:
    cfg_dict = dict(blob["config"])
    cfg_dict["stage_resolutions"] = tuple(cfg_dict["stage_resolutions"])
    config = TrainConfig(**cfg_dict)
    nets = build_networks(config, blob["vocab_size"])
    for name in REQUIRED_NETWORKS:
        getattr(nets, name).load_state_dict(blob["networks"][name])
    return nets, config


def train(config: TrainConfig, resume: str | None = None) -> dict:
    """Full run: matching pretraining, adversarial loop, checkpoints, metrics.

    Returns paths of the final checkpoint and the metrics CSV."""
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_np, masks_np, token_lists = _load_training_data(config)
    n = images_np.shape[0]
    images = torch.from_numpy(images_np).permute(0, 3, 1, 2).float()
    masks = torch.from_numpy(masks_np).float()

    g_data = torch.Generator().manual_seed(config.seed * 1000 + 1)
    g_noise = torch.Generator().manual_seed(config.seed * 1000 + 2)
    g_pretrain = torch.Generator().manual_seed(config.seed * 1000 + 3)

    if resume is not None:
        blob = load_checkpoint(resume)
        if blob["config_hash"] != config.hash():
            raise ConfigMismatchError(
                "refusing to resume: checkpoint was written with a different config "
                f"(hash {blob['config_hash']} != {config.hash()})"
            )
        nets, _ = restore_networks(blob)
        opt_d, opt_g = _optimizers(nets, config)
        opt_d.load_state_dict(blob["optimizers"]["opt_d"])
        opt_g.load_state_dict(blob["optimizers"]["opt_g"])
        torch.set_rng_state(blob["rng"]["torch"])
        g_data.set_state(blob["rng"]["g_data"])
        g_noise.set_state(blob["rng"]["g_noise"])
        start_iteration = blob["iteration"]
        metrics_mode = "a"
    else:
        _, manifest = load_dataset(config.dataset_root, "train")
        vocab_size = len(manifest.attribute_names)
        nets = build_networks(config, vocab_size)
        pretrain_matching(
            nets.attr_encoder,
            nets.region_encoder,
            images_np,
            _labels_from_tokens(token_lists, vocab_size),
            iterations=config.pretrain_iterations,
            batch_size=config.batch_size,
            lr=config.pretrain_lr,
            generator=g_pretrain,
        )
        opt_d, opt_g = _optimizers(nets, config)
        start_iteration = 0
        metrics_mode = "w"
    for p in nets.attr_encoder.parameters():
        p.requires_grad_(False)
    for p in nets.region_encoder.parameters():
        p.requires_grad_(False)

    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "checkpoint.pt"
    with open(metrics_path, metrics_mode) as metrics:
        if metrics_mode == "w":
            metrics.write("iteration,term,value\n")
        for iteration in range(start_iteration + 1, config.iterations + 1):
            idx = torch.randperm(n, generator=g_data)[: config.batch_size]
            report = train_step(
                nets,
                opt_d,
                opt_g,
                images[idx],
                masks[idx],
                [token_lists[i] for i in idx],
                config,
                g_noise,
            )
            for it, term, value in report.rows(iteration):
                metrics.write(f"{it},{term},{value:.8g}\n")
            if iteration % config.checkpoint_interval == 0 or iteration == config.iterations:
                rng_states = {
                    "torch": torch.get_rng_state(),
                    "g_data": g_data.get_state(),
                    "g_noise": g_noise.get_state(),
                }
                save_checkpoint(ckpt_path, nets, opt_d, opt_g, iteration, config, rng_states)
                _emit_sample_grid(nets, images, masks, token_lists, config, out_dir, iteration)
    return {"checkpoint": str(ckpt_path), "metrics": str(metrics_path)}


def _labels_from_tokens(token_lists: list[list[int]], vocab_size: int) -> np.ndarray:
    labels = np.zeros((len(token_lists), vocab_size), dtype=np.int8)
    for i, ids in enumerate(token_lists):
        labels[i, ids] = 1
    return labels


def _emit_sample_grid(nets, images, masks, token_lists, config, out_dir, iteration) -> None:
    n_grid = min(16, images.shape[0])
    rows = 4 if n_grid == 16 else 2
    cols = n_grid // rows
    n_grid = rows * cols
    imgs = generate_images(
        nets,
        config,
        [token_lists[i] for i in range(n_grid)],
        masks[:n_grid].numpy(),
        z_seed=config.seed,
    )
    evalkit.emit_grid(imgs, rows, cols, out_dir / f"samples_{iteration:06d}.png")


def generate_images(
    nets: Networks,
    config: TrainConfig,
    token_lists: list[list[int]],
    masks_np: np.ndarray,
    z_seed: int = 0,
    batch_size: int = 32,
) -> np.ndarray:
    """Deterministic inference-mode generation; returns (N, 64, 64, 3) in [-1, 1]."""
    g_z = torch.Generator().manual_seed(z_seed)
    masks = torch.from_numpy(np.asarray(masks_np)).float()
    nets.generator.eval()
    nets.mask_encoder.eval()
    nets.attr_encoder.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(token_lists), batch_size):
            tok = token_lists[start : start + batch_size]
            m = masks[start : start + batch_size]
            global_vec, local, valid = nets.attr_encoder.encode_batch(tok)
            pyramid = nets.mask_encoder(m) if config.use_mask_module else None
            z = torch.randn(len(tok), config.z_dim, generator=g_z)
            outputs = nets.generator(z, global_vec, local, pyramid, valid, c_noise=None)
            out.append(outputs[-1].image.permute(0, 2, 3, 1).numpy())
    nets.generator.train()
    nets.mask_encoder.train()
    return np.concatenate(out, axis=0)


def generate_from_checkpoint(ckpt_path, samples: list[Sample], z_seed: int = 0) -> np.ndarray:
    """Generate one image per (attribute, mask) pair of the given samples."""
    blob = load_checkpoint(ckpt_path)
    nets, config = restore_networks(blob)
    token_lists = [tokenize_attributes(s.attributes) for s in samples]
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    return generate_images(nets, config, token_lists, masks, z_seed=z_seed)
