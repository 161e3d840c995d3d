"""GAN-based image enhancement: paired and unpaired training, tiled inference.

The generator is a small U-Net trained from scratch. Paired training follows
the conditional-GAN recipe: a patch discriminator judges (input, output)
pairs with a BCE adversarial term, plus a weighted L1 term to the clean
target. Unpaired training uses two generators and two unconditional patch
discriminators with least-squares adversarial losses and an L1
cycle-consistency term.

Networks operate on [-1, 1] tensors internally; the public API speaks
[0, 1] float32 numpy images and preserves input dimensions, tiling large
images with feathered overlap blending.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Sequence

import cv2
import numpy as np
import torch
from torch import nn

from .checkpoints import load_payload, save_payload
from .degrade import check_image
from .seeding import derive_seed, rng_for
from .types import ValidationError

CHECKPOINT_KIND = "eggdetect-enhancer"

# patch discriminators downsample twice, then apply two stride-1 convs
MIN_TRAIN_SIZE = 16


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: int = 64
    depth: int = 3
    base_channels: int = 32
    skip_connections: bool = True

    def validate(self) -> None:
        if self.input_size < 2 or self.input_size & (self.input_size - 1):
            raise ValidationError(f"input_size {self.input_size} is not a power of two")
        if self.depth < 1:
            raise ValidationError("depth must be >= 1")
        if self.input_size % (1 << self.depth):
            raise ValidationError(
                f"input_size {self.input_size} not divisible by 2^{self.depth}"
            )
        if self.base_channels < 1:
            raise ValidationError("base_channels must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    adversarial_weight: float = 1.0
    reconstruction_weight: float = 100.0
    cycle_weight: float = 10.0

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"{name} must be >= 0")


def _channels(cfg: GeneratorConfig, level: int) -> int:
    return min(cfg.base_channels * (1 << level), 8 * cfg.base_channels)


class UNetGenerator(nn.Module):
    """Encoder-decoder with optional skip connections and a tanh output."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        downs = []
        in_ch = 3
        for level in range(cfg.depth):
            out_ch = _channels(cfg, level)
            block: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 4, 2, 1)]
            if level > 0:
                block.append(nn.InstanceNorm2d(out_ch, affine=True))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            downs.append(nn.Sequential(*block))
            in_ch = out_ch
        self.downs = nn.ModuleList(downs)

        ups = []
        for level in reversed(range(cfg.depth)):
            if cfg.skip_connections and level < cfg.depth - 1:
                in_ch += _channels(cfg, level)
            out_ch = _channels(cfg, level - 1) if level > 0 else cfg.base_channels
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(in_ch, out_ch, 4, 2, 1),
                    nn.InstanceNorm2d(out_ch, affine=True),
                    nn.ReLU(inplace=True),
                )
            )
            in_ch = out_ch
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(cfg.base_channels, 3, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        out = x
        for down in self.downs:
            out = down(out)
            skips.append(out)
        skips.pop()  # the bottleneck feeds the decoder directly
        for up in self.ups:
            out = up(out)
            if self.cfg.skip_connections and skips:
                out = torch.cat([out, skips.pop()], dim=1)
        return torch.tanh(self.head(out))


class PatchDiscriminator(nn.Module):
    """Small conv stack emitting a grid of real/fake logits per patch."""

    def __init__(self, in_channels: int = 6, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, c, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, 2, 1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, 1, 1),
            nn.InstanceNorm2d(4 * c, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * c, 1, 4, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


@dataclass
class EnhancerModel:
    generator: UNetGenerator
    config: GeneratorConfig
    training_meta: dict


def build_enhancer(config: GeneratorConfig | None = None, seed: int = 0) -> EnhancerModel:
    """Create a fresh enhancer with weights drawn from the given seed."""
    cfg = config or GeneratorConfig()
    cfg.validate()
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "enhancer-init"))
        generator = UNetGenerator(cfg)
    generator.eval()
    meta = {"epochs": 0, "seed": seed, "history": {}}
    return EnhancerModel(generator=generator, config=cfg, training_meta=meta)


def _clone(model: EnhancerModel) -> EnhancerModel:
    return EnhancerModel(
        generator=copy.deepcopy(model.generator),
        config=model.config,
        training_meta=copy.deepcopy(model.training_meta),
    )


def _merge_history(meta: dict, history: dict, epochs: int, seed: int, mode: str) -> None:
    old = meta.get("history", {})
    merged = dict(old)
    for key, values in history.items():
        merged[key] = list(old.get(key, [])) + list(values)
    meta["history"] = merged
    meta["epochs"] = meta.get("epochs", 0) + epochs
    meta["seed"] = seed
    meta["mode"] = mode


def _to_tensor(images: Sequence[np.ndarray], size: int) -> torch.Tensor:
    """Stack [0, 1] images into a [-1, 1] NCHW batch, resizing as needed."""
    arrs = []
    for image in images:
        img = check_image(image)
        if img.shape[:2] != (size, size):
            img = cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)
        arrs.append(img.transpose(2, 0, 1))
    batch = torch.from_numpy(np.stack(arrs).astype(np.float32))
    return batch * 2.0 - 1.0


def _from_tensor(batch: torch.Tensor) -> list[np.ndarray]:
    arr = ((batch.detach() + 1.0) / 2.0).clamp(0.0, 1.0).numpy()
    return [a.transpose(1, 2, 0).astype(np.float32) for a in arr]


def _check_trainable(model: EnhancerModel, epochs: int, n_samples: int) -> None:
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    if n_samples == 0:
        raise ValidationError("no training images given")
    if model.config.input_size < MIN_TRAIN_SIZE:
        raise ValidationError(
            f"input_size must be >= {MIN_TRAIN_SIZE} for adversarial training"
        )


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_paired(
    model: EnhancerModel,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    *,
    epochs: int,
    seed: int = 0,
    weights: LossWeights | None = None,
    batch_size: int = 8,
    learning_rate: float = 2e-4,
) -> EnhancerModel:
    """Train on (degraded, clean) pairs; returns a new model.

    The discriminator is conditional: it scores the degraded input
    concatenated with either the clean target or the generator output.
    """
    w = weights or LossWeights()
    w.validate()
    _check_trainable(model, epochs, len(pairs))
    out_model = _clone(model)
    history: dict[str, list[float]] = {"generator": [], "discriminator": [], "reconstruction": []}
    if epochs == 0:
        _merge_history(out_model.training_meta, history, 0, seed, "paired")
        return out_model

    size = model.config.input_size
    x_all = _to_tensor([p[0] for p in pairs], size)
    y_all = _to_tensor([p[1] for p in pairs], size)
    generator = out_model.generator
    generator.train()

    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "train-paired"))
        disc = PatchDiscriminator(in_channels=6, base_channels=model.config.base_channels)
        opt_g = torch.optim.Adam(generator.parameters(), lr=learning_rate, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(disc.parameters(), lr=learning_rate, betas=(0.5, 0.999))
        bce = nn.BCEWithLogitsLoss()
        l1 = nn.L1Loss()

        for epoch in range(epochs):
            sums = {"generator": 0.0, "discriminator": 0.0, "reconstruction": 0.0}
            batches = _batches(len(pairs), batch_size, rng_for(seed, "order", epoch))
            for idx in batches:
                x = x_all[idx]
                y = y_all[idx]
                fake = generator(x)

                opt_d.zero_grad()
                real_logits = disc(torch.cat([x, y], dim=1))
                fake_logits = disc(torch.cat([x, fake.detach()], dim=1))
                loss_d = 0.5 * (
                    bce(real_logits, torch.ones_like(real_logits))
                    + bce(fake_logits, torch.zeros_like(fake_logits))
                )
                loss_d.backward()
                opt_d.step()

                opt_g.zero_grad()
                adv_logits = disc(torch.cat([x, fake], dim=1))
                loss_adv = bce(adv_logits, torch.ones_like(adv_logits))
                loss_rec = l1(fake, y)
                loss_g = w.adversarial_weight * loss_adv + w.reconstruction_weight * loss_rec
                loss_g.backward()
                opt_g.step()

                sums["generator"] += float(loss_g.detach())
                sums["discriminator"] += float(loss_d.detach())
                sums["reconstruction"] += float(loss_rec.detach())
            for key in history:
                history[key].append(sums[key] / len(batches))

    generator.eval()
    _merge_history(out_model.training_meta, history, epochs, seed, "paired")
    return out_model


def train_unpaired(
    model: EnhancerModel,
    source_images: Sequence[np.ndarray],
    target_images: Sequence[np.ndarray],
    *,
    epochs: int,
    seed: int = 0,
    weights: LossWeights | None = None,
    batch_size: int = 8,
    learning_rate: float = 2e-4,
) -> EnhancerModel:
    """Train source -> target translation without paired supervision.

    Uses least-squares adversarial losses on both domains plus an L1
    cycle-consistency term. The returned model's generator maps the
    source domain to the target domain; the reverse generator and both
    discriminators are discarded after training.
    """
    w = weights or LossWeights()
    w.validate()
    _check_trainable(model, epochs, min(len(source_images), len(target_images)))
    out_model = _clone(model)
    history: dict[str, list[float]] = {"generator": [], "discriminator": [], "cycle": []}
    if epochs == 0:
        _merge_history(out_model.training_meta, history, 0, seed, "unpaired")
        return out_model

    size = model.config.input_size
    src_all = _to_tensor(source_images, size)
    tgt_all = _to_tensor(target_images, size)
    gen_fwd = out_model.generator
    gen_fwd.train()

    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "train-unpaired"))
        gen_rev = UNetGenerator(model.config)
        gen_rev.train()
        disc_tgt = PatchDiscriminator(in_channels=3, base_channels=model.config.base_channels)
        disc_src = PatchDiscriminator(in_channels=3, base_channels=model.config.base_channels)
        opt_g = torch.optim.Adam(
            list(gen_fwd.parameters()) + list(gen_rev.parameters()),
            lr=learning_rate,
            betas=(0.5, 0.999),
        )
        opt_d = torch.optim.Adam(
            list(disc_tgt.parameters()) + list(disc_src.parameters()),
            lr=learning_rate,
            betas=(0.5, 0.999),
        )
        mse = nn.MSELoss()
        l1 = nn.L1Loss()

        for epoch in range(epochs):
            sums = {"generator": 0.0, "discriminator": 0.0, "cycle": 0.0}
            src_batches = _batches(len(source_images), batch_size, rng_for(seed, "src", epoch))
            tgt_batches = _batches(len(target_images), batch_size, rng_for(seed, "tgt", epoch))
            n_steps = min(len(src_batches), len(tgt_batches))
            for step in range(n_steps):
                s = src_all[src_batches[step]]
                t = tgt_all[tgt_batches[step]]
                fake_t = gen_fwd(s)
                fake_s = gen_rev(t)

                opt_g.zero_grad()
                adv_fwd = disc_tgt(fake_t)
                adv_rev = disc_src(fake_s)
                loss_adv = mse(adv_fwd, torch.ones_like(adv_fwd)) + mse(
                    adv_rev, torch.ones_like(adv_rev)
                )
                loss_cycle = l1(gen_rev(fake_t), s) + l1(gen_fwd(fake_s), t)
                loss_g = w.adversarial_weight * loss_adv + w.cycle_weight * loss_cycle
                loss_g.backward()
                opt_g.step()

                opt_d.zero_grad()
                real_t = disc_tgt(t)
                fake_t_logits = disc_tgt(fake_t.detach())
                real_s = disc_src(s)
                fake_s_logits = disc_src(fake_s.detach())
                loss_d = 0.5 * (
                    mse(real_t, torch.ones_like(real_t))
                    + mse(fake_t_logits, torch.zeros_like(fake_t_logits))
                    + mse(real_s, torch.ones_like(real_s))
                    + mse(fake_s_logits, torch.zeros_like(fake_s_logits))
                )
                loss_d.backward()
                opt_d.step()

                sums["generator"] += float(loss_adv.detach())
                sums["discriminator"] += float(loss_d.detach())
                sums["cycle"] += float(loss_cycle.detach())
            for key in history:
                history[key].append(sums[key] / n_steps)

    gen_fwd.eval()
    _merge_history(out_model.training_meta, history, epochs, seed, "unpaired")
    return out_model


def _run_generator(generator: UNetGenerator, image: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        batch = torch.from_numpy(image.transpose(2, 0, 1)).unsqueeze(0) * 2.0 - 1.0
        out = generator(batch)
    return _from_tensor(out)[0]


def _tile_starts(dim: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, dim - size + 1, stride))
    if starts[-1] != dim - size:
        starts.append(dim - size)
    return starts


def _feather_window(size: int) -> np.ndarray:
    # triangular ramp peaking at the tile center, never zero at the edge
    ramp = 1.0 - np.abs(np.linspace(-1.0, 1.0, size, dtype=np.float64))
    ramp = np.maximum(ramp, 1.0 / size)
    return np.outer(ramp, ramp)[:, :, None]


def enhance(model: EnhancerModel, image: np.ndarray) -> np.ndarray:
    """Run the generator on an image of any size, preserving dimensions.

    Images matching the training resolution run in a single pass. Smaller
    images are mirror-padded up; larger ones are processed in overlapping
    tiles blended with a feathered window.
    """
    img = check_image(image)
    size = model.config.input_size
    h, w = img.shape[:2]
    generator = model.generator
    generator.eval()
    if (h, w) == (size, size):
        return _run_generator(generator, img)
    if h <= size and w <= size:
        padded = np.pad(img, ((0, size - h), (0, size - w), (0, 0)), mode="symmetric")
        return _run_generator(generator, padded)[:h, :w]

    ph, pw = max(h, size), max(w, size)
    work = img
    if (ph, pw) != (h, w):
        work = np.pad(img, ((0, ph - h), (0, pw - w), (0, 0)), mode="symmetric")
    stride = max(size // 2, 1)
    window = _feather_window(size)
    acc = np.zeros((ph, pw, 3), dtype=np.float64)
    wsum = np.zeros((ph, pw, 1), dtype=np.float64)
    for y0 in _tile_starts(ph, size, stride):
        for x0 in _tile_starts(pw, size, stride):
            tile = work[y0 : y0 + size, x0 : x0 + size]
            out = _run_generator(generator, np.ascontiguousarray(tile))
            acc[y0 : y0 + size, x0 : x0 + size] += out * window
            wsum[y0 : y0 + size, x0 : x0 + size] += window
    result = acc / wsum
    return np.clip(result[:h, :w], 0.0, 1.0).astype(np.float32)


def enhance_many(model: EnhancerModel, images: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Enhance a sequence of images; identical to calling enhance per image."""
    return [enhance(model, image) for image in images]


def save_enhancer(model: EnhancerModel, path) -> None:
    save_payload(
        path,
        CHECKPOINT_KIND,
        config=asdict(model.config),
        training_meta=model.training_meta,
        state=model.generator.state_dict(),
    )


def load_enhancer(path) -> EnhancerModel:
    payload = load_payload(path, kind=CHECKPOINT_KIND)
    cfg = GeneratorConfig(**payload["config"])
    cfg.validate()
    generator = UNetGenerator(cfg)
    generator.load_state_dict(payload["state"])
    generator.eval()
    return EnhancerModel(generator=generator, config=cfg, training_meta=payload["training_meta"])
