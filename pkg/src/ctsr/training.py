"""Losses and training loops for every network/dimensionality combination,
including the relativistic-average adversarial setup for the GAN family."""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .models import NetworkSpec, build_discriminator, build_network, save_checkpoint
from .pipeline import collect_patches
from .volume import PatchPair

HISTORY_COLUMNS = ("step", "pixel", "perceptual", "adversarial_g", "adversarial_d", "total", "validation_psnr")


@dataclass
class TrainConfig:
    """Optimization settings. The paper-facing defaults: Adam(1e-4, 0.9/0.999),
    ESRGAN loss weights (pixel 1e-2, perceptual 1.0, adversarial 5e-3)."""

    batch_size: int = 8
    steps: int = 1000
    learning_rate: float = 1e-4
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 0.0, 0.0)  # (pixel, perceptual, adversarial)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0: final checkpoint only
    validation_fraction: float = 0.0
    pixel_loss_kind: str | None = None  # None: l2 for srcnn, l1 otherwise
    gan_warmup_fraction: float = 0.2

    def __post_init__(self):
        if any(w < 0 for w in self.loss_weights):
            raise ValueError(f"loss weights must be >= 0, got {self.loss_weights}")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Frozen feature extractor for the perceptual loss.

    The tap point is pre-activation. 'fixed_random_conv' is the shipped
    default (seeded 4-layer conv stack); 'external_pretrained' is a plug-in
    point, supply your own frozen module to perceptual_loss.
    """

    kind: str = "fixed_random_conv"
    tap_point: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed_random_conv", "external_pretrained", "identity"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")


class RandomConvFeatures(nn.Module):
    """Seeded random conv stack returning the pre-activation tap feature."""

    def __init__(self, tap_point: int, seed: int, in_channels: int = 1, width: int = 32, depth: int = 4):
        super().__init__()
        if not 0 <= tap_point < depth:
            raise ValueError(f"tap_point must be in [0, {depth}), got {tap_point}")
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = in_channels
        for _ in range(depth):
            conv = nn.Conv2d(cin, width, 3, padding=1)
            with torch.no_grad():
                conv.weight.normal_(0.0, (2.0 / (cin * 9)) ** 0.5, generator=gen)
                conv.bias.zero_()
            convs.append(conv)
            cin = width
        self.convs = nn.ModuleList(convs)
        self.tap_point = tap_point

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i == self.tap_point:
                return x
            x = F.leaky_relu(x, 0.2)
        return x


def build_feature_extractor(fspec: FeatureExtractorSpec, in_channels: int = 1) -> nn.Module:
    if fspec.kind == "identity":
        mod = nn.Identity()
    elif fspec.kind == "fixed_random_conv":
        mod = RandomConvFeatures(fspec.tap_point, fspec.seed, in_channels=in_channels)
    else:
        raise ValueError("external_pretrained is a plug-in point: build and freeze "
                         "your own extractor module and pass it to perceptual_loss")
    mod.requires_grad_(False)
    mod.eval()
    return mod


def pixel_loss(pred, target, kind: str = "l1") -> torch.Tensor:
    """Mean absolute (l1) or mean squared (l2) difference over all elements."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    kind = kind.lower()
    if kind == "l1":
        return (pred - target).abs().mean()
    if kind == "l2":
        return ((pred - target) ** 2).mean()
    raise ValueError(f"kind must be 'l1' or 'l2', got {kind!r}")


def ragan_losses(real_logits, fake_logits) -> tuple[torch.Tensor, torch.Tensor]:
    """Relativistic-average GAN losses from raw discriminator logits.

    Each logit is scored against the mean logit of the opposite class;
    log-sigmoid evaluation keeps both losses finite for |logit| up to ~1e2.
    """
    real = torch.as_tensor(real_logits, dtype=torch.float32) if not torch.is_tensor(real_logits) else real_logits
    fake = torch.as_tensor(fake_logits, dtype=torch.float32) if not torch.is_tensor(fake_logits) else fake_logits
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("logit vectors must be non-empty")
    rel_real = real - fake.mean()
    rel_fake = fake - real.mean()
    d_loss = -(F.logsigmoid(rel_real).mean() + F.logsigmoid(-rel_fake).mean())
    g_loss = -(F.logsigmoid(-rel_real).mean() + F.logsigmoid(rel_fake).mean())
    return d_loss, g_loss


def perceptual_loss(pred, target, extractor) -> torch.Tensor:
    """MSE between pre-activation feature maps of a frozen extractor."""
    if isinstance(extractor, FeatureExtractorSpec):
        extractor = build_feature_extractor(extractor, in_channels=pred.shape[1])
    for p in extractor.parameters():
        if p.requires_grad:
            raise ValueError("perceptual extractor must be frozen (requires_grad=False)")
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((extractor(pred) - extractor(target)) ** 2).mean()


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good state."""

    def __init__(self, step: int, state_dict, checkpoint_path=None):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint restored")
        self.step = step
        self.state_dict = state_dict
        self.checkpoint_path = checkpoint_path


def _patch_tensors(patches: list[PatchPair], spec: NetworkSpec) -> tuple[torch.Tensor, torch.Tensor]:
    if spec.dimensionality == "3d":
        x = torch.stack([torch.from_numpy(np.ascontiguousarray(p.input_window))[None] for p in patches])
        y = torch.stack([torch.from_numpy(np.ascontiguousarray(p.target))[None] for p in patches])
    else:
        x = torch.stack([torch.from_numpy(np.ascontiguousarray(p.input_window)) for p in patches])
        y = torch.stack([torch.from_numpy(np.ascontiguousarray(p.target)) for p in patches])
    return x.float(), y.float()


def _default_pixel_kind(spec: NetworkSpec) -> str:
    return "l2" if spec.family == "srcnn" else "l1"


def train_patches(
    spec: NetworkSpec,
    patches: list[PatchPair],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    extractor: nn.Module | FeatureExtractorSpec | None = None,
) -> tuple[nn.Module, list[dict]]:
    """Run the seeded optimization loop over pre-extracted patches.

    Returns the trained network and the loss history (one row per step).
    Checkpoints and the history CSV are written when out_dir is given.
    """
    if spec.family != "esrgan" and (cfg.loss_weights[1] > 0 or cfg.loss_weights[2] > 0):
        raise ValueError(f"{spec.family} trains with pixel loss only; perceptual/adversarial weights must be 0")
    if not patches:
        raise ValueError("no training patches")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = build_network(spec, init_seed=cfg.seed)
    x_all, y_all = _patch_tensors(patches, spec)

    n = len(patches)
    perm = rng.permutation(n)
    n_val = int(round(cfg.validation_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training patches")

    pixel_kind = cfg.pixel_loss_kind or _default_pixel_kind(spec)
    w_pix, w_perc, w_adv = cfg.loss_weights
    adversarial = spec.family == "esrgan" and w_adv > 0
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    disc = opt_d = None
    if adversarial:
        disc = build_discriminator(spec, init_seed=cfg.seed + 1)
        opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    if w_perc > 0:
        if extractor is None:
            extractor = FeatureExtractorSpec(seed=cfg.seed)
        if isinstance(extractor, FeatureExtractorSpec):
            extractor = build_feature_extractor(extractor, in_channels=1)

    out_dir = Path(out_dir) if out_dir is not None else None
    warmup_steps = int(cfg.gan_warmup_fraction * cfg.steps) if adversarial else 0

    def validation_psnr() -> float | None:
        if len(val_idx) == 0:
            return None
        net.eval()
        with torch.no_grad():
            mses = []
            for i in val_idx:
                pred = net(x_all[i:i + 1])
                mses.append(float(((pred - y_all[i:i + 1]) ** 2).mean()))
        net.train()
        mse = float(np.mean(mses))
        return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)

    history: list[dict] = []
    last_good = copy.deepcopy(net.state_dict())
    last_good_step = 0
    order = rng.permutation(train_idx)
    cursor = 0
    net.train()

    for step in range(cfg.steps):
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(train_idx)
            cursor = 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        xb, yb = x_all[idx], y_all[idx]

        row = {"step": step, "pixel": 0.0, "perceptual": 0.0,
               "adversarial_g": 0.0, "adversarial_d": 0.0, "total": 0.0,
               "validation_psnr": None}

        if adversarial and step >= warmup_steps:
            with torch.no_grad():
                fake = net(xb)
            opt_d.zero_grad()
            d_loss, _ = ragan_losses(disc(yb), disc(fake))
            d_loss.backward()
            opt_d.step()
            row["adversarial_d"] = float(d_loss.detach())

        opt.zero_grad()
        pred = net(xb)
        loss_pix = pixel_loss(pred, yb, pixel_kind)
        total = w_pix * loss_pix
        row["pixel"] = float(loss_pix.detach())
        if adversarial and step >= warmup_steps:
            if w_perc > 0:
                loss_perc = perceptual_loss(pred, yb, extractor)
                total = total + w_perc * loss_perc
                row["perceptual"] = float(loss_perc.detach())
            with torch.no_grad():
                real_logits = disc(yb)
            _, g_loss = ragan_losses(real_logits, disc(pred))
            total = total + w_adv * g_loss
            row["adversarial_g"] = float(g_loss.detach())
        row["total"] = float(total.detach())

        if not np.isfinite(row["total"]):
            net.load_state_dict(last_good)
            ckpt = None
            if out_dir is not None:
                ckpt = save_checkpoint(net, out_dir / "checkpoint_last_good.ckpt",
                                       extra={"step": last_good_step, "diverged_at": step})
                _write_history(history, out_dir / "loss_history.csv")
            raise TrainingDiverged(step, last_good, ckpt)

        total.backward()
        opt.step()
        history.append(row)

        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            row["validation_psnr"] = validation_psnr()
            last_good = copy.deepcopy(net.state_dict())
            last_good_step = step + 1
            if out_dir is not None:
                save_checkpoint(net, out_dir / f"checkpoint_{step + 1:06d}.ckpt", extra={"step": step + 1})

    if history:
        history[-1]["validation_psnr"] = validation_psnr()
    net.eval()
    if out_dir is not None:
        save_checkpoint(net, out_dir / "checkpoint_final.ckpt", extra={"step": cfg.steps})
        _write_history(history, out_dir / "loss_history.csv")
    return net, history


def train(spec: NetworkSpec, manifest, cfg: TrainConfig, out_dir: str | Path,
          hr_patch: int = 128, stride: int = 64) -> tuple[Path, list[dict]]:
    """Train on a dataset manifest's train split; returns (checkpoint path, history)."""
    patches = collect_patches(manifest, spec, split="train", hr_patch=hr_patch, stride=stride)
    out_dir = Path(out_dir)
    train_patches(spec, patches, cfg, out_dir=out_dir)
    return out_dir / "checkpoint_final.ckpt", _read_history(out_dir / "loss_history.csv")


def _write_history(history: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow(["" if row[c] is None else row[c] for c in HISTORY_COLUMNS])
    return path


def _read_history(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if val == "" or val is None:
                    row[key] = None
                elif key == "step":
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows
