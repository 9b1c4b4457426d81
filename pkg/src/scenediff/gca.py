"""GAN-based alignment pre-training: the graph encoder acts as generator and a
5-layer MLP discriminator separates encoder outputs from image embeddings.

Discriminator stack: Linear(in,256) -> BatchNorm -> LeakyReLU(0.2) ->
Dropout(0.3) -> Linear(256,128) -> BatchNorm -> LeakyReLU(0.2) -> Dropout(0.3)
-> Linear(128,1) -> Sigmoid. Real and fake batches take separate forward
passes so batch statistics never mix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError, NumericError
from .losses import KernelSpec, mmd2

PROB_EPS = 1e-7


class _BatchNorm1d(nn.Module):
    """Batch norm with explicit train/eval control and batch-size-1 tolerance.

    Normalizes with biased batch statistics in train mode (batch of one
    yields zero variance) and with running averages in eval mode.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x: torch.Tensor, train: bool) -> torch.Tensor:
        if train:
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            with torch.no_grad():
                m = self.momentum
                self.running_mean.mul_(1 - m).add_(m * mean.to(self.running_mean.dtype))
                self.running_var.mul_(1 - m).add_(m * var.to(self.running_var.dtype))
        else:
            mean, var = self.running_mean.to(x.dtype), self.running_var.to(x.dtype)
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


def _dropout(x: torch.Tensor, p: float, train: bool, generator) -> torch.Tensor:
    if not train or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class Discriminator(nn.Module):
    """Probability that an embedding comes from the image-embedding distribution."""

    def __init__(self, in_dim: int = 512, dropout: float = 0.3, leaky_slope: float = 0.2):
        super().__init__()
        self.in_dim = in_dim
        self.dropout = dropout
        self.leaky_slope = leaky_slope
        self.lin1 = nn.Linear(in_dim, 256)
        self.bn1 = _BatchNorm1d(256)
        self.lin2 = nn.Linear(256, 128)
        self.bn2 = _BatchNorm1d(128)
        self.lin3 = nn.Linear(128, 1)

    def forward(
        self, v: torch.Tensor, train: bool = False, generator: Optional[torch.Generator] = None
    ) -> torch.Tensor:
        x = torch.as_tensor(v)
        squeeze = x.ndim == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.in_dim:
            raise DataError(f"discriminator expects width {self.in_dim}, got {x.shape[-1]}")
        x = _dropout(
            F.leaky_relu(self.bn1(self.lin1(x), train), self.leaky_slope),
            self.dropout, train, generator,
        )
        x = _dropout(
            F.leaky_relu(self.bn2(self.lin2(x), train), self.leaky_slope),
            self.dropout, train, generator,
        )
        p = torch.sigmoid(self.lin3(x)).squeeze(-1)
        return p[0] if squeeze else p


def discriminator_forward(v, params: Discriminator, mode: str = "eval", seed: int = 0):
    """Functional wrapper: eval mode is deterministic, train mode uses seeded dropout."""
    if mode not in ("train", "eval"):
        raise DataError(f"mode must be train|eval, got {mode!r}")
    g = torch.Generator()
    g.manual_seed(seed)
    return params(v, train=mode == "train", generator=g)


def clamp_probs(p: torch.Tensor) -> torch.Tensor:
    """Numerical guard applied before the log losses."""
    return torch.as_tensor(p).clamp(PROB_EPS, 1.0 - PROB_EPS)


def _check_probs(p: torch.Tensor, name: str) -> torch.Tensor:
    t = torch.as_tensor(p, dtype=torch.get_default_dtype() if not torch.is_tensor(p) else None)
    t = t.reshape(-1)
    if t.numel() == 0:
        raise DataError(f"{name} must be nonempty")
    if bool((t <= 0).any()) or bool((t >= 1).any()):
        raise DataError(f"{name} must lie strictly in (0,1); clamp upstream")
    return t


def generator_loss(fake_probs) -> torch.Tensor:
    """Mean of -log p over discriminator outputs for generated embeddings."""
    return -torch.log(_check_probs(fake_probs, "fake_probs")).mean()


def discriminator_loss(real_probs, fake_probs) -> torch.Tensor:
    """-mean(log real) - mean(log(1 - fake))."""
    real = _check_probs(real_probs, "real_probs")
    fake = _check_probs(fake_probs, "fake_probs")
    return -torch.log(real).mean() - torch.log(1.0 - fake).mean()


@dataclass
class GcaTrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    disc_steps: int = 1
    gen_steps: int = 1
    seed: int = 0
    val_fraction: float = 0.25
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.disc_steps < 1:
            raise DataError("disc_steps must be >= 1")
        if self.gen_steps < 0:
            raise DataError("gen_steps must be >= 0")


def _heldout_mmd2(encoder, graphs, image_embs, kernel: KernelSpec) -> float:
    with torch.no_grad():
        fake = torch.stack([encoder(g) for g in graphs])
    return float(mmd2(fake, image_embs, kernel))


def train_gca(
    pairs: Sequence,
    encoder,
    disc: Discriminator,
    provider,
    cfg: GcaTrainConfig,
    val_pairs: Optional[Sequence] = None,
) -> list[dict]:
    """Alternating GAN updates; returns per-epoch history (epoch 0 = pre-training).

    Trains `encoder` and `disc` in place. History records mean discriminator
    and generator losses plus held-out MMD^2 between encoder outputs and image
    embeddings.
    """
    if provider.image_dim != disc.in_dim:
        raise DataError(
            f"provider.image_dim={provider.image_dim} != discriminator in_dim={disc.in_dim}"
        )
    if encoder.d_global != disc.in_dim:
        raise DataError(
            f"encoder width {encoder.d_global} != discriminator in_dim={disc.in_dim}"
        )
    pairs = list(pairs)
    if val_pairs is None:
        n_val = max(1, int(round(len(pairs) * cfg.val_fraction)))
        if n_val >= len(pairs):
            raise DataError("not enough pairs to hold out a validation split")
        val_pairs, pairs = pairs[-n_val:], pairs[:-n_val]
    else:
        val_pairs = list(val_pairs)

    real = torch.stack([provider.embed_image(p.image) for p in pairs])
    val_real = torch.stack([provider.embed_image(p.image) for p in val_pairs])
    graphs = [p.graph for p in pairs]
    val_graphs = [p.graph for p in val_pairs]

    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_disc)
    opt_g = torch.optim.Adam(encoder.parameters(), lr=cfg.lr_gen)
    rng = torch.Generator()
    rng.manual_seed(cfg.seed)

    history = [
        {
            "epoch": 0,
            "disc_loss": None,
            "gen_loss": None,
            "val_mmd2": _heldout_mmd2(encoder, val_graphs, val_real, cfg.kernel),
        }
    ]
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(len(pairs), generator=rng).tolist()
        d_losses, g_losses = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            real_batch = real[idx]
            batch_graphs = [graphs[i] for i in idx]
            for _ in range(cfg.disc_steps):
                with torch.no_grad():
                    fake = torch.stack([encoder(g) for g in batch_graphs])
                real_p = clamp_probs(disc(real_batch, train=True, generator=rng))
                fake_p = clamp_probs(disc(fake, train=True, generator=rng))
                loss_d = discriminator_loss(real_p, fake_p)
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()
                d_losses.append(float(loss_d))
            for _ in range(cfg.gen_steps):
                fake = torch.stack([encoder(g) for g in batch_graphs])
                fake_p = clamp_probs(disc(fake, train=True, generator=rng))
                loss_g = generator_loss(fake_p)
                opt_g.zero_grad()
                loss_g.backward()
                opt_g.step()
                g_losses.append(float(loss_g))
        record = {
            "epoch": epoch,
            "disc_loss": sum(d_losses) / len(d_losses) if d_losses else None,
            "gen_loss": sum(g_losses) / len(g_losses) if g_losses else None,
            "val_mmd2": _heldout_mmd2(encoder, val_graphs, val_real, cfg.kernel),
        }
        for key in ("disc_loss", "gen_loss", "val_mmd2"):
            if record[key] is not None and not torch.isfinite(torch.tensor(record[key])):
                raise NumericError(f"non-finite {key} at epoch {epoch}")
        history.append(record)
    return history
