"""DDPM core: noise schedule, forward noising, a small cross-attention UNet,
the fine-tuning step, and ancestral sampling.

The schedule stores float64 cumulative products; timesteps are 1-indexed
(t in [1, T]). Images travel as HxWxC float arrays in [0, 1]; the latent
codec bridges them to CxHxW tensors (identity codec = pure layout change).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import ConditioningSignal, null_conditioning, stack_signals
from .errors import DataError, NumericError
from .losses import KernelSpec, LossWeights, l_align, l_recon, l_train, mmd2


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep noise coefficients (betas, alphas, cumulative alpha_bar)."""

    betas: torch.Tensor  # float64, shape (T,), index t-1
    alphas: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def timesteps(self) -> int:
        return self.betas.shape[0]

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bar[t - 1])

    def _check(self, t) -> None:
        if not 1 <= int(t) <= self.timesteps:
            raise DataError(f"timestep {t} out of range [1, {self.timesteps}]")


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with 64-bit cumulative products."""
    if T < 1:
        raise DataError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DataError(f"invalid beta range ({beta_start}, {beta_end})")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bar=torch.cumprod(alphas, dim=0))


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward noising: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    `t` is a scalar in [1, T] or a batch of per-sample timesteps matching
    x0's leading dimension.
    """
    x0, eps = torch.as_tensor(x0), torch.as_tensor(eps)
    if x0.shape != eps.shape:
        raise DataError("x0 and eps must share a shape")
    if torch.is_tensor(t) and t.ndim > 0:
        for ti in t.tolist():
            sched._check(ti)
        ab = sched.alpha_bar[t.long() - 1].to(x0.dtype)
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    else:
        sched._check(int(t))
        ab = sched.alpha_bar[int(t) - 1].to(x0.dtype)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def recover_x0(x_t: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Invert q_sample given the true noise."""
    ab = torch.tensor(sched.alpha_bar_at(t), dtype=x_t.dtype)
    return (x_t - torch.sqrt(1.0 - ab) * eps) / torch.sqrt(ab)


class IdentityCodec:
    """Pixel-space codec: HxWxC array in [0,1] <-> CxHxW tensor, values unchanged."""

    def encode(self, image) -> torch.Tensor:
        arr = torch.as_tensor(np.asarray(image), dtype=torch.float32)
        if arr.ndim != 3:
            raise DataError("image must be HxWxC")
        return arr.permute(2, 0, 1)

    def decode(self, latent: torch.Tensor) -> np.ndarray:
        return latent.permute(1, 2, 0).detach().cpu().numpy()


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal embedding of (possibly batched) integer timesteps."""
    if dim % 2:
        raise DataError("timestep embedding dim must be even")
    half = dim // 2
    t = torch.as_tensor(t, dtype=torch.get_default_dtype()).reshape(-1)
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _groups(channels: int) -> int:
    return 4 if channels % 4 == 0 else 1


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention2d(nn.Module):
    """Single-head cross-attention from spatial positions to conditioning tokens.

    Masked (pad) tokens get -inf scores, hence exactly zero attention weight.
    """

    def __init__(self, channels: int, d_cond: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(d_cond, channels)
        self.v = nn.Linear(d_cond, channels)
        self.out = nn.Linear(channels, channels)
        self.scale = channels**-0.5

    def forward(self, x, tokens, mask):
        b, c, h, w = x.shape
        seq = self.norm(x).reshape(b, c, h * w).permute(0, 2, 1)  # (B, HW, C)
        q = self.q(seq)
        k = self.k(tokens)
        v = self.v(tokens)
        scores = torch.einsum("bqc,bkc->bqk", q, k) * self.scale
        scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = self.out(torch.einsum("bqk,bkc->bqc", attn, v))
        return x + out.permute(0, 2, 1).reshape(b, c, h, w)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)
        self.scale = channels**-0.5

    def forward(self, x):
        b, c, h, w = x.shape
        seq = self.norm(x).reshape(b, c, h * w).permute(0, 2, 1)
        q, k, v = self.qkv(seq).chunk(3, dim=-1)
        attn = torch.softmax(torch.einsum("bqc,bkc->bqk", q, k) * self.scale, dim=-1)
        out = self.out(torch.einsum("bqk,bkc->bqc", attn, v))
        return x + out.permute(0, 2, 1).reshape(b, c, h, w)


class Denoiser(nn.Module):
    """Small conditional UNet: 2 down / 2 up stages with cross-attention at the
    two coarsest resolutions and self-attention in the middle.

    The final conv is zero-initialized, so a fresh denoiser predicts zero noise.
    """

    def __init__(
        self,
        channels: int = 3,
        image_size: int = 32,
        base_width: int = 32,
        d_cond: int = 512,
        seed: Optional[int] = None,
    ):
        super().__init__()
        if image_size % 4:
            raise DataError("image_size must be divisible by 4")
        if base_width % 2:
            raise DataError("base_width must be even")
        self.channels, self.image_size, self.d_cond = channels, image_size, d_cond
        w, temb = base_width, 4 * base_width
        self.base_width = w
        self.temb_mlp = nn.Sequential(nn.Linear(w, temb), nn.SiLU(), nn.Linear(temb, temb))
        self.stem = nn.Conv2d(channels, w, 3, padding=1)
        self.res_down1 = ResBlock(w, w, temb)
        self.down1 = nn.Conv2d(w, w, 3, stride=2, padding=1)
        self.res_down2 = ResBlock(w, 2 * w, temb)
        self.attn_down2 = CrossAttention2d(2 * w, d_cond)
        self.down2 = nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1)
        self.res_mid1 = ResBlock(2 * w, 2 * w, temb)
        self.attn_mid_self = SelfAttention2d(2 * w)
        self.attn_mid_cross = CrossAttention2d(2 * w, d_cond)
        self.res_mid2 = ResBlock(2 * w, 2 * w, temb)
        self.up2 = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.res_up2 = ResBlock(4 * w, 2 * w, temb)
        self.attn_up2 = CrossAttention2d(2 * w, d_cond)
        self.up1 = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.res_up1 = ResBlock(3 * w, w, temb)
        self.out_norm = nn.GroupNorm(_groups(w), w)
        self.out_conv = nn.Conv2d(w, channels, 3, padding=1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: Optional[int] = None) -> None:
        g = None
        if seed is not None:
            g = torch.Generator()
            g.manual_seed(seed)
        for mod in self.modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                bound = 1.0 / mod.weight[0].numel() ** 0.5
                mod.weight.data.uniform_(-bound, bound, generator=g)
                if mod.bias is not None:
                    mod.bias.data.zero_()
            elif isinstance(mod, nn.GroupNorm):
                mod.weight.data.fill_(1.0)
                mod.bias.data.zero_()
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x_t, t, tokens, mask) -> torch.Tensor:
        x = torch.as_tensor(x_t)
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != self.channels:
            raise DataError(f"expected {self.channels} channels, got {x.shape[1]}")
        if tokens.ndim == 2:
            tokens, mask = tokens.unsqueeze(0), mask.unsqueeze(0)
        if tokens.shape[0] != x.shape[0]:
            tokens = tokens.expand(x.shape[0], -1, -1)
            mask = mask.expand(x.shape[0], -1)
        if tokens.shape[-1] != self.d_cond:
            raise DataError(f"conditioning width {tokens.shape[-1]} != d_cond={self.d_cond}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1 and x.shape[0] > 1:
            t = t.expand(x.shape[0])
        temb = self.temb_mlp(timestep_embedding(t, self.base_width).to(x.dtype))

        h = self.stem(x)
        s1 = self.res_down1(h, temb)
        h = self.down1(s1)
        s2 = self.attn_down2(self.res_down2(h, temb), tokens, mask)
        h = self.down2(s2)
        h = self.res_mid1(h, temb)
        h = self.attn_mid_cross(self.attn_mid_self(h), tokens, mask)
        h = self.res_mid2(h, temb)
        h = self.up2(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.attn_up2(self.res_up2(torch.cat([h, s2], dim=1), temb), tokens, mask)
        h = self.up1(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.res_up1(torch.cat([h, s1], dim=1), temb)
        out = self.out_conv(F.silu(self.out_norm(h)))
        return out[0] if squeeze else out


def denoiser_forward(x_t, t, cond: ConditioningSignal, params: Denoiser) -> torch.Tensor:
    """Predict the added noise for one latent under one conditioning signal."""
    return params(x_t, t, cond.tokens, cond.mask)


def sample(
    denoiser: Denoiser,
    cond: ConditioningSignal,
    sched: NoiseSchedule,
    seed: int = 0,
    codec: Optional[IdentityCodec] = None,
    shape: Optional[tuple] = None,
) -> np.ndarray:
    """DDPM ancestral sampling from seeded Gaussian noise; returns an HxWxC
    image clamped to [0, 1]."""
    codec = codec or IdentityCodec()
    shape = shape or (denoiser.channels, denoiser.image_size, denoiser.image_size)
    g = torch.Generator()
    g.manual_seed(seed)
    x = torch.randn(shape, generator=g)
    with torch.no_grad():
        for t in range(sched.timesteps, 0, -1):
            eps_hat = denoiser(x, torch.tensor([t]), cond.tokens, cond.mask)
            beta = sched.beta(t)
            ab = sched.alpha_bar_at(t)
            alpha = 1.0 - beta
            x = (x - (beta / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(alpha)
            if t > 1:
                x = x + math.sqrt(beta) * torch.randn(shape, generator=g)
    image = torch.as_tensor(codec.decode(x))
    return image.clamp(0.0, 1.0).numpy()


def sample_unconditional(
    denoiser: Denoiser, n_max: int, sched: NoiseSchedule, seed: int = 0, codec=None
) -> np.ndarray:
    """Baseline sampling with the null (all-zero, single-token) signal."""
    return sample(denoiser, null_conditioning(n_max, denoiser.d_cond), sched, seed, codec)


def noise_prediction_mse(
    denoiser: Denoiser,
    images: Sequence,
    signals: Sequence[ConditioningSignal],
    sched: NoiseSchedule,
    seed: int = 0,
    n_draws: int = 16,
    codec: Optional[IdentityCodec] = None,
) -> float:
    """Average eps-prediction MSE over seeded (t, eps) draws per image.

    The draws depend only on (seed, image index, draw index), so matched and
    swapped conditioning signals are scored on identical noise instances.
    """
    if len(images) != len(signals):
        raise DataError("images and signals must align")
    codec = codec or IdentityCodec()
    total = 0.0
    with torch.no_grad():
        for i, (image, sig) in enumerate(zip(images, signals)):
            x0 = codec.encode(image)
            for k in range(n_draws):
                g = torch.Generator()
                g.manual_seed((seed * 1_000_003 + i * 1009 + k) % (2**63))
                t = int(torch.randint(1, sched.timesteps + 1, (1,), generator=g))
                eps = torch.randn(x0.shape, generator=g)
                eps_hat = denoiser(q_sample(x0, t, eps, sched), t, sig.tokens, sig.mask)
                total += float(((eps - eps_hat) ** 2).mean())
    return total / (len(images) * n_draws)


class DiffusionTrainer:
    """Joint fine-tuning of denoiser, graph encoder, and conditioning projections.

    Each step draws per-sample timesteps and noise from its seed, computes the
    combined loss (reconstruction + weighted alignment), applies one Adam
    update, and returns the pre-update loss breakdown.
    """

    def __init__(
        self,
        encoder,
        denoiser: Denoiser,
        conditioner,
        provider,
        vocab,
        sched: NoiseSchedule,
        weights: LossWeights = LossWeights(),
        kernel: KernelSpec = KernelSpec(),
        lr: float = 1e-4,
        codec: Optional[IdentityCodec] = None,
        train_encoder: bool = True,
    ):
        if encoder.d_global != provider.image_dim:
            raise DataError(
                f"encoder width {encoder.d_global} != provider.image_dim {provider.image_dim}"
            )
        if conditioner.d_cond != denoiser.d_cond:
            raise DataError("conditioner and denoiser disagree on d_cond")
        self.encoder = encoder
        self.denoiser = denoiser
        self.conditioner = conditioner
        self.provider = provider
        self.vocab = vocab
        self.sched = sched
        self.weights = weights
        self.kernel = kernel
        self.codec = codec or IdentityCodec()
        self.train_encoder = train_encoder
        params = list(denoiser.parameters()) + list(conditioner.parameters())
        if train_encoder:
            params += list(encoder.parameters())
        self.opt = torch.optim.Adam(params, lr=lr)

    def signal_for(self, graph) -> ConditioningSignal:
        return self.conditioner(self.encoder(graph), graph.labels(self.vocab))

    def step(self, pairs, seed: int) -> dict:
        if not isinstance(pairs, (list, tuple)):
            pairs = [pairs]
        g = torch.Generator()
        g.manual_seed(seed)
        x0 = torch.stack([self.codec.encode(p.image) for p in pairs])
        t = torch.randint(1, self.sched.timesteps + 1, (len(pairs),), generator=g)
        eps = torch.randn(x0.shape, generator=g)
        x_t = q_sample(x0, t, eps, self.sched)

        if self.train_encoder:
            g_embs = torch.stack([self.encoder(p.graph) for p in pairs])
        else:
            with torch.no_grad():
                g_embs = torch.stack([self.encoder(p.graph) for p in pairs])
        signals = [
            self.conditioner(g_embs[i], p.graph.labels(self.vocab))
            for i, p in enumerate(pairs)
        ]
        tokens, mask = stack_signals(signals)
        eps_hat = self.denoiser(x_t, t, tokens, mask)

        c = torch.stack([self.provider.embed_image(p.image) for p in pairs])
        loss_recon = l_recon(eps, eps_hat)
        loss_clip = ((g_embs - c) ** 2).mean()
        loss_mmd = mmd2(g_embs, c, self.kernel)
        loss_align = l_align(loss_clip, loss_mmd, self.weights.beta)
        loss_total = l_train(loss_recon, loss_align, self.weights.lam)
        if not torch.isfinite(loss_total):
            raise NumericError("non-finite training loss")

        self.opt.zero_grad()
        loss_total.backward()
        self.opt.step()
        return {
            "l_recon": float(loss_recon),
            "l_clip": float(loss_clip),
            "l_mmd": float(loss_mmd),
            "l_align": float(loss_align),
            "l_train": float(loss_total),
        }
