"""Training losses: noise reconstruction, embedding alignment MSE, kernel MMD,
and their weighted combinations.

All functions accept torch tensors (or anything ``torch.as_tensor`` handles)
and return 0-dim tensors, so they can sit directly in autograd graphs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import torch

from .errors import DataError


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: lam blends reconstruction vs alignment, beta blends
    alignment MSE vs MMD."""

    lam: float = 0.7
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DataError(f"lam must be in [0,1], got {self.lam}")
        if not 0.0 <= self.beta <= 1.0:
            raise DataError(f"beta must be in [0,1], got {self.beta}")


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel family phi(u,v) = exp(-||u-v||^2 / (2 sigma^2)).

    ``bandwidths`` is either an explicit tuple of sigmas or the string
    "median-heuristic" (sigma set so 2*sigma^2 equals the median pairwise
    squared distance of the joint batch). ``multi_scale`` expands a heuristic
    sigma to {sigma/2, sigma, 2*sigma}.
    """

    bandwidths: Union[tuple, str] = "median-heuristic"
    multi_scale: bool = False

    def __post_init__(self):
        if isinstance(self.bandwidths, str):
            if self.bandwidths != "median-heuristic":
                raise DataError(f"unknown bandwidth rule {self.bandwidths!r}")
        else:
            bw = tuple(float(b) for b in self.bandwidths)
            if not bw or any(b <= 0 for b in bw):
                raise DataError("bandwidths must be positive")
            object.__setattr__(self, "bandwidths", bw)

    def resolve(self, joint: torch.Tensor) -> tuple:
        if not isinstance(self.bandwidths, str):
            return self.bandwidths
        with torch.no_grad():
            d2 = torch.cdist(joint, joint).pow(2)
            off = d2[~torch.eye(len(joint), dtype=torch.bool)]
            med = float(off.median()) if off.numel() else 0.0
        sigma = (med / 2.0) ** 0.5 if med > 0 else 1.0
        return (sigma / 2.0, sigma, 2.0 * sigma) if self.multi_scale else (sigma,)


def _as_2d(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.ndim == 1:
        t = t.unsqueeze(0)
    if t.ndim != 2 or t.shape[0] < 1:
        raise DataError(f"{name} must be a nonempty n x d set")
    return t


def l_recon(eps_true, eps_pred) -> torch.Tensor:
    """Mean squared error between added and predicted noise."""
    a, b = torch.as_tensor(eps_true), torch.as_tensor(eps_pred)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def l_clip(g_global, c) -> torch.Tensor:
    """Mean squared error between the graph embedding and an image embedding."""
    g, cc = torch.as_tensor(g_global), torch.as_tensor(c)
    if g.shape != cc.shape:
        raise DataError(f"length mismatch: {tuple(g.shape)} vs {tuple(cc.shape)}")
    return ((g - cc) ** 2).mean()


def mmd2(xs, ys, kernel: KernelSpec = KernelSpec()) -> torch.Tensor:
    """Biased (V-statistic) squared maximum mean discrepancy between two sets.

    E[phi(x,x')] + E[phi(y,y')] - 2 E[phi(x,y)] with all pairs included,
    summed over the kernel's bandwidths. Canonical argument ordering makes
    the estimate exactly symmetric in floating point.
    """
    xs, ys = _as_2d(xs, "xs"), _as_2d(ys, "ys")
    if xs.shape[1] != ys.shape[1]:
        raise DataError("xs and ys must share the feature dimension")
    ka = (xs.shape[0], xs.detach().cpu().numpy().tobytes())
    kb = (ys.shape[0], ys.detach().cpu().numpy().tobytes())
    if kb < ka:
        xs, ys = ys, xs
    n, m = xs.shape[0], ys.shape[0]
    joint = torch.cat([xs, ys], dim=0)
    d2 = torch.cdist(joint, joint).pow(2)
    total = None
    for sigma in kernel.resolve(joint):
        k = torch.exp(-d2 / (2.0 * sigma**2))
        term = (
            k[:n, :n].mean() + k[n:, n:].mean() - 2.0 * k[:n, n:].reshape(-1).mean()
        )
        total = term if total is None else total + term
    return total


def _scalar(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def l_align(lc, lm, beta: float) -> torch.Tensor:
    """beta * l_clip + (1 - beta) * l_mmd."""
    if not 0.0 <= beta <= 1.0:
        raise DataError(f"beta must be in [0,1], got {beta}")
    return beta * _scalar(lc) + (1.0 - beta) * _scalar(lm)


def l_train(lr_, la, lam: float) -> torch.Tensor:
    """lam * l_recon + (1 - lam) * l_align."""
    if not 0.0 <= lam <= 1.0:
        raise DataError(f"lam must be in [0,1], got {lam}")
    return lam * _scalar(lr_) + (1.0 - lam) * _scalar(la)
