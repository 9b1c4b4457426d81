"""Independent gradient oracle: central finite differences over parameter
coordinates, compared against autograd with a norm-based relative error.

Small tensors are checked coordinate by coordinate; for large tensors a seeded
random subset of coordinates keeps the check tractable."""

import numpy as np
import torch


def _coords(numel, limit, rng):
    if limit is None or numel <= limit:
        return range(numel)
    return sorted(rng.choice(numel, size=limit, replace=False).tolist())


def finite_diff_coords(loss_fn, param, coords, eps):
    flat = param.data.reshape(-1)
    out = []
    for i in coords:
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(loss_fn().detach())
        flat[i] = orig - eps
        lo = float(loss_fn().detach())
        flat[i] = orig
        out.append((hi - lo) / (2.0 * eps))
    return torch.tensor(out, dtype=torch.float64)


def autograd_grads(loss_fn, params):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def grad_rel_err(loss_fn, params, eps=1e-6, max_coords_per_tensor=None, seed=0):
    """||g_autograd - g_fd|| / max norms over the checked coordinates."""
    rng = np.random.default_rng(seed)
    analytic = autograd_grads(loss_fn, params)
    ga, gf = [], []
    for p, g in zip(params, analytic):
        coords = list(_coords(p.numel(), max_coords_per_tensor, rng))
        ga.append(g.reshape(-1)[coords].double())
        gf.append(finite_diff_coords(loss_fn, p, coords, eps))
    ga, gf = torch.cat(ga), torch.cat(gf)
    denom = max(float(ga.norm()), float(gf.norm()), 1e-30)
    return float((ga - gf).norm()) / denom
