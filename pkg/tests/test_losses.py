import math

import numpy as np
import pytest
import torch

from scenediff.errors import DataError
from scenediff.losses import KernelSpec, LossWeights, l_align, l_clip, l_recon, l_train, mmd2

from gradcheck import grad_rel_err


def naive_mmd2(xs, ys, sigmas):
    """O(n^2) double-loop oracle, independent of the torch implementation."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    total = 0.0
    for sigma in sigmas:
        k = lambda u, v: math.exp(-float(np.sum((u - v) ** 2)) / (2.0 * sigma**2))
        kxx = np.mean([[k(a, b) for b in xs] for a in xs])
        kyy = np.mean([[k(a, b) for b in ys] for a in ys])
        kxy = np.mean([[k(a, b) for b in ys] for a in xs])
        total += kxx + kyy - 2.0 * kxy
    return total


def test_l_recon_trivial():
    x = torch.randn(4, 3, 8, 8)
    assert float(l_recon(x, x)) == 0.0
    assert float(l_recon(x, x + 1.0)) == pytest.approx(1.0, abs=1e-6)


def test_l_recon_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    manual = sum((a[i, j] - b[i, j]) ** 2 for i in range(3) for j in range(5)) / 15.0
    assert float(l_recon(torch.tensor(a), torch.tensor(b))) == pytest.approx(manual, abs=1e-12)


def test_l_recon_shape_mismatch():
    with pytest.raises(DataError):
        l_recon(torch.zeros(3), torch.zeros(4))


def test_l_clip_values():
    g = torch.tensor([1.0, 2.0, 3.0])
    assert float(l_clip(g, g)) == 0.0
    assert float(l_clip(g + 2.0, g)) == pytest.approx(4.0, abs=1e-6)
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    manual = sum((a[i] - b[i]) ** 2 for i in range(7)) / 7.0
    assert float(l_clip(torch.tensor(a), torch.tensor(b))) == pytest.approx(manual, abs=1e-12)


def test_mmd2_identical_sets_zero():
    x = torch.randn(6, 4, dtype=torch.float64)
    assert abs(float(mmd2(x, x.clone()))) <= 1e-12


def test_mmd2_two_point_closed_form():
    x = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    y = torch.tensor([[0.0, 2.0]], dtype=torch.float64)
    sigma = 1.3
    expected = 2.0 * (1.0 - math.exp(-5.0 / (2.0 * sigma**2)))
    got = float(mmd2(x, y, KernelSpec(bandwidths=(sigma,))))
    assert got == pytest.approx(expected, abs=1e-12)


def test_mmd2_matches_naive_oracle():
    rng = np.random.default_rng(3)
    xs = rng.standard_normal((8, 3))
    ys = rng.standard_normal((5, 3))
    sigmas = (0.7, 1.0, 2.5)
    got = float(mmd2(torch.tensor(xs), torch.tensor(ys), KernelSpec(bandwidths=sigmas)))
    assert got == pytest.approx(naive_mmd2(xs, ys, sigmas), abs=1e-10)


def test_mmd2_symmetric_and_nonnegative():
    rng = np.random.default_rng(5)
    for trial in range(100):
        n, m, d = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 4)
        xs = torch.tensor(rng.standard_normal((n, d)))
        ys = torch.tensor(rng.standard_normal((m, d)))
        spec = KernelSpec(bandwidths=(float(rng.uniform(0.3, 3.0)),))
        ab, ba = float(mmd2(xs, ys, spec)), float(mmd2(ys, xs, spec))
        assert ab == ba  # exact, by canonical argument ordering
        assert ab >= -1e-12


def test_mmd2_median_heuristic_runs():
    x, y = torch.randn(6, 3, dtype=torch.float64), torch.randn(4, 3, dtype=torch.float64)
    assert float(mmd2(x, y)) >= -1e-12
    multi = float(mmd2(x, y, KernelSpec(multi_scale=True)))
    assert multi >= -1e-12


def test_mmd2_separation_saturates_and_monotone():
    rng = np.random.default_rng(9)
    base = rng.uniform(0, 0.2, size=(5, 1))
    spec = KernelSpec(bandwidths=(0.5, 1.0))
    values = []
    for shift in [1.0, 2.0, 4.0, 8.0, 50.0]:
        values.append(float(mmd2(torch.tensor(base), torch.tensor(base + shift), spec)))
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    # far-separated tight clusters saturate near 2 * (#bandwidths)
    assert values[-1] > 2 * 2 * 0.9


def test_mmd2_empty_set_errors():
    with pytest.raises(DataError):
        mmd2(torch.zeros(0, 3), torch.zeros(2, 3))


def test_weighted_combinations():
    assert float(l_align(2.0, 4.0, 1.0)) == 2.0
    assert float(l_align(2.0, 4.0, 0.0)) == 4.0
    assert float(l_align(2.0, 4.0, 0.5)) == 3.0
    assert float(l_train(1.0, 2.0, 1.0)) == 1.0
    assert float(l_train(1.0, 2.0, 0.0)) == 2.0
    assert float(l_train(1.0, 2.0, 0.7)) == pytest.approx(1.3, abs=1e-12)
    with pytest.raises(DataError):
        l_align(1.0, 1.0, 1.5)
    with pytest.raises(DataError):
        l_train(1.0, 1.0, -0.1)
    with pytest.raises(DataError):
        LossWeights(lam=1.2)


def test_losses_gradients_match_finite_differences():
    torch.manual_seed(0)
    a = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
    b = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
    assert grad_rel_err(lambda: l_recon(a, b), [a, b]) < 1e-4
    g = torch.randn(6, dtype=torch.float64, requires_grad=True)
    c = torch.randn(6, dtype=torch.float64, requires_grad=True)
    assert grad_rel_err(lambda: l_clip(g, c), [g, c]) < 1e-4
    xs = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
    ys = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    spec = KernelSpec(bandwidths=(0.8, 1.7))
    assert grad_rel_err(lambda: mmd2(xs, ys, spec), [xs, ys]) < 1e-4
    lr_ = torch.tensor(0.9, dtype=torch.float64, requires_grad=True)
    la = torch.tensor(0.4, dtype=torch.float64, requires_grad=True)
    assert grad_rel_err(lambda: l_train(lr_, l_align(la, lr_, 0.5), 0.7), [lr_, la]) < 1e-4
