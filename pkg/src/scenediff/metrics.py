"""Evaluation metrics: Inception Score, Fréchet distance, Diversity Score, and
Object Occurrence Ratio, over pluggable feature extractors and detectors.

At desk scale the extractor and detector are deterministic stubs: a seeded
random-projection feature extractor with a fixed softmax classifier, and the
pixel-level shape/color detector from :mod:`scenediff.datasets`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, NumericError

LOG_FLOOR = 1e-12


def inception_score(probs, splits: int = 1) -> float:
    """exp(mean_i KL(p(y|x_i) || p_bar)) with 1e-12 flooring inside the logs.

    With splits > 1 the rows are chunked and the per-split scores averaged.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise DataError("probs must be a nonempty N x K matrix")
    if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise DataError("rows must be probability distributions")
    if splits < 1 or splits > p.shape[0]:
        raise DataError("invalid split count")
    scores = []
    for chunk in np.array_split(p, splits):
        marginal = chunk.mean(axis=0)
        kl = (chunk * (np.log(np.maximum(chunk, LOG_FLOOR)) - np.log(np.maximum(marginal, LOG_FLOOR)))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -1e-8:
        raise NumericError(f"matrix has eigenvalue {vals.min():.3e}, not PSD")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(feats_a, feats_b) -> float:
    """Fréchet distance between Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken by eigendecomposition of the symmetrized product and
    tiny negative eigenvalues clipped to zero.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataError("feature sets must be 2-D with matching width")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError("need at least 2 samples per set to fit a covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-8:
        raise NumericError(f"product matrix eigenvalue {vals.min():.3e}, not PSD")
    tr_mean = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_mean)
    return max(value, 0.0)


def mean_abs_distance(img_a, img_b) -> float:
    """Default perceptual-distance plug: mean absolute pixel difference."""
    return float(np.mean(np.abs(np.asarray(img_a, np.float64) - np.asarray(img_b, np.float64))))


def diversity_score(images: Sequence, distance: Optional[Callable] = None) -> float:
    """Mean pairwise distance over all C(n,2) images generated from one graph."""
    if len(images) < 2:
        raise DataError("diversity needs at least 2 images")
    shapes = {np.asarray(im).shape for im in images}
    if len(shapes) != 1:
        raise DataError("images must share a shape")
    distance = distance or mean_abs_distance
    dists = [
        distance(images[i], images[j])
        for i in range(len(images))
        for j in range(i + 1, len(images))
    ]
    return float(np.mean(dists))


def oor(graph_image_pairs: Sequence, detector) -> tuple[float, list]:
    """Object Occurrence Ratio: per pair, the multiset-intersection size between
    graph labels and detected labels over the graph's object count; then the
    unweighted mean of per-pair ratios.

    Pairs whose graph has no objects are excluded and reported as None.
    """
    per_pair: list[Optional[float]] = []
    for graph, image in graph_image_pairs:
        if graph.n_objects == 0:
            per_pair.append(None)
            continue
        wanted: dict[int, int] = {}
        for oid in graph.object_ids:
            wanted[oid] = wanted.get(oid, 0) + 1
        got: dict[int, int] = {}
        for oid in detector.detect(image):
            got[oid] = got.get(oid, 0) + 1
        hit = sum(min(cnt, got.get(oid, 0)) for oid, cnt in wanted.items())
        per_pair.append(hit / graph.n_objects)
    kept = [r for r in per_pair if r is not None]
    if not kept:
        raise DataError("no pairs with objects to score")
    return float(np.mean(kept)), per_pair


class StubFeatureExtractor:
    """Seeded random-projection features plus a fixed softmax classifier."""

    def __init__(self, feature_dim: int = 64, n_classes: int = 8, seed: int = 0):
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.seed = seed
        self._proj: dict[int, np.ndarray] = {}
        rng = np.random.default_rng([seed, 23])
        self._clf = rng.standard_normal((n_classes, feature_dim)) / np.sqrt(feature_dim)

    def _features(self, image) -> np.ndarray:
        img = torch.as_tensor(np.asarray(image), dtype=torch.float64)
        if img.ndim != 3:
            raise DataError("image must be HxWxC")
        thumb = F.interpolate(
            img.permute(2, 0, 1)[None], size=(8, 8), mode="bilinear", align_corners=False
        )
        flat = np.append(thumb.numpy().ravel(), 1.0)
        proj = self._proj.get(flat.size)
        if proj is None:
            rng = np.random.default_rng([self.seed, 11, flat.size])
            proj = rng.standard_normal((self.feature_dim, flat.size)) / np.sqrt(flat.size)
            self._proj[flat.size] = proj
        return proj @ flat

    def extract(self, image) -> np.ndarray:
        return self._features(image)

    def classify(self, image) -> np.ndarray:
        logits = self._clf @ self._features(image)
        z = np.exp(logits - logits.max())
        return z / z.sum()


@dataclass
class MetricsReport:
    """IS/FID/DS/OOR values with per-pair breakdowns and a config echo."""

    is_mean: float
    fid: float
    ds_mean: Optional[float]
    oor_mean: float
    per_pair: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "is_mean": self.is_mean,
            "fid": self.fid,
            "ds_mean": self.ds_mean,
            "oor_mean": self.oor_mean,
            "per_pair": self.per_pair,
            "config": self.config,
        }

    def to_text(self) -> str:
        lines = [
            "metric   value",
            f"IS       {self.is_mean:.4f}",
            f"FID      {self.fid:.4f}",
            f"DS       {'-' if self.ds_mean is None else f'{self.ds_mean:.4f}'}",
            f"OOR      {self.oor_mean:.4f}",
        ]
        return "\n".join(lines)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        (out / "report.txt").write_text(self.to_text() + "\n")


def compute_report(
    real_pairs: Sequence,
    samples: dict,
    extractor,
    detector,
    is_splits: int = 1,
    config: Optional[dict] = None,
) -> MetricsReport:
    """Full evaluation: `samples` maps pair_id -> list of generated images."""
    by_id = {p.pair_id: p for p in real_pairs}
    missing = [pid for pid in samples if pid not in by_id]
    if missing:
        raise DataError(f"samples reference unknown pair ids: {missing[:3]}")
    if not samples:
        raise DataError("no samples to evaluate")

    generated = [img for imgs in samples.values() for img in imgs]
    probs = np.stack([extractor.classify(im) for im in generated])
    feats_gen = np.stack([extractor.extract(im) for im in generated])
    feats_real = np.stack([extractor.extract(by_id[pid].image) for pid in samples])

    is_mean = inception_score(probs, splits=is_splits)
    fid_value = fid(feats_real, feats_gen)

    oor_inputs, ds_values, per_pair = [], [], []
    for pid, imgs in samples.items():
        graph = by_id[pid].graph
        oor_inputs.extend((graph, img) for img in imgs)
        ds = diversity_score(imgs) if len(imgs) >= 2 else None
        if ds is not None:
            ds_values.append(ds)
        per_pair.append({"pair_id": pid, "ds": ds})
    oor_mean, oor_per = oor(oor_inputs, detector)
    idx = 0
    for row, (pid, imgs) in zip(per_pair, samples.items()):
        ratios = [r for r in oor_per[idx : idx + len(imgs)] if r is not None]
        row["oor"] = float(np.mean(ratios)) if ratios else None
        idx += len(imgs)

    return MetricsReport(
        is_mean=is_mean,
        fid=fid_value,
        ds_mean=float(np.mean(ds_values)) if ds_values else None,
        oor_mean=oor_mean,
        per_pair=per_pair,
        config=dict(config or {}),
    )
