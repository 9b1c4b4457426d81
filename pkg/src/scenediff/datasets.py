"""Toy image-graph corpus: generation, rendering, manifest IO, oracle detection.

The toy corpus stands in for large scene-graph datasets: each pair is a small
image of colored geometric shapes whose placement satisfies a sampled spatial
scene graph. Generation is fully seeded (per-pair seeds derive from
``(seed, pair_index)``), so the same seed yields a byte-identical corpus.

A dataset on disk is a directory with ``manifest.jsonl`` (one JSON record per
pair), ``vocab.json`` (label order), and ``images/*.png`` (lossless).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError
from .scenegraph import (
    SPATIAL_RELATIONS,
    ImageGraphPair,
    SceneGraph,
    Vocabulary,
    spatial_predicate,
    validate,
)

DEFAULT_COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
}

# Fraction of the bounding box a filled shape covers; used by the detector.
SHAPE_FILL_RATIOS = {"square": 1.0, "circle": math.pi / 4.0, "triangle": 0.5}

DIRECTIONAL_RELATIONS = ("left of", "right of", "above", "below")


@dataclass(frozen=True)
class ToyDatasetConfig:
    """Generation spec for the toy corpus."""

    count: int = 64
    image_size: int = 32
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    shapes: tuple[str, ...] = ("square", "circle")
    relations: tuple[str, ...] = DIRECTIONAL_RELATIONS
    n_objects: tuple[int, int] = (2, 2)
    box_size: tuple[float, float] = (0.22, 0.34)
    allow_duplicate_labels: bool = False
    max_retries: int = 200

    def __post_init__(self):
        if self.count < 1:
            raise DataError("count must be >= 1")
        for s in self.shapes:
            if s not in SHAPE_FILL_RATIOS:
                raise DataError(f"unknown shape {s!r}")
        for r in self.relations:
            if r not in SPATIAL_RELATIONS:
                raise DataError(f"unknown relation {r!r}")
        lo, hi = self.n_objects
        if not 1 <= lo <= hi:
            raise DataError("n_objects range invalid")


def toy_vocabulary(cfg: ToyDatasetConfig) -> Vocabulary:
    """Vocabulary of color-shape object labels plus all six spatial predicates."""
    labels = [f"{c} {s}" for c in cfg.colors for s in cfg.shapes]
    return Vocabulary(labels, SPATIAL_RELATIONS)


def _render_shape(canvas: np.ndarray, shape: str, box, rgb) -> None:
    h, w, _ = canvas.shape
    _, x0, y0, x1, y1 = box
    px0, px1 = int(round(x0 * w)), int(round(x1 * w))
    py0, py1 = int(round(y0 * h)), int(round(y1 * h))
    px1, py1 = max(px1, px0 + 2), max(py1, py0 + 2)
    yy, xx = np.mgrid[py0:py1, px0:px1]
    if shape == "square":
        mask = np.ones(yy.shape, dtype=bool)
    elif shape == "circle":
        cy, cx = (py0 + py1 - 1) / 2.0, (px0 + px1 - 1) / 2.0
        ry, rx = (py1 - py0) / 2.0, (px1 - px0) / 2.0
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    elif shape == "triangle":
        # upward isoceles: apex at top center, base along the bottom edge
        cx = (px0 + px1 - 1) / 2.0
        frac = (yy - py0 + 1) / max(py1 - py0, 1)
        mask = np.abs(xx - cx) <= frac * (px1 - px0) / 2.0
    else:
        raise DataError(f"unknown shape {shape!r}")
    region = canvas[py0:py1, px0:px1]
    region[mask] = np.asarray(rgb, dtype=np.uint8)


def render_scene(boxes, labels: Sequence[str], image_size: int) -> np.ndarray:
    """Render color-shape labels at their boxes onto a black uint8 canvas."""
    canvas = np.zeros((image_size, image_size, 3), dtype=np.uint8)
    for box, label in zip(boxes, labels):
        color_name, shape = label.rsplit(" ", 1)
        rgb = DEFAULT_COLORS.get(color_name)
        if rgb is None:
            raise DataError(f"label {label!r} uses an unknown color")
        _render_shape(canvas, shape, box, rgb)
    return canvas


def _boxes_disjoint(a, b, margin: float = 0.01) -> bool:
    _, ax0, ay0, ax1, ay1 = a
    _, bx0, by0, bx1, by1 = b
    return ax1 + margin <= bx0 or bx1 + margin <= ax0 or ay1 + margin <= by0 or by1 + margin <= ay0


def _place_relative(rng, prev_box, size, relation):
    """Center a new box so that spatial_predicate(prev, new) == relation."""
    _, x0, y0, x1, y1 = prev_box
    pcx, pcy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half_prev = max(x1 - x0, y1 - y0) / 2.0
    gap = half_prev + size / 2.0 + rng.uniform(0.02, 0.1)
    off = rng.uniform(-0.8, 0.8) * gap
    if relation == "left of":  # prev left of new
        cx, cy = pcx + gap, pcy + off
    elif relation == "right of":
        cx, cy = pcx - gap, pcy + off
    elif relation == "above":
        cx, cy = pcx + off, pcy + gap
    elif relation == "below":
        cx, cy = pcx + off, pcy - gap
    else:
        raise DataError(f"relation {relation!r} not supported by toy placement")
    h = size / 2.0
    return (cx - h, cy - h, cx + h, cy + h)


def _sample_scene(rng, cfg: ToyDatasetConfig, vocab: Vocabulary):
    """Sample labels, a chain of relations, and a satisfying layout."""
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    n = min(n, vocab.n_objects) if not cfg.allow_duplicate_labels else n
    label_ids = rng.choice(vocab.n_objects, size=n, replace=cfg.allow_duplicate_labels)
    label_ids = [int(i) for i in label_ids]
    order = list(rng.permutation(n))
    chain = [
        (order[k], str(rng.choice(cfg.relations)), order[k + 1]) for k in range(n - 1)
    ]
    graph_desc = f"objects={[vocab.object_label(i) for i in label_ids]} chain={chain}"

    for _ in range(cfg.max_retries):
        sizes = rng.uniform(cfg.box_size[0], cfg.box_size[1], size=n)
        boxes: dict[int, tuple] = {}
        first = order[0]
        h = sizes[first] / 2.0
        cx, cy = rng.uniform(h + 0.02, 0.98 - h), rng.uniform(h + 0.02, 0.98 - h)
        boxes[first] = (label_ids[first], cx - h, cy - h, cx + h, cy + h)
        ok = True
        for s, rel, o in chain:
            x0, y0, x1, y1 = _place_relative(rng, boxes[s], sizes[o], rel)
            if not (0.01 <= x0 and x1 <= 0.99 and 0.01 <= y0 and y1 <= 0.99):
                ok = False
                break
            boxes[o] = (label_ids[o], x0, y0, x1, y1)
        if not ok:
            continue
        placed = [boxes[i] for i in range(n)]
        if any(
            not _boxes_disjoint(placed[i], placed[j])
            for i in range(n)
            for j in range(i + 1, n)
        ):
            continue
        rel_ids = {r: vocab.relation_id(r) for r in cfg.relations}
        triplets = [(s, rel_ids[rel], o) for s, rel, o in chain]
        if any(spatial_predicate(placed[s], placed[o]) != rel for s, rel, o in chain):
            continue
        return label_ids, triplets, placed
    raise DataError(f"unsatisfiable toy scene after {cfg.max_retries} retries: {graph_desc}")


def generate_toy_dataset(cfg: ToyDatasetConfig, seed: int) -> list[ImageGraphPair]:
    """Deterministically generate `cfg.count` rendered image-graph pairs."""
    vocab = toy_vocabulary(cfg)
    pairs = []
    for i in range(cfg.count):
        rng = np.random.default_rng([seed, i])
        label_ids, triplets, boxes = _sample_scene(rng, cfg, vocab)
        labels = [vocab.object_label(l) for l in label_ids]
        canvas = render_scene(boxes, labels, cfg.image_size)
        graph = SceneGraph(label_ids, triplets)
        bad = validate(graph, vocab)
        if bad:
            raise DataError(f"generated graph invalid: {bad}")
        pairs.append(
            ImageGraphPair(
                pair_id=f"pair-{i:05d}",
                image=canvas.astype(np.float32) / 255.0,
                graph=graph,
                ground_truth_objects=tuple(label_ids),
            )
        )
    return pairs


class ShapeColorDetector:
    """Oracle detector for toy images: color regions classified by fill ratio.

    Pixels are assigned to the nearest color prototype (or background black),
    connected regions above `min_area` become detections, and the region's
    bounding-box fill ratio picks the nearest shape prototype. On clean
    renders this reproduces the ground-truth object multiset exactly.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        colors: Optional[dict] = None,
        shapes: Optional[Sequence[str]] = None,
        min_area: int = 10,
        color_reject_dist: float = 0.55,
    ):
        self.vocab = vocab
        self.colors = dict(colors or DEFAULT_COLORS)
        self.shapes = tuple(shapes or ("square", "circle"))
        self.min_area = min_area
        self.color_reject_dist = color_reject_dist
        self._names = list(self.colors)
        self._protos = np.array([self.colors[c] for c in self._names], dtype=np.float64) / 255.0

    @classmethod
    def from_config(cls, cfg: ToyDatasetConfig, vocab: Vocabulary) -> "ShapeColorDetector":
        return cls(vocab, colors=cfg.colors, shapes=cfg.shapes)

    def detect(self, image: np.ndarray) -> list[int]:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError("detector expects an HxWx3 image")
        dists = np.linalg.norm(img[:, :, None, :] - self._protos[None, None, :, :], axis=-1)
        nearest = np.argmin(dists, axis=-1)
        near_dist = np.take_along_axis(dists, nearest[:, :, None], axis=-1)[:, :, 0]
        bg_dist = np.linalg.norm(img, axis=-1)
        assigned = np.where(
            (near_dist < bg_dist) & (near_dist < self.color_reject_dist), nearest, -1
        )
        found = []
        for ci, cname in enumerate(self._names):
            mask = assigned == ci
            if not mask.any():
                continue
            regions, n_regions = ndimage.label(mask)
            for ri in range(1, n_regions + 1):
                region = regions == ri
                area = int(region.sum())
                if area < self.min_area:
                    continue
                ys, xs = np.nonzero(region)
                bbox_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
                ratio = area / bbox_area
                shape = min(self.shapes, key=lambda s: abs(SHAPE_FILL_RATIOS[s] - ratio))
                label = f"{cname} {shape}"
                try:
                    found.append(self.vocab.object_id(label))
                except DataError:
                    continue
        return found


def save_manifest(pairs: Sequence[ImageGraphPair], vocab: Vocabulary, out_dir) -> Path:
    """Write manifest.jsonl, vocab.json, and lossless PNGs under `out_dir`."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    with open(out / "vocab.json", "w") as f:
        json.dump(
            {"object_labels": list(vocab.object_labels), "relation_labels": list(vocab.relation_labels)},
            f,
            indent=2,
        )
    with open(manifest_path, "w") as f:
        for pair in pairs:
            rel_path = f"images/{pair.pair_id}.png"
            arr = np.clip(np.rint(np.asarray(pair.image) * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(out / rel_path)
            record = {
                "id": pair.pair_id,
                "image_path": rel_path,
                "objects": [vocab.object_label(i) for i in pair.graph.object_ids],
                "triplets": [
                    [s, vocab.relation_label(r), o] for s, r, o in pair.graph.triplets
                ],
                "gt_objects": (
                    [vocab.object_label(i) for i in pair.ground_truth_objects]
                    if pair.ground_truth_objects is not None
                    else None
                ),
            }
            f.write(json.dumps(record) + "\n")
    return manifest_path


def load_vocab(manifest_path) -> Vocabulary:
    """Vocabulary stored next to a manifest file."""
    vocab_path = Path(manifest_path).parent / "vocab.json"
    if not vocab_path.exists():
        raise DataError(f"missing vocab file {vocab_path}")
    with open(vocab_path) as f:
        data = json.load(f)
    return Vocabulary(data["object_labels"], data["relation_labels"])


def load_manifest(manifest_path, vocab: Optional[Vocabulary] = None) -> list[ImageGraphPair]:
    """Load pairs in manifest order; images decoded to float [0,1] arrays."""
    path = Path(manifest_path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    if vocab is None:
        vocab = load_vocab(path)
    pairs = []
    seen_ids = set()
    with open(path) as f:
        for idx, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pair_id = rec["id"]
                image_path = path.parent / rec["image_path"]
                objects = [vocab.object_id(l) for l in rec["objects"]]
                triplets = [
                    (int(s), vocab.relation_id(r), int(o)) for s, r, o in rec["triplets"]
                ]
                gt = rec.get("gt_objects")
            except DataError:
                raise
            except Exception as exc:
                raise DataError(f"malformed manifest record {idx}: {exc}") from exc
            if pair_id in seen_ids:
                raise DataError(f"duplicate id {pair_id!r} at record {idx}")
            seen_ids.add(pair_id)
            if not image_path.exists():
                raise DataError(f"record {idx}: missing image file {image_path}")
            arr = np.asarray(Image.open(image_path), dtype=np.float32) / 255.0
            if arr.ndim == 2:
                arr = arr[:, :, None]
            pairs.append(
                ImageGraphPair(
                    pair_id=pair_id,
                    image=arr,
                    graph=SceneGraph(objects, triplets),
                    ground_truth_objects=(
                        tuple(vocab.object_id(l) for l in gt) if gt is not None else None
                    ),
                )
            )
    return pairs


def load_dataset(path):
    """Convenience: (vocab, pairs) from a dataset directory or manifest path."""
    p = Path(path)
    manifest = p / "manifest.jsonl" if p.is_dir() else p
    vocab = load_vocab(manifest)
    return vocab, load_manifest(manifest, vocab)
