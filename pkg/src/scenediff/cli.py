"""Command-line harness: synth-data, ingest, train-gca, finetune, sample,
evaluate, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from .ablation import format_grid, run_ablation
from .conditioning import ConditioningBuilder
from .config import RunConfig, build_provider, config_from_dict, load_config
from .datasets import (
    ShapeColorDetector,
    ToyDatasetConfig,
    generate_toy_dataset,
    load_dataset,
    save_manifest,
    toy_vocabulary,
)
from .diffusion import Denoiser, make_schedule, sample as sample_image, sample_unconditional
from .encoder import GraphEncoder
from .errors import DataError, NumericError
from .estimators import GraphClipAligner, SceneGraphDiffusion
from .metrics import StubFeatureExtractor, compute_report
from .scenegraph import Vocabulary, validate
from .seeding import derive_seed


def _write_png(image: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _vocab_dict(vocab: Vocabulary) -> dict:
    return {
        "object_labels": list(vocab.object_labels),
        "relation_labels": list(vocab.relation_labels),
    }


def _config_with_vocab(cfg: RunConfig, vocab: Vocabulary) -> dict:
    echo = cfg.to_dict()
    echo["vocab"] = _vocab_dict(vocab)
    return echo


def cmd_synth_data(args) -> int:
    cfg = ToyDatasetConfig(
        count=args.count,
        image_size=args.image_size,
        shapes=tuple(args.shapes.split(",")),
        relations=tuple(args.relations.split(",")) if args.relations else ToyDatasetConfig.relations,
        n_objects=(args.min_objects, args.max_objects),
        allow_duplicate_labels=args.allow_duplicates,
    )
    pairs = generate_toy_dataset(cfg, args.seed)
    vocab = toy_vocabulary(cfg)
    manifest = save_manifest(pairs, vocab, args.out)
    print(f"wrote {len(pairs)} pairs to {manifest}")
    return 0


def cmd_ingest(args) -> int:
    vocab, pairs = load_dataset(args.manifest)
    problems = []
    for p in pairs:
        for v in validate(p.graph, vocab):
            problems.append(f"{p.pair_id}: {v}")
    if problems:
        raise DataError("; ".join(problems))
    print(f"{len(pairs)} pairs valid against {vocab.n_objects} object labels")
    return 0


def cmd_train_gca(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    vocab, pairs = load_dataset(args.data)
    provider = build_provider(cfg)
    aligner = GraphClipAligner(
        d_obj=cfg.encoder.d_obj, d_rel=cfg.encoder.d_rel, hidden=cfg.encoder.hidden,
        d_global=cfg.encoder.d_global, n_layers=cfg.encoder.n_layers,
        epochs=cfg.gca.epochs, batch_size=cfg.gca.batch_size,
        lr_gen=cfg.gca.lr_gen, lr_disc=cfg.gca.lr_disc,
        disc_steps=cfg.gca.disc_steps, gen_steps=cfg.gca.gen_steps,
        val_fraction=cfg.gca.val_fraction, seed=cfg.seed, provider=provider,
    )
    aligner.fit(pairs, vocab)
    out = Path(args.out)
    tensors = {
        **ckpt.module_tensors(aligner.encoder_, "encoder."),
        **ckpt.module_tensors(aligner.discriminator_, "disc."),
    }
    ckpt.save_checkpoint(tensors, out / "gca_checkpoint", config=_config_with_vocab(cfg, vocab))
    with open(out / "history.jsonl", "w") as f:
        for rec in aligner.history_:
            f.write(json.dumps(rec) + "\n")
    first, last = aligner.history_[0]["val_mmd2"], aligner.history_[-1]["val_mmd2"]
    print(f"GCA trained {cfg.gca.epochs} epochs; held-out MMD^2 {first:.5f} -> {last:.5f}")
    return 0


def _encoder_from_checkpoint(path, cfg: RunConfig, vocab: Vocabulary) -> GraphEncoder:
    tensors, manifest = ckpt.load_checkpoint(path)
    saved_vocab = manifest.get("config", {}).get("vocab")
    if saved_vocab and saved_vocab != _vocab_dict(vocab):
        raise DataError("checkpoint vocabulary does not match the dataset vocabulary")
    enc = GraphEncoder(
        vocab.n_objects, vocab.n_relations,
        d_obj=cfg.encoder.d_obj, d_rel=cfg.encoder.d_rel, hidden=cfg.encoder.hidden,
        d_global=cfg.encoder.d_global, n_layers=cfg.encoder.n_layers, seed=0,
    )
    ckpt.load_module(enc, tensors, "encoder.")
    return enc


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.finetune.steps = args.steps
    vocab, pairs = load_dataset(args.data)
    provider = build_provider(cfg)
    encoder_init = (
        _encoder_from_checkpoint(args.encoder_ckpt, cfg, vocab) if args.encoder_ckpt else None
    )
    model = SceneGraphDiffusion(
        lam=cfg.loss.lam, beta=cfg.loss.beta,
        timesteps=cfg.schedule.timesteps,
        beta_start=cfg.schedule.beta_start, beta_end=cfg.schedule.beta_end,
        steps=cfg.finetune.steps, batch_size=cfg.finetune.batch_size, lr=cfg.finetune.lr,
        n_max=cfg.conditioning.n_max, d_cond=cfg.conditioning.d_cond,
        base_width=cfg.denoiser.base_width,
        d_obj=cfg.encoder.d_obj, d_rel=cfg.encoder.d_rel, hidden=cfg.encoder.hidden,
        d_global=cfg.encoder.d_global, n_layers=cfg.encoder.n_layers,
        seed=cfg.seed, provider=provider, encoder_init=encoder_init,
        train_encoder=cfg.finetune.train_encoder,
    )
    model.fit(pairs, vocab)
    out = Path(args.out)
    tensors = {
        **ckpt.module_tensors(model.encoder_, "encoder."),
        **ckpt.module_tensors(model.denoiser_, "denoiser."),
        **ckpt.module_tensors(model.conditioner_, "conditioner."),
    }
    echo = _config_with_vocab(cfg, vocab)
    echo["image_shape"] = list(np.asarray(pairs[0].image).shape)
    ckpt.save_checkpoint(
        tensors, out / "model_checkpoint", config=echo, step=cfg.finetune.steps
    )
    with open(out / "history.jsonl", "w") as f:
        for rec in model.history_:
            f.write(json.dumps(rec) + "\n")
    print(
        f"finetuned {cfg.finetune.steps} steps; "
        f"l_recon {model.history_[0]['l_recon']:.4f} -> {model.history_[-1]['l_recon']:.4f}"
    )
    return 0


def _load_model(ckpt_dir):
    tensors, manifest = ckpt.load_checkpoint(ckpt_dir)
    echo = manifest.get("config", {})
    vocab_info = echo.get("vocab")
    image_shape = echo.get("image_shape")
    if not vocab_info or not image_shape:
        raise DataError("checkpoint lacks the vocab/image_shape echo needed to rebuild")
    cfg = config_from_dict({k: v for k, v in echo.items() if k not in ("vocab", "image_shape")})
    vocab = Vocabulary(vocab_info["object_labels"], vocab_info["relation_labels"])
    provider = build_provider(cfg)
    encoder = GraphEncoder(
        vocab.n_objects, vocab.n_relations,
        d_obj=cfg.encoder.d_obj, d_rel=cfg.encoder.d_rel, hidden=cfg.encoder.hidden,
        d_global=cfg.encoder.d_global, n_layers=cfg.encoder.n_layers, seed=0,
    )
    denoiser = Denoiser(
        channels=image_shape[2], image_size=image_shape[0],
        base_width=cfg.denoiser.base_width, d_cond=cfg.conditioning.d_cond, seed=0,
    )
    conditioner = ConditioningBuilder(
        d_global=cfg.encoder.d_global, provider=provider,
        n_max=cfg.conditioning.n_max, d_cond=cfg.conditioning.d_cond, seed=0,
    )
    ckpt.load_module(encoder, tensors, "encoder.")
    ckpt.load_module(denoiser, tensors, "denoiser.")
    ckpt.load_module(conditioner, tensors, "conditioner.")
    sched = make_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end)
    return cfg, vocab, encoder, denoiser, conditioner, sched


def cmd_sample(args) -> int:
    cfg, vocab, encoder, denoiser, conditioner, sched = _load_model(args.ckpt)
    data_vocab, pairs = load_dataset(args.data)
    if _vocab_dict(data_vocab) != _vocab_dict(vocab):
        raise DataError("dataset vocabulary does not match the checkpoint")
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pairs = pairs[: args.count]
    records = []
    with torch.no_grad():
        for p in pairs:
            sig = conditioner(encoder(p.graph), p.graph.labels(vocab))
            paths = []
            for k in range(args.per_graph):
                img = sample_image(
                    denoiser, sig, sched, seed=derive_seed(args.seed, p.pair_id, k)
                )
                rel = f"images/{p.pair_id}_{k}.png"
                _write_png(img, out / rel)
                paths.append(rel)
            records.append({"pair_id": p.pair_id, "images": paths})
    for k in range(args.unconditional):
        img = sample_unconditional(
            denoiser, cfg.conditioning.n_max, sched, seed=derive_seed(args.seed, "uncond", k)
        )
        rel = f"images/unconditional_{k}.png"
        _write_png(img, out / rel)
        records.append({"pair_id": None, "images": [rel]})
    with open(out / "samples.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    with open(out / "vocab.json", "w") as f:
        json.dump(_vocab_dict(vocab), f, indent=2)
    print(f"sampled {args.per_graph} image(s) for {len(pairs)} graphs into {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    vocab, pairs = load_dataset(args.data)
    samples_dir = Path(args.samples)
    vocab_file = samples_dir / "vocab.json"
    if vocab_file.exists():
        with open(vocab_file) as f:
            sample_vocab = json.load(f)
        if sample_vocab != _vocab_dict(vocab):
            raise DataError("sample vocabulary does not match the dataset vocabulary")
    manifest = samples_dir / "samples.jsonl"
    if not manifest.exists():
        raise DataError(f"missing samples manifest {manifest}")
    samples = {}
    with open(manifest) as f:
        for line in f:
            rec = json.loads(line)
            if rec.get("pair_id") is None:
                continue
            imgs = [
                np.asarray(Image.open(samples_dir / rel), dtype=np.float32) / 255.0
                for rel in rec["images"]
            ]
            samples[rec["pair_id"]] = imgs
    extractor = StubFeatureExtractor(
        feature_dim=cfg.metrics.feature_dim, n_classes=vocab.n_objects, seed=cfg.seed
    )
    detector = ShapeColorDetector(vocab, colors=cfg.data.colors, shapes=tuple(cfg.data.shapes))
    report = compute_report(
        pairs, samples, extractor, detector, is_splits=cfg.metrics.is_splits,
        config=_config_with_vocab(cfg, vocab),
    )
    report.save(args.out)
    print(report.to_text())
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    vocab, pairs = load_dataset(args.data)
    n_eval = min(cfg.sampling.max_graphs, max(1, len(pairs) // 4))
    train_pairs, eval_pairs = pairs[:-n_eval], pairs[-n_eval:]
    result = run_ablation(cfg, vocab, train_pairs, eval_pairs, out_dir=args.out)
    print(format_grid(result["cells"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenediff", description="Scene-graph conditioned diffusion toolkit"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-data", help="generate a toy image-graph corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--max-objects", type=int, default=2)
    p.add_argument("--shapes", default="square,circle")
    p.add_argument("--relations", default="")
    p.add_argument("--allow-duplicates", action="store_true")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("ingest", help="validate a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-gca", help="GAN-based alignment pre-training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_gca)

    p = sub.add_parser("finetune", help="fine-tune the conditional denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--encoder-ckpt", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sample", help="generate images conditioned on graphs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--per-graph", type=int, default=2)
    p.add_argument("--unconditional", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="compute IS/FID/DS/OOR for samples")
    p.add_argument("--data", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
