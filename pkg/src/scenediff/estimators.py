"""sklearn-style estimators tying the pipeline together.

`GraphClipAligner` runs the GAN-based alignment pre-training (fit) and maps
scene graphs to aligned embeddings (transform). `SceneGraphDiffusion`
fine-tunes the conditional denoiser together with the graph encoder (fit) and
generates images from scene graphs (sample/predict). Both follow the
BaseEstimator contract, so `get_params`/`set_params`/`clone` work as usual.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .conditioning import ConditioningBuilder, StubEmbeddingProvider
from .diffusion import (
    Denoiser,
    DiffusionTrainer,
    IdentityCodec,
    make_schedule,
    noise_prediction_mse,
    sample,
    sample_unconditional,
)
from .encoder import GraphEncoder
from .errors import DataError, NumericError
from .gca import Discriminator, GcaTrainConfig, train_gca
from .losses import KernelSpec, LossWeights
from .scenegraph import SceneGraph, Vocabulary
from .seeding import derive_seed
from .validation import check_graphs, check_pairs


def _require_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def _seed_linears(module: torch.nn.Module, seed: int) -> None:
    g = torch.Generator()
    g.manual_seed(seed)
    for mod in module.modules():
        if isinstance(mod, torch.nn.Linear):
            bound = 1.0 / mod.in_features**0.5
            mod.weight.data.uniform_(-bound, bound, generator=g)
            mod.bias.data.zero_()


class GraphClipAligner(BaseEstimator, TransformerMixin):
    """GAN-based alignment of graph embeddings to the image-embedding space."""

    def __init__(
        self,
        d_obj: int = 512,
        d_rel: int = 512,
        hidden: int = 512,
        d_global: int = 512,
        n_layers: int = 5,
        epochs: int = 40,
        batch_size: int = 8,
        lr_gen: float = 2e-4,
        lr_disc: float = 2e-4,
        disc_steps: int = 1,
        gen_steps: int = 1,
        val_fraction: float = 0.25,
        seed: int = 0,
        provider=None,
        text_dim: int = 512,
    ):
        self.d_obj = d_obj
        self.d_rel = d_rel
        self.hidden = hidden
        self.d_global = d_global
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_gen = lr_gen
        self.lr_disc = lr_disc
        self.disc_steps = disc_steps
        self.gen_steps = gen_steps
        self.val_fraction = val_fraction
        self.seed = seed
        self.provider = provider
        self.text_dim = text_dim

    def _provider(self):
        if self.provider is not None:
            return self.provider
        return StubEmbeddingProvider(
            text_dim=self.text_dim, image_dim=self.d_global, seed=self.seed
        )

    def fit(self, pairs, vocab: Vocabulary, val_pairs=None):
        pairs = check_pairs(pairs, vocab)
        provider = self._provider()
        encoder = GraphEncoder(
            vocab.n_objects,
            vocab.n_relations,
            d_obj=self.d_obj,
            d_rel=self.d_rel,
            hidden=self.hidden,
            d_global=self.d_global,
            n_layers=self.n_layers,
            seed=derive_seed(self.seed, "encoder"),
        )
        disc = Discriminator(in_dim=provider.image_dim)
        _seed_linears(disc, derive_seed(self.seed, "disc"))
        cfg = GcaTrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_gen=self.lr_gen,
            lr_disc=self.lr_disc,
            disc_steps=self.disc_steps,
            gen_steps=self.gen_steps,
            seed=derive_seed(self.seed, "gca"),
            val_fraction=self.val_fraction,
        )
        self.history_ = train_gca(pairs, encoder, disc, provider, cfg, val_pairs=val_pairs)
        self.encoder_ = encoder
        self.discriminator_ = disc
        self.provider_ = provider
        self.vocab_ = vocab
        return self

    def transform(self, graphs) -> np.ndarray:
        """Aligned embeddings, one row per graph (or per pair's graph)."""
        _require_fitted(self, "encoder_")
        graphs = [g.graph if hasattr(g, "graph") else g for g in graphs]
        check_graphs(graphs, self.vocab_)
        with torch.no_grad():
            out = torch.stack([self.encoder_(g) for g in graphs])
        return out.numpy()


class SceneGraphDiffusion(BaseEstimator):
    """Conditional DDPM fine-tuned on image-graph pairs; samples images from graphs."""

    def __init__(
        self,
        lam: float = 0.7,
        beta: float = 0.5,
        timesteps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        steps: int = 500,
        batch_size: int = 2,
        lr: float = 1e-4,
        n_max: int = 8,
        d_cond: int = 512,
        base_width: int = 32,
        d_obj: int = 512,
        d_rel: int = 512,
        hidden: int = 512,
        d_global: int = 512,
        n_layers: int = 5,
        seed: int = 0,
        provider=None,
        text_dim: int = 512,
        encoder_init=None,
        train_encoder: bool = True,
        kernel: Optional[KernelSpec] = None,
    ):
        self.lam = lam
        self.beta = beta
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.n_max = n_max
        self.d_cond = d_cond
        self.base_width = base_width
        self.d_obj = d_obj
        self.d_rel = d_rel
        self.hidden = hidden
        self.d_global = d_global
        self.n_layers = n_layers
        self.seed = seed
        self.provider = provider
        self.text_dim = text_dim
        self.encoder_init = encoder_init
        self.train_encoder = train_encoder
        self.kernel = kernel

    def _provider(self):
        if self.provider is not None:
            return self.provider
        return StubEmbeddingProvider(
            text_dim=self.text_dim, image_dim=self.d_global, seed=self.seed
        )

    def _make_encoder(self, vocab: Vocabulary) -> GraphEncoder:
        encoder = GraphEncoder(
            vocab.n_objects,
            vocab.n_relations,
            d_obj=self.d_obj,
            d_rel=self.d_rel,
            hidden=self.hidden,
            d_global=self.d_global,
            n_layers=self.n_layers,
            seed=derive_seed(self.seed, "encoder"),
        )
        init = self.encoder_init
        if init is None:
            return encoder
        if isinstance(init, GraphClipAligner):
            _require_fitted(init, "encoder_")
            init = init.encoder_
        if not isinstance(init, GraphEncoder):
            raise DataError("encoder_init must be a fitted GraphClipAligner or a GraphEncoder")
        try:
            encoder.load_state_dict(init.state_dict())
        except RuntimeError as exc:
            raise DataError(f"encoder_init does not match encoder dimensions: {exc}") from exc
        return encoder

    def fit(self, pairs, vocab: Vocabulary, val_pairs=None):
        pairs = check_pairs(pairs, vocab)
        shape = np.asarray(pairs[0].image).shape
        if shape[0] != shape[1]:
            raise DataError("images must be square")
        image_size, channels = shape[0], shape[2]
        if any(p.graph.n_objects > self.n_max for p in pairs):
            raise DataError(f"a graph exceeds capacity n_max={self.n_max}")

        provider = self._provider()
        encoder = self._make_encoder(vocab)
        denoiser = Denoiser(
            channels=channels,
            image_size=image_size,
            base_width=self.base_width,
            d_cond=self.d_cond,
            seed=derive_seed(self.seed, "denoiser"),
        )
        conditioner = ConditioningBuilder(
            d_global=self.d_global,
            provider=provider,
            n_max=self.n_max,
            d_cond=self.d_cond,
            seed=derive_seed(self.seed, "conditioner"),
        )
        sched = make_schedule(self.timesteps, self.beta_start, self.beta_end)
        trainer = DiffusionTrainer(
            encoder,
            denoiser,
            conditioner,
            provider,
            vocab,
            sched,
            weights=LossWeights(self.lam, self.beta),
            kernel=self.kernel or KernelSpec(),
            lr=self.lr,
            train_encoder=self.train_encoder,
        )
        rng = np.random.default_rng(derive_seed(self.seed, "batches"))
        queue: list[int] = []
        history = []
        for step in range(self.steps):
            while len(queue) < self.batch_size:
                queue.extend(rng.permutation(len(pairs)).tolist())
            idx, queue = queue[: self.batch_size], queue[self.batch_size :]
            batch = [pairs[i] for i in idx]
            record = trainer.step(batch, seed=derive_seed(self.seed, "step", step))
            record["step"] = step
            history.append(record)

        self.encoder_ = encoder
        self.denoiser_ = denoiser
        self.conditioner_ = conditioner
        self.provider_ = provider
        self.sched_ = sched
        self.vocab_ = vocab
        self.codec_ = IdentityCodec()
        self.history_ = history
        return self

    def conditioning_for(self, graph: SceneGraph):
        _require_fitted(self, "denoiser_")
        with torch.no_grad():
            return self.conditioner_(self.encoder_(graph), graph.labels(self.vocab_))

    def sample(self, graphs, n_per_graph: int = 1, seed: int = 0) -> list:
        """Per graph, a list of n_per_graph generated HxWxC images in [0,1]."""
        _require_fitted(self, "denoiser_")
        graphs = [g.graph if hasattr(g, "graph") else g for g in graphs]
        check_graphs(graphs, self.vocab_, n_max=self.n_max)
        out = []
        for gi, graph in enumerate(graphs):
            sig = self.conditioning_for(graph)
            out.append(
                [
                    sample(
                        self.denoiser_, sig, self.sched_,
                        seed=derive_seed(seed, gi, k), codec=self.codec_,
                    )
                    for k in range(n_per_graph)
                ]
            )
        return out

    def predict(self, graphs) -> list:
        """One image per graph."""
        return [imgs[0] for imgs in self.sample(graphs, n_per_graph=1)]

    def sample_unconditional(self, n: int, seed: int = 0) -> list:
        _require_fitted(self, "denoiser_")
        return [
            sample_unconditional(
                self.denoiser_, self.n_max, self.sched_,
                seed=derive_seed(seed, "uncond", k), codec=self.codec_,
            )
            for k in range(n)
        ]

    def noise_mse(self, pairs, signals=None, seed: int = 0, n_draws: int = 16) -> float:
        """Noise-prediction MSE on held-out pairs; pass `signals` to override
        the matched conditioning (e.g. swapped signals)."""
        _require_fitted(self, "denoiser_")
        pairs = list(pairs)
        if signals is None:
            signals = [self.conditioning_for(p.graph) for p in pairs]
        return noise_prediction_mse(
            self.denoiser_, [p.image for p in pairs], signals, self.sched_,
            seed=seed, n_draws=n_draws, codec=self.codec_,
        )
