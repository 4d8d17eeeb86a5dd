"""Contrastive pre-training of the encoder on the unlabeled pool.

Batches are arranged as consecutive row pairs (2j, 2j+1) holding the two
augmented views of sample j. The debiased loss corrects the negative
term for the chance that a negative shares the anchor's class; with a
zero class prior it reduces exactly to the standard pairwise loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AugPolicy, Dataset, augment, batches
from .errors import ConfigError, NumericError
from .model import Model, sgd_step
from .tensor import Tensor, exp, log, maximum, scale, tmean, transpose, tsum

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    class_prior: float = 0.1
    batch_size: int = 64
    epochs: int = 30
    lr: float = 0.15
    momentum: float = 0.9
    weak: AugPolicy = field(default_factory=AugPolicy)
    seed: int = 0

    def validate(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.class_prior < 1.0:
            raise ConfigError("class_prior must lie in [0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.weak.mask_frac != 0.0:
            raise ConfigError("the pre-training (weak) policy must not mask coordinates")


def _pair_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    pos = np.zeros((n, n))
    idx = np.arange(n)
    pos[idx, idx ^ 1] = 1.0
    neg = 1.0 - pos - np.eye(n)
    return pos, neg


def _check_pairs(z: Tensor) -> int:
    n = z.data.shape[0]
    if z.data.ndim != 2 or n % 2 != 0:
        raise ConfigError("projections must be an even number of rows (view pairs)")
    norms = np.sqrt((z.data ** 2).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ConfigError("projection rows must be unit-norm")
    return n


def nt_xent_loss(z: Tensor, temperature: float) -> Tensor:
    """Mean over all 2B anchors of -log( pos / (pos + sum of negatives) )."""
    n = _check_pairs(z)
    if n < 4:  # a single pair has no negatives
        return Tensor(0.0)
    pos_mask, neg_mask = _pair_masks(n)
    e = exp(scale(z @ transpose(z), 1.0 / temperature))
    pos = tsum(e * Tensor(pos_mask), axis=1)
    neg = tsum(e * Tensor(neg_mask), axis=1)
    return tmean(log(pos + neg) - log(pos))


def debiased_loss(z: Tensor, temperature: float, class_prior: float) -> Tensor:
    """Contrastive loss with the false-negative correction.

    Per anchor, the mean exponentiated negative similarity is shifted by
    -prior/(1-prior) times the positive term and floored at e^{-1/t};
    at an exact tie with the floor the gradient takes the floor branch.
    """
    if not 0.0 <= class_prior < 1.0:
        raise ConfigError("class_prior must lie in [0, 1)")
    n = _check_pairs(z)
    if n < 4:
        return Tensor(0.0)
    n_neg = n - 2
    pos_mask, neg_mask = _pair_masks(n)
    e = exp(scale(z @ transpose(z), 1.0 / temperature))
    pos = tsum(e * Tensor(pos_mask), axis=1)
    neg_mean = scale(tsum(e * Tensor(neg_mask), axis=1), 1.0 / n_neg)
    g_raw = scale(neg_mean + scale(pos, -class_prior), 1.0 / (1.0 - class_prior))
    g = maximum(g_raw, math.exp(-1.0 / temperature))
    return tmean(log(pos + scale(g, float(n_neg))) - log(pos))


def pretrain(model: Model, dataset: Dataset, cfg: ContrastiveConfig) -> list[float]:
    """Minimize the debiased loss over two weak views per sample.

    Returns the per-epoch mean loss history; the model is updated in
    place. Labels are never touched: only dataset.features is read.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = model.param_groups("pretrain")
    history: list[float] = []
    for epoch in range(cfg.epochs):
        losses = []
        for batch_idx in batches(dataset, cfg.batch_size, rng, which="all"):
            views = np.empty((2 * batch_idx.size, dataset.dim))
            for j, i in enumerate(batch_idx):
                x = dataset.features[i]
                views[2 * j] = augment(x, cfg.weak, rng)
                views[2 * j + 1] = augment(x, cfg.weak, rng)
            try:
                z = model.forward(views, mode="project")
                loss = debiased_loss(z, cfg.temperature, cfg.class_prior)
                model.zero_grad()
                if loss.requires_grad:
                    loss.backward()
                for ps in params:
                    sgd_step(ps, cfg.lr, cfg.momentum)
            except NumericError as err:
                raise NumericError(f"pre-training diverged at epoch {epoch}: {err}") from err
            losses.append(loss.item())
        history.append(float(np.mean(losses)) if losses else 0.0)
    return history
