"""Active labelers: pick which pool items to send to the labeling oracle.

All strategies receive encoder features reduced by PCA, spend an exact
count, never repeat an index, and break ties by lowest index so repeat
runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import BudgetError, ConfigError, DataError, DomainError, NumericError
from .model import ParamSet, glorot_uniform, sgd_step
from .tensor import (Tensor, add, bce_with_logits, exp, matmul, mul, relu,
                     scale, sigmoid, tmean, tsum)

PCA_TOL = 1e-10
PCA_MAX_ITER = 10000


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "random"
    budget: int = 20
    per_class_seed: int = 1
    pca_dim: int = 8
    rounds: int = 1
    vaal_latent: int = 8
    vaal_hidden: int = 32
    vaal_epochs: int = 30
    vaal_batch: int = 64
    vaal_adv_weight: float = 1.0
    vaal_lr: float = 0.05
    vaal_pick: str = "lowest"
    seed: int = 0

    def validate(self):
        if self.strategy not in ("random", "coreset", "vaal"):
            raise ConfigError(f"unknown selection strategy: {self.strategy}")
        if self.per_class_seed < 0 or self.budget < 0:
            raise ConfigError("budget and per_class_seed must be non-negative")
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.vaal_pick not in ("lowest", "uncertain"):
            raise ConfigError("vaal_pick must be 'lowest' or 'uncertain'")


@dataclass
class SelectionResult:
    indices: list[int]
    deltas: list[float]
    scores: np.ndarray | None = None

    def write_csv(self, path):
        """step,index,delta_or_score rows (empty third field for random)."""
        with open(path, "w") as fh:
            fh.write("step,index,delta_or_score\n")
            for step, idx in enumerate(self.indices):
                if self.deltas:
                    extra = format(self.deltas[step], ".17g")
                elif self.scores is not None:
                    extra = format(float(self.scores[idx]), ".17g")
                else:
                    extra = ""
                fh.write(f"{step},{idx},{extra}\n")


def seed_select(dataset: Dataset, per_class: int, rng: np.random.Generator) -> list[int]:
    """Uniform per-class draw for the initial labeled set (classes in order)."""
    if per_class == 0:
        return []
    picked = []
    by_class = dataset.class_indices()
    for c in range(dataset.n_classes):
        pool = by_class[c]
        if pool.size < per_class:
            raise DataError(f"class {c} has {pool.size} examples, need {per_class}")
        picked.extend(int(i) for i in rng.choice(pool, size=per_class, replace=False))
    return picked


def random_select(pool, count: int, rng: np.random.Generator) -> SelectionResult:
    pool = np.asarray(pool, dtype=np.int64)
    if count > pool.size:
        raise BudgetError(f"cannot pick {count} from a pool of {pool.size}")
    chosen = rng.choice(pool, size=count, replace=False)
    return SelectionResult([int(i) for i in chosen], [])


def pca_reduce(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal components by power iteration with deflation.

    Returns (components (k, d) with orthonormal rows, projected (n, k)).
    Components follow the sign convention that their largest-magnitude
    entry is positive. Covariance is the population form (divide by n).
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > d:
        raise ConfigError(f"pca target dim {k} exceeds input dim {d}")
    if n < 2:
        raise DataError("pca needs at least 2 samples")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    start_rng = np.random.default_rng(7_654_321)
    components = np.zeros((k, d))
    for comp in range(k):
        v = start_rng.standard_normal(d)
        v -= components[:comp].T @ (components[:comp] @ v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise NumericError("degenerate power-iteration start")
        v /= norm
        for it in range(PCA_MAX_ITER):
            w = cov @ v
            w -= components[:comp].T @ (components[:comp] @ w)
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                # zero eigenvalue: the deflated start vector already lies
                # in the null space, keep it
                break
            w /= norm
            if np.linalg.norm(w - v) < PCA_TOL:
                v = w
                break
            v = w
        else:
            raise NumericError(f"power iteration did not converge in {PCA_MAX_ITER} steps")
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        components[comp] = v
        lam = float(v @ cov @ v)
        cov = cov - lam * np.outer(v, v)
    return components, centered @ components.T


def coverage_radius(embeddings: np.ndarray, centers) -> float:
    """Max over points of the distance to the nearest center."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)
    if centers.size == 0:
        raise DomainError("coverage radius needs at least one center")
    emb = np.asarray(embeddings, dtype=np.float64)
    dist = np.sqrt(((emb[:, None, :] - emb[None, centers, :]) ** 2).sum(axis=2))
    return float(dist.min(axis=1).max())


def coreset_select(embeddings: np.ndarray, labeled, count: int) -> SelectionResult:
    """Greedy k-center: repeatedly take the pool point farthest from all centers.

    Records the maximized min-distance per step; ties go to the lowest
    index. With no initial centers the first pick maximizes distance to
    the pool centroid.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    labeled = np.asarray(labeled, dtype=np.int64).reshape(-1)
    in_pool = np.ones(n, dtype=bool)
    in_pool[labeled] = False
    if count > int(in_pool.sum()):
        raise BudgetError(f"cannot pick {count} from a pool of {int(in_pool.sum())}")

    if labeled.size:
        diff = emb[:, None, :] - emb[None, labeled, :]
        min_dist = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)

    chosen: list[int] = []
    deltas: list[float] = []
    for step in range(count):
        if not chosen and not labeled.size:
            centroid = emb[in_pool].mean(axis=0)
            gain = np.sqrt(((emb - centroid) ** 2).sum(axis=1))
        else:
            gain = min_dist
        masked = np.where(in_pool, gain, -np.inf)
        pick = int(np.argmax(masked))
        chosen.append(pick)
        deltas.append(float(masked[pick]))
        in_pool[pick] = False
        dist_new = np.sqrt(((emb - emb[pick]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, dist_new)
    return SelectionResult(chosen, deltas)


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean KL(N(mu, e^logvar) || N(0, I)) over the batch; always >= 0."""
    term = add(add(Tensor(np.ones_like(mu.data)), logvar),
               scale(add(mul(mu, mu), exp(logvar)), -1.0))
    return scale(tmean(tsum(term, axis=1)), -0.5)


class _VaalNets:
    """VAE (encoder/decoder) plus latent discriminator, all tiny MLPs."""

    def __init__(self, dim: int, hidden: int, latent: int, rng: np.random.Generator):
        self.vae = ParamSet()
        self.vae.add("enc.w", glorot_uniform(dim, hidden, rng))
        self.vae.add("enc.b", np.zeros(hidden))
        self.vae.add("mu.w", glorot_uniform(hidden, latent, rng))
        self.vae.add("mu.b", np.zeros(latent))
        self.vae.add("lv.w", glorot_uniform(hidden, latent, rng))
        self.vae.add("lv.b", np.zeros(latent))
        self.vae.add("dec.w0", glorot_uniform(latent, hidden, rng))
        self.vae.add("dec.b0", np.zeros(hidden))
        self.vae.add("dec.w1", glorot_uniform(hidden, dim, rng))
        self.vae.add("dec.b1", np.zeros(dim))
        self.disc = ParamSet()
        self.disc.add("d.w0", glorot_uniform(latent, hidden, rng))
        self.disc.add("d.b0", np.zeros(hidden))
        self.disc.add("d.w1", glorot_uniform(hidden, 1, rng))
        self.disc.add("d.b1", np.zeros(1))

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = relu(add(matmul(x, self.vae["enc.w"]), self.vae["enc.b"]))
        mu = add(matmul(h, self.vae["mu.w"]), self.vae["mu.b"])
        logvar = add(matmul(h, self.vae["lv.w"]), self.vae["lv.b"])
        return mu, logvar

    def decode(self, z: Tensor) -> Tensor:
        h = relu(add(matmul(z, self.vae["dec.w0"]), self.vae["dec.b0"]))
        return add(matmul(h, self.vae["dec.w1"]), self.vae["dec.b1"])

    def discriminate(self, z: Tensor) -> Tensor:
        h = relu(add(matmul(z, self.disc["d.w0"]), self.disc["d.b0"]))
        return add(matmul(h, self.disc["d.w1"]), self.disc["d.b1"])

    def zero_grad(self):
        self.vae.zero_grad()
        self.disc.zero_grad()


def vaal_fit(features: np.ndarray, labeled_mask: np.ndarray,
             cfg: SelectionConfig) -> np.ndarray:
    """Adversarially train a VAE against a labeled-vs-unlabeled discriminator.

    Returns the discriminator's probability-of-being-labeled for every
    item (evaluated on the latent mean, so scoring is deterministic).
    """
    feats = np.asarray(features, dtype=np.float64)
    mask = np.asarray(labeled_mask, dtype=bool)
    labeled = np.flatnonzero(mask)
    unlabeled = np.flatnonzero(~mask)
    if labeled.size == 0 or unlabeled.size == 0:
        raise DataError("vaal needs both labeled and unlabeled examples")
    rng = np.random.default_rng(cfg.seed)
    nets = _VaalNets(feats.shape[1], cfg.vaal_hidden, cfg.vaal_latent, rng)
    x_lab = feats[labeled]

    for _ in range(cfg.vaal_epochs):
        order = unlabeled[rng.permutation(unlabeled.size)]
        for lo in range(0, order.size, cfg.vaal_batch):
            x_unl = feats[order[lo:lo + cfg.vaal_batch]]
            x = np.concatenate([x_lab, x_unl])
            eps = rng.standard_normal((x.shape[0], cfg.vaal_latent))
            is_unl = np.arange(x.shape[0]) >= x_lab.shape[0]

            # VAE step: reconstruction + KL + fool-the-discriminator term
            xt = Tensor(x)
            mu, logvar = nets.encode(xt)
            z = add(mu, mul(exp(scale(logvar, 0.5)), Tensor(eps)))
            recon = nets.decode(z)
            diff = add(recon, scale(xt, -1.0))
            vae_loss = add(tmean(mul(diff, diff)), gaussian_kl(mu, logvar))
            unl_logits = nets.discriminate(mul(mu, Tensor(is_unl[:, None].astype(float))))
            adv = bce_with_logits(unl_logits, np.ones_like(unl_logits.data))
            vae_loss = add(vae_loss, scale(adv, cfg.vaal_adv_weight))
            nets.zero_grad()
            vae_loss.backward()
            sgd_step(nets.vae, cfg.vaal_lr, 0.9)

            # discriminator step on detached latents
            mu_fixed = mu.detach()
            logits = nets.discriminate(mu_fixed)
            targets = (~is_unl).astype(float)[:, None]
            disc_loss = bce_with_logits(logits, targets)
            nets.zero_grad()
            disc_loss.backward()
            sgd_step(nets.disc, cfg.vaal_lr, 0.9)

    mu_all, _ = nets.encode(Tensor(feats))
    return sigmoid(nets.discriminate(mu_all).data[:, 0])


def vaal_select(scores: np.ndarray, pool, count: int,
                pick: str = "lowest") -> SelectionResult:
    """Label the pool items the discriminator is least sure are labeled.

    pick='lowest' takes the smallest probability-of-being-labeled;
    pick='uncertain' takes scores closest to 0.5. Ties: lowest index.
    """
    pool = np.asarray(pool, dtype=np.int64)
    if count > pool.size:
        raise BudgetError(f"cannot pick {count} from a pool of {pool.size}")
    scores = np.asarray(scores, dtype=np.float64)
    key = scores[pool] if pick == "lowest" else np.abs(scores[pool] - 0.5)
    order = np.lexsort((pool, key))
    chosen = [int(pool[i]) for i in order[:count]]
    return SelectionResult(chosen, [], scores=scores)
