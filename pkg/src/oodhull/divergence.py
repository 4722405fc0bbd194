"""Divergence between environments under restricted hypothesis classes.

Two routes:

* ``exact_h_divergence`` - on small finite distributions, the divergence
  under the class of all support subsets. It equals twice the total
  variation distance and serves as the test oracle.
* ``proxy_h_divergence`` - on sampled data, a domain-discriminator proxy:
  train a classifier to tell the two samples apart and convert held-out
  accuracy into a divergence value ``2 * |2 * acc - 1|``. The
  ``predictor_class`` kind trains an MLP on domain labels; the ``h_tilde``
  kind searches thresholded disagreements between independently trained
  label predictors (a pool), which is the class the hull module uses.

Estimates are symmetrized exactly, live in [0, 2], and carry a binomial
standard error.
"""

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .envsim import EnvironmentSet, LabeledBatch, concat_batches, sample_environment
from .errors import ConfigurationError, EstimationError, ValidationError
from .rng import derive_rng

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.1, 0.95, 0.1), 2))


@dataclass(frozen=True)
class FiniteDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if len(support) != probs.size:
            raise ValidationError("support and probs lengths differ")
        if len(support) > 20:
            raise ValidationError("finite oracle supports at most 20 points")
        if len(set(support)) != len(support):
            raise ValidationError("support points must be distinct")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError("probs must be nonnegative and sum to 1")


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    stderr: float
    method: str  # "exact" | "discriminator_proxy"
    n_used: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not 0.0 <= self.value <= 2.0:
            raise ValidationError(f"divergence value {self.value} outside [0, 2]")
        if self.stderr < 0:
            raise ValidationError("stderr must be nonnegative")


@dataclass(frozen=True)
class HypothesisClassSpec:
    kind: str  # "all_subsets" | "predictor_class" | "h_tilde"
    hidden: tuple[int, ...] = (32, 32)
    threshold_grid: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if self.kind not in ("all_subsets", "predictor_class", "h_tilde"):
            raise ConfigurationError(f"unknown hypothesis class kind {self.kind!r}")
        if any(not 0.0 <= t <= 1.0 for t in self.threshold_grid):
            raise ValidationError("threshold grid must lie within [0, 1]")


@dataclass
class ProxyConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    held_fraction: float = 0.3
    folds: int = 3
    pool_size: int = 5
    pool_epochs: int = 30
    n_per_side: int = 2000
    seed: int = 0


def exact_h_divergence(p: FiniteDistribution, q: FiniteDistribution) -> DivergenceEstimate:
    """Largest probability-mass gap any support subset can witness, doubled.

    The maximizing subset is {i : p_i > q_i}, so the value is computed from
    the positive part of p - q directly.
    """
    if p.support != q.support:
        raise ValidationError("distributions must share the same support list")
    gap = p.probs - q.probs
    value = 2.0 * float(gap[gap > 0].sum())
    return DivergenceEstimate(value=min(value, 2.0), stderr=0.0, method="exact")


# ---------------------------------------------------------------------------
# Discriminator proxy


def _split_indices(n: int, held_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_held = max(1, int(round(held_fraction * n)))
    return order[n_held:], order[:n_held]


def _directed_discriminator_value(
    x0: np.ndarray, x1: np.ndarray, spec: HypothesisClassSpec, cfg: ProxyConfig, seed: int
) -> tuple[float, float]:
    """One direction of the domain-classifier proxy: mean over folds."""
    n_bal = min(len(x0), len(x1))
    values, variances = [], []
    for fold in range(cfg.folds):
        rng = derive_rng(seed, "fold", fold)
        a = x0[rng.choice(len(x0), n_bal, replace=False)] if len(x0) > n_bal else x0
        b = x1[rng.choice(len(x1), n_bal, replace=False)] if len(x1) > n_bal else x1
        tr_a, he_a = _split_indices(n_bal, cfg.held_fraction, rng)
        tr_b, he_b = _split_indices(n_bal, cfg.held_fraction, rng)
        feats = np.concatenate([a[tr_a], b[tr_b]])
        doms = np.concatenate([np.zeros(len(tr_a), np.int64), np.ones(len(tr_b), np.int64)])
        batch = LabeledBatch(feats, doms, np.full(len(doms), "d", dtype=object).astype(str))
        net = nnet.init_predictor((feats.shape[1], *spec.hidden, 2), seed=int(rng.integers(2**62)))
        train_cfg = nnet.TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            weight_decay=0.0,
            momentum=cfg.momentum,
            schedule="cosine",
            seed=int(rng.integers(2**62)),
        )
        try:
            net, _ = nnet.train(net, batch, train_cfg)
        except nnet.TrainingDivergedError as exc:
            raise EstimationError(
                "discriminator training diverged",
                {"fold": fold, "epoch": exc.epoch, "n_per_side": n_bal},
            ) from exc
        held = np.concatenate([a[he_a], b[he_b]])
        held_dom = np.concatenate([np.zeros(len(he_a)), np.ones(len(he_b))])
        pred = np.argmax(nnet.scores(net, held), axis=1)
        acc = float((pred == held_dom).mean())
        n_held = len(held)
        values.append(np.clip(2.0 * abs(2.0 * acc - 1.0), 0.0, 2.0))
        variances.append(16.0 * acc * (1.0 - acc) / n_held)
    return float(np.mean(values)), float(np.sum(variances)) / cfg.folds**2


def _batch_content_key(batch: LabeledBatch) -> bytes:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(batch.features).tobytes())
    h.update(np.ascontiguousarray(batch.labels).tobytes())
    return h.digest()


def train_predictor_pool(
    pooled: LabeledBatch, spec: HypothesisClassSpec, cfg: ProxyConfig, seed: int
) -> list[nnet.Predictor]:
    """Independently seeded label predictors fit on the pooled batch."""
    num_classes = int(pooled.labels.max()) + 1
    arch = (pooled.dim, *spec.hidden, num_classes)
    pool = []
    for k in range(cfg.pool_size):
        rng = derive_rng(seed, "pool", k)
        net = nnet.init_predictor(arch, seed=int(rng.integers(2**62)))
        train_cfg = nnet.TrainConfig(
            epochs=cfg.pool_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            weight_decay=1e-5,
            momentum=cfg.momentum,
            schedule="cosine",
            seed=int(rng.integers(2**62)),
        )
        net, _ = nnet.train(net, pooled, train_cfg)
        pool.append(net)
    return pool


def disagreement_features(pool: list[nnet.Predictor], x: np.ndarray) -> np.ndarray:
    """Pairwise predictive disagreement, one column per predictor pair.

    Disagreement between two predictors at x is the total variation between
    their predicted class distributions, which for binary heads reduces to
    |f(x) - f'(x)| on the positive-class probability.
    """
    probs = [nnet.predict_proba(net, x) for net in pool]
    cols = []
    for i in range(len(pool)):
        for j in range(i + 1, len(pool)):
            cols.append(0.5 * np.abs(probs[i] - probs[j]).sum(axis=1))
    return np.stack(cols, axis=1)


def _threshold_rates(feats: np.ndarray, grid) -> np.ndarray:
    """Mean activation of every (pair, threshold) hypothesis, flattened."""
    # feats: (n, n_pairs); result: (n_pairs * len(grid),)
    rates = [(feats > t).mean(axis=0) for t in grid]
    return np.concatenate(rates)


def _h_tilde_value(
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    spec: HypothesisClassSpec,
    cfg: ProxyConfig,
    seed: int,
) -> tuple[float, float]:
    """Best thresholded-disagreement witness, selected on a train split and
    scored on the held-out split."""
    values, variances = [], []
    for fold in range(cfg.folds):
        rng = derive_rng(seed, "htilde-fold", fold)
        tr_a, he_a = _split_indices(len(feats_a), cfg.held_fraction, rng)
        tr_b, he_b = _split_indices(len(feats_b), cfg.held_fraction, rng)
        gap_train = np.abs(
            _threshold_rates(feats_a[tr_a], spec.threshold_grid)
            - _threshold_rates(feats_b[tr_b], spec.threshold_grid)
        )
        best = int(np.argmax(gap_train))
        ra = _threshold_rates(feats_a[he_a], spec.threshold_grid)[best]
        rb = _threshold_rates(feats_b[he_b], spec.threshold_grid)[best]
        values.append(np.clip(2.0 * abs(ra - rb), 0.0, 2.0))
        variances.append(
            4.0 * (ra * (1 - ra) / len(he_a) + rb * (1 - rb) / len(he_b))
        )
    return float(np.mean(values)), float(np.sum(variances)) / cfg.folds**2


def proxy_h_divergence(
    a: LabeledBatch,
    b: LabeledBatch,
    spec: HypothesisClassSpec,
    cfg: ProxyConfig | None = None,
) -> DivergenceEstimate:
    """Sampled-data divergence estimate under the given hypothesis class.

    Exactly symmetric in (a, b): the discriminator kind averages the two
    directed runs under shared seeds; the h_tilde kind canonicalizes the
    batch order by content hash before building its predictor pool.
    """
    cfg = cfg or ProxyConfig()
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("both batches must be non-empty")
    if a.dim != b.dim:
        raise ValidationError("batches must share a feature dimension")
    if spec.kind == "all_subsets":
        raise ConfigurationError("all_subsets is the finite oracle; use exact_h_divergence")

    if spec.kind == "predictor_class":
        v01, var01 = _directed_discriminator_value(a.features, b.features, spec, cfg, cfg.seed)
        v10, var10 = _directed_discriminator_value(b.features, a.features, spec, cfg, cfg.seed)
        value = (v01 + v10) / 2.0
        stderr = float(np.sqrt(var01 + var10) / 2.0)
        return DivergenceEstimate(value, stderr, "discriminator_proxy", (len(a), len(b)))

    # h_tilde: order-canonical pool, then thresholded disagreement search
    first, second = a, b
    swapped = _batch_content_key(a) > _batch_content_key(b)
    if swapped:
        first, second = b, a
    pooled = concat_batches([first, second])
    pool = train_predictor_pool(pooled, spec, cfg, cfg.seed)
    feats_first = disagreement_features(pool, first.features)
    feats_second = disagreement_features(pool, second.features)
    value, var = _h_tilde_value(feats_first, feats_second, spec, cfg, cfg.seed)
    return DivergenceEstimate(value, float(np.sqrt(var)), "discriminator_proxy", (len(a), len(b)))


# ---------------------------------------------------------------------------
# Pairwise matrices


@dataclass
class DivergenceMatrix:
    env_ids: list[str]
    values: np.ndarray
    stderrs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.stderrs is None:
            self.stderrs = np.zeros_like(self.values)
        self.stderrs = np.asarray(self.stderrs, dtype=float)

    def max_offdiag(self) -> float:
        if len(self.env_ids) == 1:
            return 0.0
        mask = ~np.eye(len(self.env_ids), dtype=bool)
        return float(self.values[mask].max())

    def write_csv(self, path: str) -> None:
        """Values CSV plus a companion `<path minus extension>.stderr.csv`."""
        for matrix, out in ((self.values, path), (self.stderrs, _stderr_path(path))):
            with open(out, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["env_id", *self.env_ids])
                for env_id, row in zip(self.env_ids, matrix):
                    writer.writerow([env_id, *[f"{v:.9g}" for v in row]])


def _stderr_path(path: str) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}.stderr.{ext}" if dot else f"{path}.stderr"


def pairwise_divergence_matrix(
    envs: EnvironmentSet, spec: HypothesisClassSpec, cfg: ProxyConfig | None = None
) -> DivergenceMatrix:
    """Symmetric matrix of estimated divergences between the source envs."""
    cfg = cfg or ProxyConfig()
    ids = [e.env_id for e in envs.envs]
    n_env = len(ids)
    values = np.zeros((n_env, n_env))
    stderrs = np.zeros((n_env, n_env))
    samples = [
        sample_environment(env, cfg.n_per_side, seed=derive_rng(cfg.seed, "mat", env.env_id).integers(2**62))
        for env in envs.envs
    ]
    for i in range(n_env):
        for j in range(i + 1, n_env):
            pair_cfg = ProxyConfig(**{**cfg.__dict__, "seed": int(derive_rng(cfg.seed, "pair", ids[i], ids[j]).integers(2**62))})
            est = proxy_h_divergence(samples[i], samples[j], spec, pair_cfg)
            values[i, j] = values[j, i] = est.value
            stderrs[i, j] = stderrs[j, i] = est.stderr
    return DivergenceMatrix(ids, values, stderrs)
