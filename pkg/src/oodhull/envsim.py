"""Synthetic multi-environment classification data.

Three desk-scale task families with controllable shifts:

* ``two_moons`` - 2-d interleaved half-circles; shift = rotation about the
  origin (the canonical structure is centered there).
* ``gauss_blobs`` - 2-d isotropic Gaussian blobs on a circle of radius 2;
  shifts = rotation, or ``style`` variants that displace the blob means.
* ``glyphs8x8`` - 64-d digit-like bitmaps in [0, 1]; shifts = rotation
  (bilinear, about the grid center), Gaussian blur, or ``style`` variants
  that perturb the glyph templates.

Every environment carries a deterministic ground-truth labeling function
(nearest canonical structure), which agrees exactly with the generator's
labels when the task's feature noise is zero.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, UnsupportedTransformError, ValidationError
from .rng import derive_rng
from .simplex import as_weights

FAMILIES = ("two_moons", "gauss_blobs", "glyphs8x8")

# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family: str
    num_classes: int = 2
    noise: float = 0.1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown task family {self.family!r}")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.family == "two_moons" and self.num_classes != 2:
            raise ValidationError("two_moons is a binary task")
        if self.family == "glyphs8x8" and self.num_classes > 10:
            raise ValidationError("glyphs8x8 provides at most 10 classes")
        if self.noise < 0:
            raise ValidationError("noise must be nonnegative")

    @property
    def feature_dim(self) -> int:
        return 64 if self.family == "glyphs8x8" else 2

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "family": self.family,
            "num_classes": self.num_classes,
            "noise": self.noise,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        try:
            return TaskSpec(
                task_id=d["task_id"],
                family=d["family"],
                num_classes=int(d.get("num_classes", 2)),
                noise=float(d.get("noise", 0.1)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"task spec missing field {exc}") from exc


@dataclass(frozen=True)
class Rotation:
    theta: float  # degrees, counterclockwise


@dataclass(frozen=True)
class Blur:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("blur sigma must be nonnegative")


@dataclass(frozen=True)
class Style:
    style_id: str


Transform = Rotation | Blur | Style

IDENTITY = Rotation(0.0)


def transform_to_dict(t: Transform) -> dict:
    if isinstance(t, Rotation):
        return {"kind": "rotation", "theta": t.theta}
    if isinstance(t, Blur):
        return {"kind": "blur", "sigma": t.sigma}
    if isinstance(t, Style):
        return {"kind": "style", "style_id": t.style_id}
    raise ConfigurationError(f"unknown transform {t!r}")


def transform_from_dict(d: dict) -> Transform:
    kind = d.get("kind")
    if kind == "rotation":
        return Rotation(float(d["theta"]))
    if kind == "blur":
        return Blur(float(d["sigma"]))
    if kind == "style":
        return Style(str(d["style_id"]))
    raise ConfigurationError(f"unknown transform kind {kind!r}")


_SUPPORTED = {
    "two_moons": (Rotation,),
    "gauss_blobs": (Rotation, Style),
    "glyphs8x8": (Rotation, Blur, Style),
}


@dataclass(frozen=True)
class EnvSpec:
    task: TaskSpec
    transform: Transform
    env_id: str

    def __post_init__(self):
        if isinstance(self.transform, Rotation) and not 0 <= self.transform.theta < 360:
            raise ValidationError("environment rotation angle must lie in [0, 360)")
        if not isinstance(self.transform, _SUPPORTED[self.task.family]):
            raise ConfigurationError(
                f"{type(self.transform).__name__} not supported for {self.task.family}"
            )

    @property
    def feature_dim(self) -> int:
        return self.task.feature_dim

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "transform": transform_to_dict(self.transform),
            "env_id": self.env_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "EnvSpec":
        try:
            return EnvSpec(
                task=TaskSpec.from_dict(d["task"]),
                transform=transform_from_dict(d["transform"]),
                env_id=str(d["env_id"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"env spec missing field {exc}") from exc


@dataclass(frozen=True)
class EnvironmentSet:
    envs: tuple[EnvSpec, ...]
    target: EnvSpec | None = None

    def __post_init__(self):
        envs = tuple(self.envs)
        object.__setattr__(self, "envs", envs)
        if len(envs) < 1:
            raise ValidationError("need at least one source environment")
        ids = [e.env_id for e in envs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate env_id among sources: {ids}")
        if self.target is not None and self.target.env_id in ids:
            raise ValidationError("target env_id must differ from all sources")

    @property
    def num_sources(self) -> int:
        return len(self.envs)

    def to_dict(self) -> dict:
        d = {"envs": [e.to_dict() for e in self.envs]}
        if self.target is not None:
            d["target"] = self.target.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "EnvironmentSet":
        target = d.get("target")
        return EnvironmentSet(
            envs=tuple(EnvSpec.from_dict(e) for e in d["envs"]),
            target=EnvSpec.from_dict(target) if target else None,
        )


@dataclass
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray
    env_ids: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.env_ids = np.asarray(self.env_ids)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-d matrix")
        if self.labels.shape != (n,) or self.env_ids.shape != (n,):
            raise ValidationError("row counts of features/labels/env_ids disagree")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite entries")
        if n and self.labels.min() < 0:
            raise ValidationError("labels must be nonnegative")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "LabeledBatch":
        idx = np.asarray(idx)
        return LabeledBatch(self.features[idx], self.labels[idx], self.env_ids[idx])


def concat_batches(batches) -> LabeledBatch:
    batches = list(batches)
    return LabeledBatch(
        np.concatenate([b.features for b in batches]),
        np.concatenate([b.labels for b in batches]),
        np.concatenate([b.env_ids.astype(str) for b in batches]),
    )


# ---------------------------------------------------------------------------
# Canonical structures

_MOON_GRID = np.linspace(0.0, np.pi, 2048)


def _moon_points(label: int, t: np.ndarray) -> np.ndarray:
    # Canonical two-moons, centered at the origin. Label 0 is the upper moon.
    if label == 0:
        return np.stack([np.cos(t) - 0.5, np.sin(t) - 0.25], axis=1)
    return np.stack([0.5 - np.cos(t), 0.25 - np.sin(t)], axis=1)


_MOON_CURVES = np.stack([_moon_points(0, _MOON_GRID), _moon_points(1, _MOON_GRID)])

_GLYPH_ROWS = [
    "..####.. ...##... ..####.. .#####.. ....##.. .######. ..####.. .######. ..####.. ..####..",
    ".#....#. ..###... .#....#. ......#. ...###.. .#...... .#...... ......#. .#....#. .#....#.",
    ".#...##. ....#... ......#. ......#. ..#.##.. .#...... .#...... .....#.. .#....#. .#....#.",
    ".#..#.#. ....#... .....#.. ..####.. .#..##.. .#####.. .#####.. ....#... ..####.. ..#####.",
    ".#.#..#. ....#... ....#... ......#. .######. ......#. .#....#. ...#.... .#....#. ......#.",
    ".##...#. ....#... ...#.... ......#. ....##.. ......#. .#....#. ...#.... .#....#. ......#.",
    ".#....#. ....#... ..#..... .#....#. ....##.. .#....#. .#....#. ...#.... .#....#. .#....#.",
    "..####.. ..#####. .######. ..####.. ....##.. ..####.. ..####.. ...#.... ..####.. ..####..",
]


def _glyph_templates() -> np.ndarray:
    grids = np.zeros((10, 8, 8))
    for r, row in enumerate(_GLYPH_ROWS):
        cells = row.split()
        for c, cell in enumerate(cells):
            grids[c, r] = [1.0 if ch == "#" else 0.0 for ch in cell]
    return grids


_GLYPHS = _glyph_templates()


def _blob_means(num_classes: int) -> np.ndarray:
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    return 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _style_blob_offsets(style_id: str, num_classes: int) -> np.ndarray:
    rng = derive_rng(0, "style-blobs", style_id, num_classes)
    return rng.uniform(-1.0, 1.0, size=(num_classes, 2))


def _style_glyph_templates(style_id: str, num_classes: int) -> np.ndarray:
    rng = derive_rng(0, "style-glyphs", style_id)
    shift = rng.integers(-1, 2, size=2)
    styled = np.empty((num_classes, 8, 8))
    for c in range(num_classes):
        base = np.roll(_GLYPHS[c], tuple(shift), axis=(0, 1))
        bump = rng.normal(0.0, 1.0, size=(8, 8))
        bump = _blur_grids(bump[None], 0.8)[0]
        bump *= 0.35 / max(np.abs(bump).max(), 1e-12)
        styled[c] = np.clip(base + bump, 0.0, 1.0)
    return styled


# ---------------------------------------------------------------------------
# Feature transforms


def _rotate_points(points: np.ndarray, theta_deg: float) -> np.ndarray:
    rad = np.deg2rad(theta_deg)
    c, s = np.cos(rad), np.sin(rad)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T


def _rotate_grids(grids: np.ndarray, theta_deg: float) -> np.ndarray:
    """Bilinear rotation of (n, 8, 8) grids about the grid center; zero fill."""
    theta = theta_deg % 360.0
    if theta == 0.0:
        return grids.copy()
    rad = np.deg2rad(theta)
    c, s = np.cos(rad), np.sin(rad)
    rows, cols = np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij")
    # x right, y up, origin at the grid center
    x, y = cols - 3.5, 3.5 - rows
    xs, ys = c * x + s * y, -s * x + c * y  # inverse rotation
    src_c, src_r = xs + 3.5, 3.5 - ys
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr, fc = src_r - r0, src_c - c0

    def fetch(rr, cc):
        valid = (rr >= 0) & (rr < 8) & (cc >= 0) & (cc < 8)
        rrc, ccc = np.clip(rr, 0, 7), np.clip(cc, 0, 7)
        vals = grids[:, rrc, ccc]
        return np.where(valid, vals, 0.0)

    out = (
        fetch(r0, c0) * (1 - fr) * (1 - fc)
        + fetch(r0, c0 + 1) * (1 - fr) * fc
        + fetch(r0 + 1, c0) * fr * (1 - fc)
        + fetch(r0 + 1, c0 + 1) * fr * fc
    )
    return out


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def _blur_grids(grids: np.ndarray, sigma: float) -> np.ndarray:
    """Separable discrete-Gaussian blur with reflective padding."""
    if sigma == 0.0:
        return grids.copy()
    k = _gaussian_kernel(sigma)
    out = ndimage.convolve1d(grids, k, axis=1, mode="reflect")
    return ndimage.convolve1d(out, k, axis=2, mode="reflect")


def apply_transform(batch: LabeledBatch, transform: Transform) -> LabeledBatch:
    """Apply a feature-space transform; labels and provenance are untouched.

    Rotation acts on 2-d coordinates (isometry) or 8x8 grids (bilinear);
    blur acts on 8x8 grids only. Style is a sampling-time transform (it
    redefines the generating structures), so it is rejected here.
    """
    if isinstance(transform, Rotation):
        if batch.dim == 2:
            feats = _rotate_points(batch.features, transform.theta)
        elif batch.dim == 64:
            feats = _rotate_grids(batch.features.reshape(-1, 8, 8), transform.theta)
            feats = feats.reshape(-1, 64)
        else:
            raise UnsupportedTransformError(f"rotation undefined for dim {batch.dim}")
    elif isinstance(transform, Blur):
        if batch.dim != 64:
            raise UnsupportedTransformError("blur is defined on 8x8 grids only")
        feats = _blur_grids(batch.features.reshape(-1, 8, 8), transform.sigma).reshape(-1, 64)
    elif isinstance(transform, Style):
        raise UnsupportedTransformError("style redefines the generator, not features")
    else:
        raise ConfigurationError(f"unknown transform {transform!r}")
    return LabeledBatch(feats, batch.labels.copy(), batch.env_ids.copy())


# ---------------------------------------------------------------------------
# Per-environment generating structures


def _env_structures(env: EnvSpec) -> np.ndarray:
    """The environment's class-conditional structure, transform applied.

    two_moons -> (2, m, 2) curve polylines; gauss_blobs -> (C, 2) means;
    glyphs8x8 -> (C, 8, 8) templates.
    """
    family = env.task.family
    t = env.transform
    if family == "two_moons":
        if not isinstance(t, Rotation):
            raise ConfigurationError("two_moons supports rotation only")
        return np.stack([_rotate_points(c, t.theta) for c in _MOON_CURVES])
    if family == "gauss_blobs":
        means = _blob_means(env.task.num_classes)
        if isinstance(t, Rotation):
            return _rotate_points(means, t.theta)
        if isinstance(t, Style):
            return means + _style_blob_offsets(t.style_id, env.task.num_classes)
        raise ConfigurationError("gauss_blobs supports rotation and style")
    # glyphs8x8
    if isinstance(t, Style):
        return _style_glyph_templates(t.style_id, env.task.num_classes)
    base = _GLYPHS[: env.task.num_classes]
    if isinstance(t, Rotation):
        return _rotate_grids(base, t.theta)
    if isinstance(t, Blur):
        return _blur_grids(base, t.sigma)
    raise ConfigurationError(f"unknown transform {t!r}")


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    # Class-balanced by construction: counts differ by at most one.
    base, extra = divmod(n, num_classes)
    counts = np.full(num_classes, base)
    counts[:extra] += 1
    labels = np.repeat(np.arange(num_classes), counts)
    rng.shuffle(labels)
    return labels


def sample_environment(env: EnvSpec, n: int, seed: int) -> LabeledBatch:
    """Draw n labeled samples from the environment's distribution.

    Deterministic given (env, n, seed); classes are balanced by construction
    (per-class counts differ by at most one before shuffling).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = derive_rng(seed, "sample", env.env_id, env.task.task_id, n)
    family = env.task.family
    noise = env.task.noise
    labels = _balanced_labels(n, env.task.num_classes, rng)

    if family == "two_moons":
        t = rng.uniform(0.0, np.pi, size=n)
        base = np.where(
            labels[:, None] == 0,
            np.stack([np.cos(t) - 0.5, np.sin(t) - 0.25], axis=1),
            np.stack([0.5 - np.cos(t), 0.25 - np.sin(t)], axis=1),
        )
        feats = _rotate_points(base, env.transform.theta)
        if noise:
            feats = feats + rng.normal(0.0, noise, size=feats.shape)
    elif family == "gauss_blobs":
        feats = _env_structures(env)[labels]
        if noise:
            feats = feats + rng.normal(0.0, noise, size=feats.shape)
    else:  # glyphs8x8
        feats = _env_structures(env)[labels].reshape(n, 64)
        if noise:
            feats = np.clip(feats + rng.normal(0.0, noise, size=feats.shape), 0.0, 1.0)

    env_ids = np.full(n, env.env_id, dtype=object).astype(str)
    return LabeledBatch(feats, labels, env_ids)


def ground_truth_label(env: EnvSpec, x: np.ndarray) -> int:
    """Label of a single feature vector under the environment's ground truth."""
    return int(ground_truth_labels(env, np.asarray(x, dtype=float)[None, :])[0])


def ground_truth_labels(env: EnvSpec, xs: np.ndarray) -> np.ndarray:
    """Vectorized ground truth: nearest class structure, ties to lower index.

    Agrees exactly with sample_environment's labels at noise 0; with noise,
    agreement degrades gracefully (structures are well separated: the moons
    never touch and distinct glyph templates are >= 2.4 apart in L2).
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != env.feature_dim:
        raise ValidationError(
            f"expected features of dim {env.feature_dim}, got shape {xs.shape}"
        )
    family = env.task.family
    structures = _env_structures(env)
    if family == "two_moons":
        d = np.stack(
            [
                np.min(np.linalg.norm(xs[:, None, :] - curve[None], axis=2), axis=1)
                for curve in structures
            ],
            axis=1,
        )
        return np.argmin(d, axis=1)
    if family == "gauss_blobs":
        d = np.linalg.norm(xs[:, None, :] - structures[None], axis=2)
        return np.argmin(d, axis=1)
    flat = structures.reshape(env.task.num_classes, 64)
    d = np.linalg.norm(xs[:, None, :] - flat[None], axis=2)
    return np.argmin(d, axis=1)


def mixture_sample(envs: EnvironmentSet, alpha, n: int, seed: int) -> LabeledBatch:
    """Draw n samples from the alpha-mixture of the source environments.

    Each draw picks source i with probability alpha_i; env_ids record the
    realized provenance.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    w = as_weights(alpha, envs.num_sources)
    rng = derive_rng(seed, "mixture", *[e.env_id for e in envs.envs])
    p = w.alpha / w.alpha.sum()  # exact renormalization for rng.choice
    comp = rng.choice(envs.num_sources, size=n, p=p)
    feats = np.empty((n, envs.envs[0].feature_dim))
    labels = np.empty(n, dtype=np.int64)
    env_ids = np.empty(n, dtype=object)
    for i, env in enumerate(envs.envs):
        mask = comp == i
        k = int(mask.sum())
        if k == 0:
            continue
        part = sample_environment(env, k, seed=int(rng.integers(2**62)))
        feats[mask] = part.features
        labels[mask] = part.labels
        env_ids[mask] = env.env_id
    return LabeledBatch(feats, labels, env_ids.astype(str))
