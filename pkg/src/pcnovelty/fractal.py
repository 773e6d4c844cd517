"""Fractal point-cloud generation with iterated function systems.

Each class is one randomly drawn IFS; its samples are chaos-game runs under
different seeds, partly overwritten with points from other random attractors
("fractal noise"). Seeds are derived as ``SeedSequence([seed, domain, class, ...,
attempt])`` so classes can be generated independently and in any order.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import normalize_unit_sphere, resample

PROB_FLOOR = 1e-6
# raw uniform maps are expansive or collapse almost always; see sample_ifs
MAX_SPECTRAL_NORM = 0.8
_NOISE_RETRIES = 1000


class DivergentIFSError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IfsSystem:
    """``k`` affine maps ``x -> A[i] @ x + b[i]`` and their sampling probabilities."""

    A: np.ndarray  # (k, 3, 3)
    b: np.ndarray  # (k, 3)
    probs: np.ndarray  # (k,)

    @property
    def k(self):
        return len(self.probs)

    @classmethod
    def from_maps(cls, A, b):
        A = np.ascontiguousarray(A, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if A.ndim != 3 or A.shape[1:] != (3, 3) or b.shape != (A.shape[0], 3):
            raise ValueError("expected A of shape (k, 3, 3) and b of shape (k, 3)")
        if not 2 <= A.shape[0] <= 8:
            raise ValueError(f"an IFS needs 2..8 maps, got {A.shape[0]}")
        weights = np.maximum(np.abs(np.linalg.det(A)), PROB_FLOOR)
        return cls(A, b, weights / weights.sum())


@dataclass(frozen=True)
class FractalConfig:
    points_per_cloud: int = 2048
    variance_threshold: float = 0.05
    noise_ratio: float = 0.2
    chaos_iterations: int = 20_000
    burn_in: int = 100
    max_rejections: int = 1000
    max_spectral_norm: float | None = MAX_SPECTRAL_NORM

    def __post_init__(self):
        if self.points_per_cloud < 1:
            raise ValueError("points_per_cloud must be >= 1")
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ValueError("noise_ratio must lie in [0, 1)")
        if self.chaos_iterations < 1:
            raise ValueError("chaos_iterations must be >= 1")


@dataclass
class FractalDataset:
    clouds: list
    labels: list  # int class index per cloud
    systems: list  # one IfsSystem per class

    def __len__(self):
        return len(self.clouds)


def sample_ifs(rng, max_spectral_norm=MAX_SPECTRAL_NORM):
    """Draw 2..8 maps with entries uniform in [-1, 1].

    Maps whose spectral norm exceeds ``max_spectral_norm`` are scaled down to
    it, which makes every drawn system contractive. Pass ``None`` to keep the
    raw uniform draw; fewer than 1% of those pass the variance filter.
    """
    k = int(rng.integers(2, 9))
    A = rng.uniform(-1.0, 1.0, size=(k, 3, 3))
    b = rng.uniform(-1.0, 1.0, size=(k, 3))
    if max_spectral_norm is not None:
        norms = np.linalg.norm(A, 2, axis=(1, 2))
        scale = np.where(norms > max_spectral_norm, max_spectral_norm / np.maximum(norms, 1e-300), 1.0)
        A = A * scale[:, None, None]
    return IfsSystem.from_maps(A, b)


def chaos_game(ifs, n, rng, burn_in=100):
    """Trace ``n`` attractor points starting from the origin."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cum = np.cumsum(ifs.probs)
    cum[-1] = 1.0
    choices = np.searchsorted(cum, rng.random(burn_in + n), side="right").astype(np.int64)
    np.minimum(choices, ifs.k - 1, out=choices)
    pts = kernels.chaos_iterate(ifs.A, ifs.b, choices, burn_in)
    if not np.isfinite(pts).all():
        raise DivergentIFSError("divergent IFS")
    return pts


def variance_ok(cloud, threshold):
    """True iff every axis of the normalized cloud has variance >= ``threshold``."""
    var = normalize_unit_sphere(cloud).var(axis=0)
    return bool((var >= threshold).all())


def mix_fractal_noise(cloud, ratio, rng, max_spectral_norm=MAX_SPECTRAL_NORM):
    """Overwrite ``round(ratio * n)`` random points with points of another attractor."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    cloud = np.array(cloud, dtype=np.float64)
    n_noise = int(round(ratio * len(cloud)))
    if n_noise == 0:
        return cloud
    idx = rng.choice(len(cloud), size=n_noise, replace=False)
    for _ in range(_NOISE_RETRIES):
        try:
            noise = chaos_game(sample_ifs(rng, max_spectral_norm), n_noise, rng)
        except DivergentIFSError:
            continue
        cloud[idx] = normalize_unit_sphere(noise)
        return cloud
    raise DivergentIFSError("no convergent auxiliary IFS found for noise")


def _rng(seed, *path):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def class_system(class_index, config, seed):
    """Draw the IFS of one class, rejecting degenerate or divergent systems."""
    for attempt in range(config.max_rejections):
        rng = _rng(seed, 0, class_index, attempt)
        ifs = sample_ifs(rng, config.max_spectral_norm)
        try:
            pts = chaos_game(ifs, config.chaos_iterations, rng, config.burn_in)
        except DivergentIFSError:
            continue
        if variance_ok(pts, config.variance_threshold):
            return ifs
    raise RuntimeError(
        f"cannot satisfy variance threshold for class {class_index} "
        f"after {config.max_rejections} draws"
    )


def class_sample(ifs, class_index, sample_index, config, seed):
    for attempt in range(config.max_rejections):
        rng = _rng(seed, 1, class_index, sample_index, attempt)
        try:
            pts = chaos_game(ifs, config.chaos_iterations, rng, config.burn_in)
        except DivergentIFSError:
            continue
        pts = resample(pts, config.points_per_cloud, rng)
        if not variance_ok(pts, config.variance_threshold):
            continue
        pts = normalize_unit_sphere(pts)
        pts = normalize_unit_sphere(mix_fractal_noise(pts, config.noise_ratio, rng, config.max_spectral_norm))
        if variance_ok(pts, config.variance_threshold):
            return pts
    raise RuntimeError(
        f"cannot satisfy variance threshold for class {class_index}, sample {sample_index}"
    )


def generate_fractal_dataset(n_classes, samples_per_class, config=None, seed=0):
    """Generate ``n_classes * samples_per_class`` labeled fractal clouds."""
    config = config or FractalConfig()
    if n_classes < 1 or samples_per_class < 1:
        raise ValueError("n_classes and samples_per_class must be >= 1")
    clouds, labels, systems = [], [], []
    for c in range(n_classes):
        ifs = class_system(c, config, seed)
        systems.append(ifs)
        for s in range(samples_per_class):
            clouds.append(class_sample(ifs, c, s, config, seed))
            labels.append(c)
    return FractalDataset(clouds, labels, systems)
