"""Dataset generators, image featurization and PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError


@dataclass(frozen=True)
class ThreeMoonsParams:
    points_per_moon: int = 500
    ambient_dim: int = 100
    noise_variance: float = 0.02
    radii: tuple[float, float, float] = (1.0, 1.0, 1.5)
    centers: tuple[tuple[float, float], ...] = ((0.0, 0.0), (3.0, 0.0), (1.5, 0.4))
    seed: int = 0


def three_moons(params: ThreeMoonsParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Three noisy half circles embedded in a high-dimensional space.

    The first two moons are upper half circles and the third a lower half
    circle. Points are placed in the first two coordinates and isotropic
    Gaussian noise is added to every coordinate.

    Returns ``(features, labels)`` with shapes ``(3 p, ambient_dim)`` and ``(3 p,)``.
    """
    p = params or ThreeMoonsParams()
    if p.ambient_dim < 2 or p.points_per_moon < 1 or p.noise_variance < 0:
        raise ConfigurationError("invalid three-moons parameters")
    # one stream for the angles, one for the noise
    angle_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(p.seed).spawn(2))
    n = p.points_per_moon
    X = np.zeros((3 * n, p.ambient_dim))
    labels = np.repeat(np.arange(3), n)
    for k in range(3):
        lo = 0.0 if k < 2 else np.pi
        theta = angle_rng.uniform(lo, lo + np.pi, size=n)
        cx, cy = p.centers[k]
        X[k * n : (k + 1) * n, 0] = cx + p.radii[k] * np.cos(theta)
        X[k * n : (k + 1) * n, 1] = cy + p.radii[k] * np.sin(theta)
    if p.noise_variance > 0:
        X += noise_rng.normal(0.0, np.sqrt(p.noise_variance), size=X.shape)
    return X, labels


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    width: int
    height: int
    features: np.ndarray
    ground_truth: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.width * self.height


def featurize_image(image) -> ImageFeatures:
    """One ``(x, y, intensity)`` row per pixel, each scaled into ``[0, 1]``.

    Pixels are taken in row-major order. ``image`` must be a 2-D array of
    8-bit gray levels.
    """
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise FormatError(f"expected a non-empty 2-D grayscale image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if not np.issubdtype(img.dtype, np.integer) or img.min() < 0 or img.max() > 255:
            raise FormatError(f"expected 8-bit grayscale intensities, got dtype {img.dtype}")
    h, w = img.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    feats = np.column_stack([
        cols / max(w - 1, 1),
        rows / max(h - 1, 1),
        img.reshape(-1).astype(np.float64) / 255.0,
    ])
    return ImageFeatures(w, h, feats)


FIVE_LEVELS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def synthetic_five_class_label_map(width: int = 100, height: int = 100) -> np.ndarray:
    """Deterministic 5-class label map, shape ``(height, width)``.

    Layout in unit coordinates: a black background (0); two adjoining
    rectangles (1 and 2) whose shared edge meets the background at two
    triple junctions; a light-gray ring (3) with the background showing
    through its hole; a white disk (4) straddling the edge of rectangle 2.
    """
    if width < 50 or height < 50:
        raise ConfigurationError("synthetic image needs width and height >= 50")
    y, x = np.mgrid[0:height, 0:width]
    x = x / (width - 1)
    y = y / (height - 1)
    lab = np.zeros((height, width), dtype=np.int64)
    lab[(x >= 0.06) & (x < 0.55) & (y >= 0.08) & (y < 0.5)] = 1
    lab[(x >= 0.55) & (x <= 0.94) & (y >= 0.08) & (y < 0.5)] = 2
    r_ring = np.hypot(x - 0.32, y - 0.75)
    lab[(r_ring >= 0.09) & (r_ring <= 0.2)] = 3
    lab[np.hypot(x - 0.75, y - 0.5) <= 0.14] = 4
    return lab


def synthetic_five_class_image(width: int = 100, height: int = 100) -> ImageFeatures:
    """Featurized synthetic image with exact ground truth and gray levels ``k / 4``."""
    lab = synthetic_five_class_label_map(width, height)
    h, w = lab.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    feats = np.column_stack([cols / (w - 1), rows / (h - 1), FIVE_LEVELS[lab.reshape(-1)]])
    return ImageFeatures(w, h, feats, lab.reshape(-1))


def label_map_to_image(labels: np.ndarray) -> np.ndarray:
    """8-bit rendering of a 5-class label map (gray level ``round(255 k / 4)``)."""
    return np.round(FIVE_LEVELS[labels] * 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def pca_fit(features, k: int) -> PcaModel:
    """Top-``k`` principal directions by exact eigendecomposition of the covariance.

    Each component is signed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if not 1 <= k <= min(n, d):
        raise ConfigurationError(f"k must lie in [1, min(n, d)] = [1, {min(n, d)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:k]
    comps = vecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaModel(mean, comps, np.clip(vals[order], 0.0, None))


def pca_project(model: PcaModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.mean.size:
        raise ConfigurationError(
            f"feature dimension {X.shape[-1]} does not match model dimension {model.mean.size}"
        )
    return (X - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# subsampling and fidelity selection
# ---------------------------------------------------------------------------


def subsample_per_class(labels, per_class: int, seed: int = 0) -> np.ndarray:
    """Sorted indices of ``per_class`` random points from every class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise ConfigurationError(f"class {c} has only {members.size} points")
        picked.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(picked))


def sample_fidelity(labels, *, per_class: int | None = None, fraction: float | None = None,
                    seed: int = 0) -> np.ndarray:
    """Stratified random choice of labeled vertices.

    Either a fixed count per class or a fraction of each class (rounded,
    at least one point). Returns sorted vertex indices.
    """
    if (per_class is None) == (fraction is None):
        raise ConfigurationError("give exactly one of per_class or fraction")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if per_class is not None:
            m = per_class
        else:
            if not 0 < fraction <= 1:
                raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
            m = max(1, int(round(fraction * members.size)))
        if m > members.size:
            raise ConfigurationError(f"class {c} has only {members.size} points, {m} requested")
        picked.append(rng.choice(members, size=m, replace=False))
    return np.sort(np.concatenate(picked))
