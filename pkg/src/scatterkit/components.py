"""Target components: cluster scattering centers (or bright pixels) into K groups
and render one image per group.

The per-chip "bag of visual words" step is the K-means codebook itself: the
z-scored parameter vectors are quantized against K centroids found on the
chip, with no corpus-level vocabulary.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .radar import ChipImage, RadarConfig, ScatterCenter, Spectrum, evaluate_spectrum, render_complex

DEFAULT_K = 4


class FeatureBasis(str, enum.Enum):
    FULL = "x,y,L,phi_bar,alpha,A"
    XYA = "x,y,A"
    XY = "x,y"
    AMP_LOC = "Amp,Loc"

    @classmethod
    def parse(cls, text: str) -> "FeatureBasis":
        key = text.replace(" ", "").lower()
        aliases = {"full": cls.FULL, "xya": cls.XYA, "xy": cls.XY, "amp": cls.AMP_LOC,
                   "amploc": cls.AMP_LOC}
        for member in cls:
            if member.value.lower() == key:
                return member
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown feature basis {text!r}")


def center_features(centers: Sequence[ScatterCenter], basis: FeatureBasis) -> np.ndarray:
    cols = {
        "x": [c.x for c in centers],
        "y": [c.y for c in centers],
        "L": [c.length for c in centers],
        "phi_bar": [c.phi_bar for c in centers],
        "alpha": [c.alpha for c in centers],
        "A": [abs(c.amplitude) for c in centers],
    }
    if basis is FeatureBasis.AMP_LOC:
        raise ValueError("Amp,Loc works on pixels; use amplitude_components")
    names = basis.value.split(",")
    return np.array([cols[n] for n in names], dtype=np.float64).T.reshape(len(centers), len(names))


def zscore(features: np.ndarray) -> np.ndarray:
    """Column-wise standardization; zero-variance columns are only centered."""
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (features - mu) / sd


# ---------------------------------------------------------------- K-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    restart: int


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a chosen one
            nxt = int(rng.integers(n))
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.uniform() * total, side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    labels = None
    for _ in range(max_iter):
        new_labels, d2 = kernels.nearest_center(points, centroids)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster with the point farthest from its centroid
            far = int(np.argmax(d2))
            if d2[far] <= 0:
                break
            new_labels[far] = j
            d2[far] = 0.0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
    labels, d2 = kernels.nearest_center(points, centroids)
    labels, centroids = _hartigan(points, labels, centroids, max_iter)
    labels, d2 = kernels.nearest_center(points, centroids)
    return labels, centroids, float(d2.sum())


def _hartigan(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
              max_passes: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-point transfers that strictly lower inertia (Hartigan's rule).

    Lloyd fixed points can still improve by moving one point, because moving
    it also shifts both centroids.  Every accepted move lowers inertia, so the
    result is never worse than the Lloyd solution it starts from.
    """
    k = centroids.shape[0]
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, points)
    for _ in range(max_passes):
        moved = False
        for i in range(points.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            cents = sums / np.maximum(counts, 1.0)[:, None]
            d2 = ((cents - points[i]) ** 2).sum(axis=1)
            remove = counts[a] / (counts[a] - 1.0) * d2[a]
            add = counts / (counts + 1.0) * d2
            add[a] = np.inf
            b = int(np.argmin(add))
            if add[b] < remove * (1.0 - 1e-12):
                sums[a] -= points[i]
                sums[b] += points[i]
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
    return labels, sums / np.maximum(counts, 1.0)[:, None]


def kmeans(points: np.ndarray, k: int, rng_seed: int = 0, n_init: int = 10,
           max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm plus Hartigan transfers, k-means++ seeding; best of ``n_init`` restarts.

    The winner is the lowest (inertia, restart index), so the result does not
    depend on how restarts are scheduled.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if points.shape[0] < k:
        raise ValueError("fewer points than clusters")
    best = None
    for r in range(n_init):
        rng = np.random.default_rng([rng_seed, r])
        init = _kmeanspp(points, k, rng)
        labels, cents, inertia = _lloyd(points, init, max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, cents, inertia, r)
    return best


def _canonical_row_order(features: np.ndarray) -> np.ndarray:
    """Permutation sorting rows lexicographically (stable), for order-free clustering."""
    return np.lexsort(features.T[::-1])


def cluster_points(features: np.ndarray, k: int, rng_seed: int) -> np.ndarray:
    """K-means labels for standardized feature rows, in the caller's row order.

    Rows are sorted before clustering, so the partition does not depend on
    input order.  With ``n <= k`` rows each row is its own cluster and the
    remaining labels are left for the caller's empty-group repair.
    """
    n = features.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    order = _canonical_row_order(features)
    feats = features[order]
    if n <= k:
        labels_sorted = np.arange(n)
    else:
        labels_sorted = kmeans(feats, k, rng_seed).labels.copy()
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    return labels


# ---------------------------------------------------------------- component sets

@dataclass
class ComponentSet:
    """K component images sharing one normalization, in canonical order.

    ``members[k]`` lists ``(index, weight)`` pairs; weight is 1 except when a
    lone center had to be shared to fill an otherwise empty component.
    ``assignments[i]`` is the component holding item ``i`` (its first share).
    ``ordering_key[k]`` is ``(energy, centroid_x, centroid_y)``.
    """

    k: int
    images: np.ndarray
    assignments: np.ndarray
    ordering_key: list[tuple[float, float, float]]
    members: list[list[tuple[int, float]]]
    scale: float

    def __post_init__(self):
        if self.images.shape[0] != self.k:
            raise ValueError("image count does not match k")

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]


def _groups_from_labels(labels: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
    groups = [[] for _ in range(k)]
    for i, lab in enumerate(labels):
        groups[int(lab)].append((i, 1.0))
    return groups


def _repair_empty(groups, energy_of, position_of):
    """Fill empty groups by splitting the highest-energy group.

    A group with several members gives away the second half of its members
    (sorted by position); a single-member group shares its item at half weight.
    """
    for j, g in enumerate(groups):
        if g:
            continue
        donor = max((i for i in range(len(groups)) if groups[i]),
                    key=lambda i: (sum(energy_of(m, w) for m, w in groups[i]), -i))
        items = sorted(groups[donor], key=lambda mw: (position_of(mw[0]), mw[0]))
        if len(items) >= 2:
            half = len(items) // 2
            groups[donor] = items[:half]
            groups[j] = items[half:]
        else:
            (m, w), = items
            groups[donor] = [(m, w / 2)]
            groups[j] = [(m, w / 2)]
    return groups


def _order_groups(groups, energy_of, position_of):
    keys = []
    for g in groups:
        e = sum(energy_of(m, w) for m, w in g)
        pos = np.array([position_of(m) for m, _ in g], dtype=np.float64)
        cx, cy = pos.mean(axis=0) if len(pos) else (0.0, 0.0)
        keys.append((float(e), float(cx), float(cy)))
    perm = sorted(range(len(groups)), key=lambda i: (-keys[i][0], keys[i][1], keys[i][2], i))
    return [groups[i] for i in perm], [keys[i] for i in perm]


def _assignment_map(groups, n):
    out = np.full(n, -1, dtype=np.int64)
    for k, g in enumerate(groups):
        for m, _ in g:
            if out[m] < 0:
                out[m] = k
    return out


def cluster_centers(centers: Sequence[ScatterCenter], basis: FeatureBasis | str, k: int = DEFAULT_K,
                    rng_seed: int = 0) -> np.ndarray:
    """Component index per center, in canonical component order."""
    groups, _ = _center_groups(centers, _basis(basis), k, rng_seed)
    return _assignment_map(groups, len(centers))


def cluster_groups(centers: Sequence[ScatterCenter], basis: FeatureBasis | str, k: int = DEFAULT_K,
                   rng_seed: int = 0) -> tuple[list[list[tuple[int, float]]], list[tuple[float, float, float]]]:
    """Canonically ordered ``(index, weight)`` member lists and their ordering keys."""
    return _center_groups(centers, _basis(basis), k, rng_seed)


def _basis(b) -> FeatureBasis:
    return b if isinstance(b, FeatureBasis) else FeatureBasis.parse(b)


def _center_groups(centers, basis, k, rng_seed):
    if k < 1:
        raise ValueError("k must be >= 1")
    if not centers:
        raise ValueError("need at least one scattering center")
    feats = zscore(center_features(centers, basis))
    labels = cluster_points(feats, k, rng_seed)
    groups = _groups_from_labels(labels, k)

    def energy_of(i, w):
        return (w * abs(centers[i].amplitude)) ** 2

    def position_of(i):
        return (centers[i].x, centers[i].y)

    groups = _repair_empty(groups, energy_of, position_of)
    return _order_groups(groups, energy_of, position_of)


def component_spectra(centers: Sequence[ScatterCenter], groups, cfg: RadarConfig) -> list[Spectrum]:
    return [evaluate_spectrum([centers[m].scaled(w) for m, w in g], cfg) for g in groups]


def _normalize(raw: list[np.ndarray]) -> tuple[np.ndarray, float]:
    images = np.abs(np.stack(raw))
    peak = float(images.max()) if images.size else 0.0
    if peak > 0:
        images = images / peak
    return np.clip(images, 0.0, 1.0), peak


def reconstruct_components(centers: Sequence[ScatterCenter], assignments, cfg: RadarConfig,
                           pad_to: int = 128, k: int | None = None,
                           members=None) -> ComponentSet:
    """Render each component's centers and normalize by the shared peak magnitude.

    ``assignments`` gives a component per center; ``members`` (as produced by
    :func:`components_from_centers`) overrides it when shares are fractional.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    if members is None:
        if assignments.shape != (len(centers),) or (assignments < 0).any():
            raise ValueError("assignments must map every center to a component")
        k = int(assignments.max()) + 1 if k is None else k
        members = _groups_from_labels(assignments, k)
        if any(not g for g in members):
            raise ValueError("assignments leave a component empty")
    k = len(members)

    def energy_of(i, w):
        return (w * abs(centers[i].amplitude)) ** 2

    def position_of(i):
        return (centers[i].x, centers[i].y)

    members, keys = _order_groups(members, energy_of, position_of)
    raw = [render_complex(s, pad_to) for s in component_spectra(centers, members, cfg)]
    images, peak = _normalize(raw)
    return ComponentSet(k, images, _assignment_map(members, len(centers)), keys, members, peak)


def components_from_centers(centers: Sequence[ScatterCenter], cfg: RadarConfig,
                            basis: FeatureBasis | str = FeatureBasis.FULL, k: int = DEFAULT_K,
                            pad_to: int = 128, rng_seed: int = 0) -> ComponentSet:
    """Cluster then reconstruct in one step (keeps fractional shares intact)."""
    groups, _ = _center_groups(centers, _basis(basis), k, rng_seed)
    return reconstruct_components(centers, _assignment_map(groups, len(centers)), cfg, pad_to,
                                  members=groups)


def top_pixels(image: np.ndarray, fraction: float = 0.05) -> np.ndarray:
    """Flat indices of the brightest ``ceil(fraction * size)`` pixels.

    Ties are broken by row-major position (earlier pixel wins).
    """
    flat = image.ravel()
    m = max(1, int(math.ceil(fraction * flat.size - 1e-9)))
    order = np.lexsort((np.arange(flat.size), -flat))
    return np.sort(order[:m])


def amplitude_components(chip: ChipImage | np.ndarray, k: int = DEFAULT_K, rng_seed: int = 0,
                         fraction: float = 0.05) -> ComponentSet:
    """Components from the amplitude image alone: top-5% pixels clustered on (row, col, amplitude)."""
    img = chip.pixels if isinstance(chip, ChipImage) else np.asarray(chip)
    if np.iscomplexobj(img):
        raise ValueError("amplitude_components needs a magnitude image")
    if k < 1:
        raise ValueError("k must be >= 1")
    h, w = img.shape
    idx = top_pixels(img, fraction)
    rows, cols = np.divmod(idx, w)
    vals = img.ravel()[idx].astype(np.float64)
    feats = zscore(np.column_stack([rows, cols, vals]).astype(np.float64))
    labels = cluster_points(feats, k, rng_seed)
    groups = _groups_from_labels(labels, k)

    def energy_of(i, wgt):
        return (wgt * vals[i]) ** 2

    def position_of(i):
        return (float(rows[i]), float(cols[i]))

    groups = _repair_empty(groups, energy_of, position_of)
    groups, keys = _order_groups(groups, energy_of, position_of)
    raw = []
    for g in groups:
        m = np.zeros(h * w, dtype=np.float64)
        for i, wgt in g:
            m[idx[i]] += wgt * vals[i]
        raw.append(m.reshape(h, w))
    images, peak = _normalize(raw)
    return ComponentSet(k, images, _assignment_map(groups, len(idx)), keys, groups, peak)


__all__ = ["ComponentSet", "DEFAULT_K", "FeatureBasis", "KMeansResult", "amplitude_components",
           "center_features", "cluster_centers", "cluster_points", "component_spectra",
           "components_from_centers", "kmeans", "reconstruct_components", "top_pixels", "zscore"]
