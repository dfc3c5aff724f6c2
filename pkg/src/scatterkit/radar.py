"""Attributed scattering center forward model and synthetic targets.

The frequency/aspect lattice is sampled at cell midpoints, so it is
symmetric about ``(center_freq, aspect_center)``.  Rows of a spectrum are
frequency samples (range), columns are aspect samples (cross-range).

Images are formed with the small-aperture rectangular approximation: the
spectrum is zero-padded (centered) to ``pad_to x pad_to``, transformed with
``numpy.fft.ifft2`` (``norm="backward"``, i.e. scaled by ``1/pad_to**2``) and
fft-shifted.  Under that normalization

    sum(|image|**2) == sum(|spectrum|**2) / pad_to**2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

C_LIGHT = 2.9979e8

ALPHA_VALUES = (-1.0, -0.5, 0.0, 0.5, 1.0)

# (label, alpha, distributed) in table order
GEOMETRY_TABLE = (
    ("Trihedral", 1.0, False),
    ("Top Hat", 0.5, False),
    ("Corner diffraction", -1.0, False),
    ("Sphere", 0.0, False),
    ("Edge broadside", 0.0, True),
    ("Edge diffraction", -0.5, True),
    ("Dihedral", 1.0, True),
    ("Cylinder", 0.5, True),
)
UNCLASSIFIED = "unclassified"

ASPECT_TERMS = ("as_printed", "damped")


class SceneExtentError(ValueError):
    """A scattering center lies outside the unaliased scene."""


def _canonical_alpha(alpha: float) -> float:
    for a in ALPHA_VALUES:
        if abs(alpha - a) < 1e-12:
            return a
    raise ValueError(f"alpha must be one of {ALPHA_VALUES}, got {alpha!r}")


@dataclass(frozen=True)
class ScatterCenter:
    amplitude_re: float
    amplitude_im: float
    x: float
    y: float
    alpha: float = 0.0
    length: float = 0.0
    phi_bar: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", _canonical_alpha(float(self.alpha)))
        if not self.length >= 0:
            raise ValueError(f"length must be >= 0, got {self.length!r}")
        if self.length == 0:
            object.__setattr__(self, "phi_bar", 0.0)
        vals = (self.amplitude_re, self.amplitude_im, self.x, self.y,
                self.length, self.phi_bar, self.gamma)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("scatter center fields must be finite")

    @property
    def amplitude(self) -> complex:
        return complex(self.amplitude_re, self.amplitude_im)

    @classmethod
    def from_complex(cls, amplitude: complex, x: float, y: float, **kw) -> "ScatterCenter":
        a = complex(amplitude)
        return cls(a.real, a.imag, x, y, **kw)

    def scaled(self, factor: complex) -> "ScatterCenter":
        a = self.amplitude * factor
        return replace(self, amplitude_re=a.real, amplitude_im=a.imag)


@dataclass(frozen=True)
class RadarConfig:
    center_freq: float = 9.6e9
    bandwidth: float = 0.59e9
    aspect_center: float = 0.0
    aspect_span: float = math.radians(3.0)
    n_freq: int = 64
    n_aspect: int = 64
    c: float = C_LIGHT
    aspect_term: str = "as_printed"

    def __post_init__(self):
        if self.n_freq < 2 or self.n_aspect < 2:
            raise ValueError("n_freq and n_aspect must be >= 2")
        if not self.bandwidth > 0 or not self.aspect_span > 0:
            raise ValueError("bandwidth and aspect_span must be > 0")
        if not self.center_freq > 0:
            raise ValueError("center_freq must be > 0")
        if self.aspect_term not in ASPECT_TERMS:
            raise ValueError(f"aspect_term must be one of {ASPECT_TERMS}")
        if not (math.isfinite(self.range_extent) and math.isfinite(self.crossrange_extent)):
            raise ValueError("scene extent is not finite")

    @property
    def freqs(self) -> np.ndarray:
        i = np.arange(self.n_freq, dtype=np.float64)
        return self.center_freq + self.bandwidth * (i - (self.n_freq - 1) / 2) / self.n_freq

    @property
    def aspects(self) -> np.ndarray:
        j = np.arange(self.n_aspect, dtype=np.float64)
        return self.aspect_center + self.aspect_span * (j - (self.n_aspect - 1) / 2) / self.n_aspect

    @property
    def range_extent(self) -> float:
        return self.c * self.n_freq / (2 * self.bandwidth)

    @property
    def crossrange_extent(self) -> float:
        return self.c * self.n_aspect / (2 * self.center_freq * self.aspect_span)

    def meters_per_pixel(self, pad_to: int) -> tuple[float, float]:
        return self.range_extent / pad_to, self.crossrange_extent / pad_to

    def contains(self, x: float, y: float) -> bool:
        return abs(x) <= self.range_extent / 2 and abs(y) <= self.crossrange_extent / 2


@dataclass(frozen=True)
class Spectrum:
    grid: RadarConfig
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.grid.n_freq, self.grid.n_aspect):
            raise ValueError(
                f"spectrum shape {self.data.shape} does not match grid "
                f"({self.grid.n_freq}, {self.grid.n_aspect})")

    def __add__(self, other: "Spectrum") -> "Spectrum":
        if other.grid != self.grid:
            raise ValueError("cannot add spectra on different grids")
        return Spectrum(self.grid, self.data + other.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class ChipImage:
    pixels: np.ndarray
    meters_per_pixel_range: float
    meters_per_pixel_crossrange: float

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.pixels)


def asc_response(centers: Sequence[ScatterCenter], freqs: np.ndarray, aspects: np.ndarray,
                 center_freq: float, c: float = C_LIGHT,
                 aspect_term: str = "as_printed") -> np.ndarray:
    """Coherent ASC sum on the outer product of ``freqs`` and ``aspects``."""
    f = np.asarray(freqs, dtype=np.float64)[:, None]
    phi = np.asarray(aspects, dtype=np.float64)[None, :]
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    sign = 1.0 if aspect_term == "as_printed" else -1.0
    out = np.zeros((f.shape[0], phi.shape[1]), dtype=np.complex128)
    for sc in centers:
        term = (np.exp(0.5j * np.pi * sc.alpha) * (f / center_freq) ** sc.alpha
                * np.exp(-4j * np.pi * f / c * (sc.x * cos_p + sc.y * sin_p)))
        if sc.gamma != 0.0:
            term = term * np.exp(sign * 2 * np.pi * sc.gamma * f * sin_p)
        if sc.length != 0.0:
            # np.sinc is sin(pi t)/(pi t)
            term = term * np.sinc(2 * sc.length * f * np.sin(phi - sc.phi_bar) / c)
        out += sc.amplitude * term
    return out


def evaluate_spectrum(centers: Sequence[ScatterCenter], cfg: RadarConfig) -> Spectrum:
    """Evaluate the ASC model of ``centers`` on the lattice of ``cfg``."""
    for i, sc in enumerate(centers):
        if not cfg.contains(sc.x, sc.y):
            raise SceneExtentError(
                f"center {i} at ({sc.x:.3f}, {sc.y:.3f}) m lies outside the scene "
                f"(+-{cfg.range_extent / 2:.3f}, +-{cfg.crossrange_extent / 2:.3f}) m")
    data = asc_response(centers, cfg.freqs, cfg.aspects, cfg.center_freq, cfg.c, cfg.aspect_term)
    return Spectrum(cfg, data)


def classify_geometry(alpha: float, length: float) -> str:
    """Canonical scattering geometry for an (alpha, length) pair."""
    a = _canonical_alpha(float(alpha))
    if not length >= 0:
        raise ValueError(f"length must be >= 0, got {length!r}")
    distributed = length > 0
    for label, row_alpha, row_dist in GEOMETRY_TABLE:
        if row_alpha == a and row_dist == distributed:
            return label
    return UNCLASSIFIED


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def render_complex(spec: Spectrum, pad_to: int) -> np.ndarray:
    """Complex image of ``spec``: centered zero-pad, ifft2, fftshift."""
    if not _is_pow2(pad_to):
        raise ValueError(f"pad_to must be a power of two, got {pad_to}")
    nf, na = spec.data.shape
    if pad_to < max(nf, na):
        raise ValueError(f"pad_to={pad_to} smaller than the spectrum ({nf}x{na})")
    padded = np.zeros((pad_to, pad_to), dtype=np.complex128)
    r0, c0 = (pad_to - nf) // 2, (pad_to - na) // 2
    padded[r0:r0 + nf, c0:c0 + na] = spec.data
    return np.fft.fftshift(np.fft.ifft2(padded))


def render_image(spec: Spectrum, pad_to: int = 128) -> ChipImage:
    mpp_r, mpp_c = spec.grid.meters_per_pixel(pad_to)
    return ChipImage(np.abs(render_complex(spec, pad_to)), mpp_r, mpp_c)


# --------------------------------------------------------------------------
# synthetic targets

@dataclass(frozen=True)
class SynthJitter:
    pos: float = 0.0
    amp: float = 1.0
    n_clutter: int = 0
    clutter_amp: float = 0.2
    clutter_radius: float = 3.5

    def __post_init__(self):
        vals = (self.pos, self.amp, self.clutter_amp, self.clutter_radius)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("jitter fields must be finite")
        if self.pos < 0 or self.amp < 1 or self.n_clutter < 0:
            raise ValueError("jitter needs pos >= 0, amp >= 1, n_clutter >= 0")


def _t(amp, x, y, alpha=0.0, length=0.0, phi_deg=0.0):
    return ScatterCenter(float(amp), 0.0, float(x), float(y), alpha, float(length),
                         math.radians(phi_deg))


# Body coordinates: x along the hull, y across it.  Lengths and layouts are
# chosen so the eight classes differ in extent, point count and pattern.
CLASS_TEMPLATES: dict[int, tuple[ScatterCenter, ...]] = {
    0: (  # tracked carrier: boxy hull, small turret
        _t(1.0, 2.6, 1.3, 1.0), _t(1.0, 2.6, -1.3, 1.0), _t(0.9, -2.6, 1.3, 1.0),
        _t(0.9, -2.6, -1.3, 1.0), _t(1.4, 0.4, 0.0, 0.5), _t(0.6, 1.6, 0.0, 0.0),
        _t(0.7, -1.0, 1.4, 0.0, 2.0, 0.0), _t(0.7, -1.0, -1.4, 0.0, 2.0, 0.0),
        _t(0.5, 3.1, 0.0, -1.0),
    ),
    1: (  # wheeled carrier: long, narrow, evenly spaced wheels
        _t(0.8, 2.4, 1.1, 0.5), _t(0.8, 0.8, 1.1, 0.5), _t(0.8, -0.8, 1.1, 0.5),
        _t(0.8, -2.4, 1.1, 0.5), _t(0.8, 2.4, -1.1, 0.5), _t(0.8, 0.8, -1.1, 0.5),
        _t(0.8, -0.8, -1.1, 0.5), _t(0.8, -2.4, -1.1, 0.5),
    ),
    2: (  # main battle tank: strong turret, long barrel
        _t(2.0, 0.0, 0.0, 1.0), _t(1.0, 1.2, 0.6, 0.5), _t(1.0, 1.2, -0.6, 0.5),
        _t(0.8, 3.2, 0.0, -0.5, 1.6, 90.0), _t(0.7, -2.8, 1.5, 1.0),
        _t(0.7, -2.8, -1.5, 1.0), _t(0.6, 2.2, 1.6, 0.0), _t(0.6, 2.2, -1.6, 0.0),
        _t(0.5, -1.5, 0.0, 0.0, 2.0, 0.0),
    ),
    3: (  # wheeled scout: short, rounded
        _t(1.2, 1.6, 0.0, 0.0), _t(0.9, 0.0, 1.0, 0.5), _t(0.9, 0.0, -1.0, 0.5),
        _t(0.9, -1.6, 0.0, 0.0), _t(0.6, 0.8, 0.5, -1.0), _t(0.6, -0.8, -0.5, -1.0),
    ),
    4: (  # self-propelled gun: heavy rear block
        _t(1.8, -1.6, 0.9, 1.0), _t(1.8, -1.6, -0.9, 1.0), _t(1.0, -0.6, 0.0, 1.0, 1.5, 90.0),
        _t(0.6, 1.0, 1.4, 0.0), _t(0.6, 1.0, -1.4, 0.0), _t(0.6, 2.4, 1.4, 0.0),
        _t(0.6, 2.4, -1.4, 0.0), _t(0.9, 3.4, 0.0, 0.5), _t(0.4, 0.2, 0.0, -0.5, 1.0, 0.0),
        _t(0.5, -2.9, 0.0, 0.0),
    ),
    5: (  # scout car: diamond layout
        _t(1.5, 2.0, 0.0, 1.0), _t(1.0, 0.0, 1.2, 0.0), _t(1.0, 0.0, -1.2, 0.0),
        _t(1.5, -2.0, 0.0, 1.0), _t(0.7, 0.0, 0.0, 0.5), _t(0.5, 1.0, 0.6, -0.5, 0.8, 45.0),
        _t(0.5, -1.0, -0.6, -0.5, 0.8, 45.0),
    ),
    6: (  # bulldozer: wide blade up front
        _t(1.0, 2.8, 1.8, 0.0), _t(1.0, 2.8, 0.6, 0.0), _t(1.0, 2.8, -0.6, 0.0),
        _t(1.0, 2.8, -1.8, 0.0), _t(1.6, 2.8, 0.0, 1.0, 3.6, 90.0), _t(0.8, -0.5, 0.8, 0.5),
        _t(0.8, -0.5, -0.8, 0.5), _t(1.1, -2.2, 0.0, 1.0), _t(0.5, -1.4, 1.3, -1.0),
        _t(0.5, -1.4, -1.3, -1.0), _t(0.4, 0.9, 0.0, 0.0), _t(0.4, -3.0, 0.9, 0.0),
    ),
    7: (  # truck: cab, gap, cargo bed
        _t(1.4, 3.0, 0.9, 1.0), _t(1.4, 3.0, -0.9, 1.0), _t(0.7, 1.8, 0.0, 0.5),
        _t(0.9, -0.2, 1.1, 0.0, 1.5, 0.0), _t(0.9, -0.2, -1.1, 0.0, 1.5, 0.0),
        _t(0.6, -1.8, 1.1, 0.5), _t(0.6, -1.8, -1.1, 0.5), _t(1.0, -3.2, 0.0, 1.0),
    ),
}

DEFAULT_CLASSES = tuple(sorted(CLASS_TEMPLATES))


def _wrap_orientation(phi: float) -> float:
    """Map a segment orientation to [-pi/2, pi/2); the sinc term is pi-periodic."""
    return (phi + math.pi / 2) % math.pi - math.pi / 2


def pose_centers(centers: Sequence[ScatterCenter], azimuth_deg: float = 0.0,
                 range_scale: float = 1.0) -> list[ScatterCenter]:
    """Rotate body-frame centers by ``azimuth_deg`` and scale the range axis."""
    if azimuth_deg == 0.0 and range_scale == 1.0:
        return list(centers)
    th = math.radians(azimuth_deg)
    ct, st = math.cos(th), math.sin(th)
    out = []
    for sc in centers:
        x = (sc.x * ct - sc.y * st) * range_scale
        y = sc.x * st + sc.y * ct
        phi = _wrap_orientation(sc.phi_bar + th) if sc.length > 0 else 0.0
        out.append(replace(sc, x=x, y=y, phi_bar=phi))
    return out


def synth_target(class_id: int, jitter: SynthJitter = SynthJitter(), rng_seed: int = 0, *,
                 azimuth_deg: float = 0.0, range_scale: float = 1.0,
                 templates: dict | None = None) -> tuple[list[ScatterCenter], int]:
    """Draw one labeled target: the class template with per-sample perturbations.

    Position jitter is uniform in ``[-jitter.pos, jitter.pos]`` per axis and is
    applied in the scene frame after posing; amplitude jitter is a log-uniform
    factor in ``[1/jitter.amp, jitter.amp]``.  Clutter centers are isotropic
    points uniformly placed in a disc of ``jitter.clutter_radius``.
    """
    templates = CLASS_TEMPLATES if templates is None else templates
    if class_id not in templates:
        raise KeyError(f"unknown class_id {class_id!r}")
    centers = pose_centers(templates[class_id], azimuth_deg, range_scale)
    if jitter.pos == 0 and jitter.amp == 1 and jitter.n_clutter == 0:
        return centers, class_id

    rng = np.random.default_rng(rng_seed)
    n = len(centers)
    dxy = rng.uniform(-jitter.pos, jitter.pos, size=(n, 2))
    log_a = math.log(jitter.amp)
    gains = np.exp(rng.uniform(-log_a, log_a, size=n))
    out = [replace(sc.scaled(float(g)), x=sc.x + float(d[0]), y=sc.y + float(d[1]))
           for sc, d, g in zip(centers, dxy, gains)]
    for _ in range(jitter.n_clutter):
        r = jitter.clutter_radius * math.sqrt(rng.uniform())
        th = rng.uniform(0, 2 * math.pi)
        a = jitter.clutter_amp * rng.uniform(0.5, 1.0)
        out.append(ScatterCenter(a, 0.0, r * math.cos(th), r * math.sin(th)))
    return out, class_id


__all__ = [
    "ALPHA_VALUES", "C_LIGHT", "CLASS_TEMPLATES", "ChipImage", "DEFAULT_CLASSES",
    "GEOMETRY_TABLE", "RadarConfig", "ScatterCenter", "SceneExtentError", "Spectrum",
    "SynthJitter", "UNCLASSIFIED", "asc_response", "classify_geometry",
    "evaluate_spectrum", "pose_centers", "render_complex", "render_image", "synth_target",
]
