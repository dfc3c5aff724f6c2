"""ASC parameter estimation by orthogonal matching pursuit.

The dictionary is the Cartesian product of a pixel-aligned position grid and
a set of "shapes" (alpha, length, orientation).  An atom is separable into a
shape template times a position phasor, so the atom table never materializes
its columns: correlations against a residual are computed per shape as one
``(nx, S) @ (S, ny)`` product.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .radar import ALPHA_VALUES, RadarConfig, ScatterCenter, Spectrum, asc_response
from .serialize import dump_centers, parse_centers

log = logging.getLogger(__name__)

DEFAULT_LENGTHS = (0.0, 1.0, 2.0, 4.0)
DEFAULT_PHI_BARS = tuple(math.radians(d) for d in (-10.0, 0.0, 10.0))


class DictionarySizeError(ValueError):
    pass


@dataclass(frozen=True)
class DictionaryConfig:
    x_step: float
    y_step: float
    alpha_values: tuple[float, ...] = ALPHA_VALUES
    length_values: tuple[float, ...] = DEFAULT_LENGTHS
    phi_bar_values: tuple[float, ...] = DEFAULT_PHI_BARS
    # inclusive bounds in meters; None covers the whole unaliased scene
    x_range: tuple[float, float] | None = None
    y_range: tuple[float, float] | None = None
    max_atoms: int = 2_000_000

    def __post_init__(self):
        if not (self.x_step > 0 and self.y_step > 0):
            raise ValueError("dictionary steps must be > 0")
        for a in self.alpha_values:
            if a not in ALPHA_VALUES:
                raise ValueError(f"alpha {a!r} is not canonical")
        if any(not L >= 0 for L in self.length_values):
            raise ValueError("lengths must be >= 0")

    @classmethod
    def pixel_aligned(cls, cfg: RadarConfig, pad_to: int = 128, **kw) -> "DictionaryConfig":
        mpp_r, mpp_c = cfg.meters_per_pixel(pad_to)
        return cls(x_step=mpp_r, y_step=mpp_c, **kw)

    def shapes(self) -> list[tuple[float, float, float]]:
        out = []
        for a, L in itertools.product(self.alpha_values, self.length_values):
            if L == 0:
                out.append((a, 0.0, 0.0))
            else:
                out.extend((a, float(L), float(p)) for p in self.phi_bar_values)
        return out


def _axis(step: float, bounds: tuple[float, float] | None, half_extent: float) -> np.ndarray:
    if bounds is None:
        n = int(math.floor(half_extent / step + 1e-9))
        return step * np.arange(-n, n + 1, dtype=np.float64)
    lo, hi = bounds
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1, dtype=np.float64)


class AtomTable:
    """Immutable, lazily evaluated OMP dictionary.

    Atom ``i`` decomposes as ``(shape, ix, iy) = np.unravel_index(i, (n_shapes, nx, ny))``.
    Its column is the unit-amplitude ASC response, flattened row-major over
    (frequency, aspect) and scaled to unit L2 norm; ``norms[shape]`` holds the
    divisor so fitted coefficients map back to physical amplitudes.
    """

    def __init__(self, grid: RadarConfig, shapes: Sequence[tuple[float, float, float]],
                 xs: np.ndarray, ys: np.ndarray):
        self.grid = grid
        self.shapes = tuple(shapes)
        self.xs = np.asarray(xs, dtype=np.float64)
        self.ys = np.asarray(ys, dtype=np.float64)
        f = grid.freqs[:, None]
        phi = grid.aspects[None, :]
        k = 4 * np.pi * f / grid.c
        u = (k * np.cos(phi)).ravel()
        v = (k * np.sin(phi)).ravel()
        # conjugated position phasors, (S, nx) and (S, ny)
        self._ex = np.exp(1j * u[:, None] * self.xs[None, :])
        self._ey = np.exp(1j * v[:, None] * self.ys[None, :])
        templates = []
        for a, L, p in self.shapes:
            sc = ScatterCenter(1.0, 0.0, 0.0, 0.0, a, L, p)
            templates.append(asc_response([sc], grid.freqs, grid.aspects, grid.center_freq,
                                          grid.c, grid.aspect_term).ravel())
        self._templates = np.array(templates)
        self.norms = np.linalg.norm(self._templates, axis=1)
        for n in (self._templates, self._ex, self._ey, self.norms):
            n.setflags(write=False)

    @property
    def n_atoms(self) -> int:
        return len(self.shapes) * self.xs.size * self.ys.size

    def __len__(self) -> int:
        return self.n_atoms

    def _split(self, i: int) -> tuple[int, int, int]:
        if not 0 <= i < self.n_atoms:
            raise IndexError(i)
        s, ix, iy = np.unravel_index(i, (len(self.shapes), self.xs.size, self.ys.size))
        return int(s), int(ix), int(iy)

    def params(self, i: int, amplitude: complex = 1.0) -> ScatterCenter:
        s, ix, iy = self._split(i)
        a, L, p = self.shapes[s]
        return ScatterCenter.from_complex(amplitude, float(self.xs[ix]), float(self.ys[iy]),
                                          alpha=a, length=L, phi_bar=p)

    def norm_of(self, i: int) -> float:
        return float(self.norms[self._split(i)[0]])

    def column(self, i: int) -> np.ndarray:
        s, ix, iy = self._split(i)
        return self._templates[s] * np.conj(self._ex[:, ix] * self._ey[:, iy]) / self.norms[s]

    def columns(self, indices: Sequence[int]) -> np.ndarray:
        if len(indices) == 0:
            return np.zeros((self._ex.shape[0], 0), dtype=np.complex128)
        return np.stack([self.column(i) for i in indices], axis=1)

    def materialize(self) -> np.ndarray:
        """Dense (S, n_atoms) matrix.  Only sensible for small dictionaries."""
        return self.columns(range(self.n_atoms))

    def correlate(self, residual: np.ndarray) -> np.ndarray:
        """``<atom_i, residual>`` for every atom, as a flat complex128 array."""
        r = np.asarray(residual, dtype=np.complex128).ravel()
        out = np.empty((len(self.shapes), self.xs.size, self.ys.size), dtype=np.complex128)
        ex_t = self._ex.T
        for s in range(len(self.shapes)):
            w = np.conj(self._templates[s]) * r / self.norms[s]
            out[s] = ex_t @ (w[:, None] * self._ey)
        return out.ravel()


def build_dictionary(cfg: RadarConfig, dict_cfg: DictionaryConfig) -> AtomTable:
    xs = _axis(dict_cfg.x_step, dict_cfg.x_range, cfg.range_extent / 2)
    ys = _axis(dict_cfg.y_step, dict_cfg.y_range, cfg.crossrange_extent / 2)
    if np.any(np.abs(xs) > cfg.range_extent / 2) or np.any(np.abs(ys) > cfg.crossrange_extent / 2):
        raise ValueError("dictionary position range exceeds the scene extent")
    shapes = dict_cfg.shapes()
    count = len(shapes) * xs.size * ys.size
    if count > dict_cfg.max_atoms:
        raise DictionarySizeError(f"dictionary would hold {count} atoms (cap {dict_cfg.max_atoms})")
    if count == 0:
        raise DictionarySizeError("dictionary is empty")
    table = AtomTable(cfg, shapes, xs, ys)
    log.debug("built dictionary: %d shapes x %d x %d positions = %d atoms",
              len(shapes), xs.size, ys.size, count)
    return table


@dataclass
class AscFitResult:
    centers: list[ScatterCenter]
    residual_norm: float
    iterations: int
    atom_indices: list[int] = field(default_factory=list)
    history: list[float] = field(default_factory=list)
    rank_deficient: bool = False

    def dumps(self) -> str:
        return dump_centers(self.centers, {"residual_norm": self.residual_norm,
                                           "iterations": self.iterations})

    @classmethod
    def loads(cls, text: str) -> "AscFitResult":
        centers, meta = parse_centers(text)
        meta = meta or {}
        return cls(centers, float(meta.get("residual_norm", float("nan"))),
                   int(meta.get("iterations", len(centers))))


def omp_fit(spec: Spectrum | np.ndarray, atoms: AtomTable, q_max: int = 30,
            resid_tol: float = 0.1) -> AscFitResult:
    """Greedy sparse recovery with a joint least-squares refit each iteration.

    Stops once ``||r|| / ||S|| <= resid_tol`` or ``q_max`` atoms are selected.
    The argmax picks the lowest atom index among exact ties.  A rank-deficient
    refit drops the newest atom and stops with ``rank_deficient`` set.
    """
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    if not 0 <= resid_tol < 1:
        raise ValueError("resid_tol must lie in [0, 1)")
    if isinstance(spec, Spectrum):
        if spec.grid != atoms.grid:
            raise ValueError("spectrum grid does not match the dictionary grid")
        data = spec.data
    else:
        data = np.asarray(spec)
    s = data.astype(np.complex128).ravel()
    s_norm = float(np.linalg.norm(s))
    if s_norm == 0.0:
        return AscFitResult([], 0.0, 0, [], [0.0])

    selected: list[int] = []
    coef = np.zeros(0, dtype=np.complex128)
    residual = s
    history = [s_norm]
    rank_deficient = False
    while len(selected) < q_max and history[-1] / s_norm > resid_tol:
        mag = np.abs(atoms.correlate(residual))
        if selected:
            mag[selected] = -1.0
        k = int(np.argmax(mag))
        if mag[k] <= 1e-13 * s_norm:
            break
        trial = selected + [k]
        phi = atoms.columns(trial)
        sol, _, rank, sv = np.linalg.lstsq(phi, s, rcond=None)
        if rank < len(trial) or sv[-1] <= 1e-10 * sv[0]:
            log.warning("rank-deficient least squares at atom %d; stopping", k)
            rank_deficient = True
            break
        selected, coef = trial, sol
        residual = s - phi @ coef
        history.append(float(np.linalg.norm(residual)))

    centers = [atoms.params(i, c / atoms.norm_of(i)) for i, c in zip(selected, coef)]
    return AscFitResult(centers, history[-1], len(selected), selected, history, rank_deficient)


__all__ = ["AscFitResult", "AtomTable", "DictionaryConfig", "DictionarySizeError",
           "build_dictionary", "omp_fit"]
