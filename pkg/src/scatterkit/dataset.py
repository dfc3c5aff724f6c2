"""Labeled chip sets: synthetic generation, OFA-style shifted test sets, disk I/O.

A :class:`Dataset` holds magnitude chips and their K component maps, both
center-cropped to the network input size and scaled by each chip's maximum.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import serialize
from .ascfit import DictionaryConfig, build_dictionary, omp_fit
from .components import FeatureBasis, amplitude_components, components_from_centers
from .parallel import pmap
from .radar import (CLASS_TEMPLATES, DEFAULT_CLASSES, RadarConfig, ScatterCenter, Spectrum,
                    SynthJitter, evaluate_spectrum, render_image, synth_target)

COMPONENT_SOURCES = ("truth", "amp", "omp")
REFERENCE_DEPRESSION_DEG = 17.0

# set tags keep per-sample seeds of different sets disjoint
SET_TAGS = {"pool": 0, "ofa1": 1, "ofa2": 2, "ofa3": 3}


@dataclass
class Dataset:
    chips: np.ndarray            # (N, S, S) float32, max-normalized
    components: np.ndarray       # (N, K, S, S) float32 in [0, 1]
    labels: np.ndarray           # (N,) int64
    azimuths: np.ndarray         # (N,) float64 degrees in [0, 360)
    ids: list[str]
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.chips) == len(self.components) == len(self.azimuths) == len(self.ids) == n):
            raise ValueError("dataset fields have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return self.chips.shape[-1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max(initial=-1)) + 1

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.chips[index], self.components[index], self.labels[index],
                       self.azimuths[index], [self.ids[i] for i in index], list(self.class_names))

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        names = parts[0].class_names
        return Dataset(np.concatenate([p.chips for p in parts]),
                       np.concatenate([p.components for p in parts]),
                       np.concatenate([p.labels for p in parts]),
                       np.concatenate([p.azimuths for p in parts]),
                       [i for p in parts for i in p.ids], list(names))


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    r0, c0 = (h - size) // 2, (w - size) // 2
    return image[..., r0:r0 + size, c0:c0 + size]


def depression_scale(depression_deg: float) -> float:
    """Ground-range stretch of a layout seen at ``depression_deg`` relative to the reference."""
    return math.cos(math.radians(depression_deg)) / math.cos(math.radians(REFERENCE_DEPRESSION_DEG))


# ---------------------------------------------------------------- variant templates

def variant_templates(class_id: int, n_variants: int = 2) -> list[tuple[ScatterCenter, ...]]:
    """Deterministic configuration variants of a class template.

    Variant ``v`` moves every third center (starting at ``v``) 0.4 m along the
    hull and adds one extra point scatterer at a class-dependent location.
    """
    base = CLASS_TEMPLATES[class_id]
    out = []
    for v in range(n_variants):
        moved = [replace(sc, x=sc.x + (0.4 if (i - v) % 3 == 0 else 0.0))
                 for i, sc in enumerate(base)]
        ang = 2 * math.pi * (class_id + 0.37 * (v + 1)) / 8
        moved.append(ScatterCenter(0.8, 0.0, 1.8 * math.cos(ang), 1.2 * math.sin(ang), 0.5))
        out.append(tuple(moved))
    return out


# ---------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthConfig:
    classes: tuple[int, ...] = DEFAULT_CLASSES
    per_class: int = 200
    jitter: SynthJitter = SynthJitter(pos=0.15, amp=1.3, n_clutter=3, clutter_amp=0.25)
    noise: float = 0.1                      # spectrum noise std relative to signal rms
    azimuth_min: float = 0.0
    azimuth_max: float = 360.0
    depression_deg: float = REFERENCE_DEPRESSION_DEG
    pad_to: int = 128
    crop: int = 64
    k: int = 4
    component_source: str = "truth"
    basis: str = FeatureBasis.FULL.value
    # synthetic OFA shift constants
    ofa1_depression_deg: float = 15.0
    ofa2_variant_classes: tuple[int, ...] = (0, 2)
    ofa2_variants_per_class: int = 2
    ofa3_classes: tuple[int, ...] = (4, 3, 5)
    ofa3_depressions_deg: tuple[float, ...] = (15.0, 30.0, 45.0)
    test_per_class: int = 100

    def __post_init__(self):
        if self.component_source not in COMPONENT_SOURCES:
            raise ValueError(f"component_source must be one of {COMPONENT_SOURCES}")
        if self.per_class < 1 or self.test_per_class < 1:
            raise ValueError("per-class counts must be positive")
        if not 0 <= self.azimuth_min < self.azimuth_max <= 360:
            raise ValueError("azimuth range must lie in [0, 360]")
        unknown = set(self.classes) - set(CLASS_TEMPLATES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}")
        for c in self.ofa2_variant_classes + self.ofa3_classes:
            if c not in self.classes:
                raise ValueError(f"OFA class {c} is not in the training class set")

    # flat key = value round-trip for config files
    _LIST_KEYS = ("classes", "ofa2_variant_classes", "ofa3_classes", "ofa3_depressions_deg")

    def to_config(self) -> dict[str, str]:
        out = {}
        for name, value in self.__dict__.items():
            if name == "jitter":
                for jn, jv in value.__dict__.items():
                    out[f"jitter_{jn}"] = repr(jv)
            elif isinstance(value, tuple):
                out[name] = ",".join(repr(v) for v in value)
            else:
                out[name] = str(value)
        return out

    @classmethod
    def from_config(cls, values: dict[str, str], base: "SynthConfig | None" = None) -> "SynthConfig":
        base = cls() if base is None else base
        kw, jit = {}, {}
        types = {k: type(v) for k, v in base.__dict__.items()}
        for key, raw in values.items():
            if key.startswith("jitter_"):
                name = key[len("jitter_"):]
                if name not in base.jitter.__dict__:
                    raise KeyError(f"unknown synth key {key!r}")
                jit[name] = type(getattr(base.jitter, name))(float(raw))
            elif key in cls._LIST_KEYS:
                conv = float if key.endswith("_deg") else int
                kw[key] = tuple(conv(v) for v in raw.split(",") if v.strip())
            elif key in types:
                t = types[key]
                kw[key] = t(float(raw)) if t in (int, float) else t(raw)
            else:
                raise KeyError(f"unknown synth key {key!r}")
        if jit:
            kw["jitter"] = replace(base.jitter, **jit)
        return replace(base, **kw)


def sample_seed(seed: int, tag: int, class_id: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, tag, class_id, index]).generate_state(1)[0])


@dataclass
class Sample:
    chip: np.ndarray
    components: np.ndarray
    label: int
    azimuth: float
    centers: list[ScatterCenter]
    spectrum: Spectrum


def render_sample(centers: Sequence[ScatterCenter], label: int, azimuth: float, rng_seed: int,
                  cfg: SynthConfig, grid: RadarConfig, atoms=None) -> Sample:
    spec = evaluate_spectrum(centers, grid)
    if cfg.noise > 0:
        rng = np.random.default_rng([rng_seed, 1])
        sigma = cfg.noise * math.sqrt(np.mean(np.abs(spec.data) ** 2) / 2)
        noise = sigma * (rng.standard_normal(spec.data.shape) + 1j * rng.standard_normal(spec.data.shape))
        spec = Spectrum(grid, spec.data + noise)
    chip = render_image(spec, cfg.pad_to)
    if cfg.component_source == "truth":
        comps = components_from_centers(centers, grid, cfg.basis, cfg.k, cfg.pad_to, rng_seed).images
    elif cfg.component_source == "amp":
        comps = amplitude_components(chip, cfg.k, rng_seed).images
    else:
        fit = omp_fit(spec, atoms)
        comps = components_from_centers(fit.centers, grid, cfg.basis, cfg.k, cfg.pad_to, rng_seed).images
    pixels = center_crop(chip.pixels, cfg.crop)
    peak = pixels.max()
    pixels = pixels / peak if peak > 0 else pixels
    return Sample(pixels.astype(np.float32), center_crop(comps, cfg.crop).astype(np.float32),
                  label, azimuth, list(centers), spec)


def _generate(jobs, cfg: SynthConfig, grid: RadarConfig, seed: int, tag: int,
              class_names: list[str]) -> Dataset:
    """``jobs`` is a list of (class_id, label, index, templates, range_scale, id_prefix)."""
    atoms = None
    if cfg.component_source == "omp":
        atoms = build_dictionary(grid, DictionaryConfig.pixel_aligned(grid, cfg.pad_to))
    def one(job):
        class_id, label, index, templates, range_scale, prefix = job
        s = sample_seed(seed, tag, class_id, index)
        az = float(np.random.default_rng([s, 0]).uniform(cfg.azimuth_min, cfg.azimuth_max)) % 360.0
        centers, _ = synth_target(class_id, cfg.jitter, s, azimuth_deg=az, range_scale=range_scale,
                                  templates=templates)
        smp = render_sample(centers, label, az, s, cfg, grid, atoms)
        return smp.chip, smp.components, label, az, f"{prefix}-c{class_id}-{index:05d}"

    samples = pmap(one, jobs)
    chips, comps, labels, azs, ids = (list(col) for col in zip(*samples)) if samples else ([],) * 5
    return Dataset(np.stack(chips), np.stack(comps), np.asarray(labels, dtype=np.int64),
                   np.asarray(azs, dtype=np.float64), ids, class_names)


def class_names(cfg: SynthConfig) -> list[str]:
    return [f"class{c}" for c in cfg.classes]


def synth_dataset(cfg: SynthConfig, seed: int, grid: RadarConfig | None = None) -> Dataset:
    """The known pool: ``per_class`` chips per class at the configured depression."""
    grid = RadarConfig() if grid is None else grid
    scale = depression_scale(cfg.depression_deg)
    jobs = [(c, lab, i, None, scale, "pool")
            for lab, c in enumerate(cfg.classes) for i in range(cfg.per_class)]
    return _generate(jobs, cfg, grid, seed, SET_TAGS["pool"], class_names(cfg))


def make_ofa_testsets(cfg: SynthConfig, seed: int, grid: RadarConfig | None = None) -> dict[str, Dataset]:
    """Three blind test sets of increasing shift.

    * OFA-1: every class, fresh seeds, depression ``ofa1_depression_deg``.
    * OFA-2: OFA-1 plus configuration variants of ``ofa2_variant_classes``.
    * OFA-3: ``ofa3_classes`` under each of ``ofa3_depressions_deg``
      (omitted when none of those classes is configured).
    """
    grid = RadarConfig() if grid is None else grid
    names = class_names(cfg)
    label_of = {c: lab for lab, c in enumerate(cfg.classes)}
    n = cfg.test_per_class
    s1 = depression_scale(cfg.ofa1_depression_deg)
    ofa1 = _generate([(c, label_of[c], i, None, s1, "ofa1") for c in cfg.classes for i in range(n)],
                     cfg, grid, seed, SET_TAGS["ofa1"], names)
    jobs = []
    for c in cfg.ofa2_variant_classes:
        for v, tpl in enumerate(variant_templates(c, cfg.ofa2_variants_per_class)):
            templates = {c: tpl}
            jobs += [(c, label_of[c], v * n + i, templates, s1, f"ofa2v{v}") for i in range(n)]
    ofa2 = ofa1
    if jobs:
        ofa2 = Dataset.concat([ofa1, _generate(jobs, cfg, grid, seed, SET_TAGS["ofa2"], names)])
    jobs = []
    for d, dep in enumerate(cfg.ofa3_depressions_deg):
        sc = depression_scale(dep)
        jobs += [(c, label_of[c], d * n + i, None, sc, f"ofa3d{int(round(dep))}")
                 for c in cfg.ofa3_classes for i in range(n)]
    out = {"OFA-1": ofa1, "OFA-2": ofa2}
    if jobs:
        out["OFA-3"] = _generate(jobs, cfg, grid, seed, SET_TAGS["ofa3"], names)
    return out


# ---------------------------------------------------------------- disk layout

def save_dataset(path, ds: Dataset):
    """``chips.skb``, ``components.skb``, ``labels.csv`` and ``classes.txt`` in one directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text("".join(f"{c}\n" for c in ds.class_names), encoding="utf-8")
    serialize.write_skb(root / "chips.skb", ds.chips)
    serialize.write_skb(root / "components.skb", ds.components)
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id", "label", "class", "azimuth_deg"))
        for sid, lab, az in zip(ds.ids, ds.labels, ds.azimuths):
            name = ds.class_names[lab] if ds.class_names else str(lab)
            w.writerow((sid, int(lab), name, repr(float(az))))


def load_dataset(path) -> Dataset:
    root = Path(path)
    chips, _ = serialize.read_skb(root / "chips.skb")
    comps, _ = serialize.read_skb(root / "components.skb")
    class_list = (root / "classes.txt").read_text(encoding="utf-8").split()
    ids, labels, azs = [], [], []
    with open(root / "labels.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["sample_id"])
            labels.append(int(row["label"]))
            azs.append(float(row["azimuth_deg"]))
    return Dataset(chips, comps, np.asarray(labels, dtype=np.int64), np.asarray(azs), ids, class_list)
