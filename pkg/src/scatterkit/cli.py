"""Command-line entry point: ``scatterkit <subcommand> [flags]``.

Common flags: ``--config PATH`` (flat ``key = value`` file; flags override
it), ``--seed``, ``--out DIR``, ``--threads N``, ``--precision``.
Failures exit nonzero after printing one line ``error: <category>: <detail>``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("scatterkit")

EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_STAGE, EXIT_INTERNAL = 2, 3, 4, 5, 70


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category, self.code = category, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError("usage", message, EXIT_USAGE)


# ---------------------------------------------------------------- run manifest

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(p for p in path.rglob("*") if p.is_file())


class RunManifest:
    """Subcommand, config, seed, output directory and hashed inputs/artifacts."""

    NAME = "run_manifest.txt"

    def __init__(self, subcommand: str, config: str | None, seed: int, out: Path):
        self.subcommand, self.config, self.seed, self.out = subcommand, config, seed, out
        self.inputs: dict[str, str] = {}
        self.settings: dict[str, str] = {}

    def add_input(self, path):
        p = Path(path)
        for f in _tree_files(p):
            self.inputs[str(f)] = sha256_file(f)

    def write(self) -> Path:
        lines = [f"subcommand = {self.subcommand}", f"version = {__version__}",
                 f"config = {self.config or ''}", f"seed = {self.seed}", f"out = {self.out}"]
        lines += [f"setting.{k} = {v}" for k, v in sorted(self.settings.items())]
        lines += [f"input.{k} = sha256:{v}" for k, v in sorted(self.inputs.items())]
        for f in _tree_files(self.out):
            if f.name == self.NAME:
                continue
            lines.append(f"artifact.{f.relative_to(self.out)} = sha256:{sha256_file(f)}")
        path = self.out / self.NAME
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


# ---------------------------------------------------------------- config helpers

def _load_config(path: str | None) -> dict[str, str]:
    from .serialize import FormatError, read_config
    if path is None:
        return {}
    try:
        return read_config(path)
    except OSError as exc:
        raise CliError("config", f"cannot read config {path}: {exc.strerror}", EXIT_CONFIG) from exc
    except FormatError as exc:
        raise CliError("config", f"{path}: {exc}", EXIT_CONFIG) from exc


def _section(cfg: dict[str, str], prefix: str) -> dict[str, str]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def _get(cfg: dict[str, str], key: str, flag, conv, default):
    if flag is not None:
        return flag
    if key in cfg:
        try:
            return conv(cfg[key])
        except ValueError as exc:
            raise CliError("config", f"bad value for {key}: {cfg[key]!r}", EXIT_CONFIG) from exc
    return default


def _radar(cfg: dict[str, str]):
    from .radar import RadarConfig
    sec = _section(cfg, "radar")
    kw = {}
    for key in ("center_freq", "bandwidth", "aspect_center", "aspect_span", "c"):
        if key in sec:
            kw[key] = float(sec[key])
    for key in ("n_freq", "n_aspect"):
        if key in sec:
            kw[key] = int(sec[key])
    if "aspect_term" in sec:
        kw["aspect_term"] = sec["aspect_term"]
    try:
        return RadarConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"radar section: {exc}", EXIT_CONFIG) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory {out}: {exc.strerror}", EXIT_INPUT) from exc
    if not os.access(out, os.W_OK):
        raise CliError("io", f"output directory {out} is not writable", EXIT_INPUT)
    return out


def _need(path: str | None, what: str) -> Path:
    if path is None:
        raise CliError("usage", f"--{what} is required", EXIT_USAGE)
    p = Path(path)
    if not p.exists():
        raise CliError("input", f"{what} not found: {p}", EXIT_INPUT)
    return p


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg, man: RunManifest):
    from .dataset import SynthConfig, make_ofa_testsets, save_dataset, synth_dataset
    from .radar import DEFAULT_CLASSES
    from .serialize import save_chip, save_spectrum, write_centers
    try:
        sc = SynthConfig.from_config(_section(cfg, "synth"))
    except (KeyError, ValueError) as exc:
        raise CliError("config", f"synth section: {exc}", EXIT_CONFIG) from exc
    over = {}
    if args.classes is not None:
        if not 1 <= args.classes <= len(DEFAULT_CLASSES):
            raise CliError("usage", f"--classes must be in 1..{len(DEFAULT_CLASSES)}", EXIT_USAGE)
        classes = DEFAULT_CLASSES[:args.classes]
        over["classes"] = classes
        over["ofa2_variant_classes"] = tuple(c for c in sc.ofa2_variant_classes if c in classes)
        over["ofa3_classes"] = tuple(c for c in sc.ofa3_classes if c in classes)
    if args.per_class is not None:
        over["per_class"] = args.per_class
    if args.test_per_class is not None:
        over["test_per_class"] = args.test_per_class
    if args.components is not None:
        over["component_source"] = args.components
    try:
        sc = sc.__class__(**{**sc.__dict__, **over})
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc
    grid = _radar(cfg)
    out = _out_dir(args)
    man.settings.update({f"synth.{k}": v for k, v in sc.to_config().items()})
    log.info("synthesizing %d classes x %d", len(sc.classes), sc.per_class)
    save_dataset(out / "pool", synth_dataset(sc, args.seed, grid))
    if not args.no_tests:
        for name, ds in make_ofa_testsets(sc, args.seed, grid).items():
            save_dataset(out / name, ds)
    if args.examples:
        from .dataset import render_sample, sample_seed
        from .radar import render_image, synth_target
        ex = out / "examples"
        ex.mkdir(exist_ok=True)
        for c in sc.classes:
            s = sample_seed(args.seed, 99, c, 0)
            centers, _ = synth_target(c, sc.jitter, s)
            smp = render_sample(centers, c, 0.0, s, sc, grid)
            write_centers(ex / f"class{c}.asc", centers, {"class": c, "seed": s})
            save_spectrum(ex / f"class{c}_spectrum.skb", smp.spectrum)
            save_chip(ex / f"class{c}_chip.skb", render_image(smp.spectrum, sc.pad_to))
    print(f"synth: wrote {out}")


def cmd_fit_asc(args, cfg, man: RunManifest):
    from .ascfit import DictionaryConfig, DictionarySizeError, build_dictionary, omp_fit
    from .serialize import FormatError, load_spectrum, write_centers
    path = _need(args.input, "input")
    man.add_input(path)
    try:
        spec = load_spectrum(path)
    except (FormatError, ValueError) as exc:
        raise CliError("format", f"{path}: {exc}", EXIT_INPUT) from exc
    sec = _section(cfg, "asc")
    q_max = _get(sec, "q_max", args.q_max, int, 30)
    tol = _get(sec, "resid_tol", args.tol, float, 0.1)
    pad = _get(sec, "pad_to", args.pad_to, int, 128)
    try:
        dcfg = DictionaryConfig.pixel_aligned(spec.grid, pad)
        if args.extent is not None:
            e = args.extent
            dcfg = DictionaryConfig(dcfg.x_step, dcfg.y_step, x_range=(-e, e), y_range=(-e, e),
                                    length_values=dcfg.length_values,
                                    phi_bar_values=dcfg.phi_bar_values)
        atoms = build_dictionary(spec.grid, dcfg)
    except DictionarySizeError as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc
    man.settings.update({"q_max": str(q_max), "resid_tol": str(tol), "atoms": str(len(atoms))})
    res = omp_fit(spec, atoms, q_max=q_max, resid_tol=tol)
    out = _out_dir(args)
    write_centers(out / "centers.asc", res.centers,
                  {"residual_norm": res.residual_norm, "iterations": res.iterations})
    (out / "fit.json").write_text(res.dumps() + "\n", encoding="utf-8")
    s_norm = spec.norm()
    rel = res.residual_norm / s_norm if s_norm > 0 else 0.0
    print(f"fit-asc: centers={len(res.centers)} iterations={res.iterations} "
          f"residual_norm={res.residual_norm:.6g} relative_residual={rel:.6g} tol={tol} "
          f"{'converged' if rel <= tol else 'not_converged'}")


def _read_centers(path):
    from .serialize import FormatError, read_centers
    try:
        return read_centers(path)[0]
    except (FormatError, ValueError, KeyError) as exc:
        raise CliError("format", f"{path}: {exc}", EXIT_INPUT) from exc


def cmd_cluster(args, cfg, man: RunManifest):
    from .components import FeatureBasis, cluster_groups
    path = _need(args.input, "input")
    man.add_input(path)
    centers = _read_centers(path)
    sec = _section(cfg, "components")
    k = _get(sec, "k", args.k, int, 4)
    basis = _get(sec, "basis", args.basis, str, FeatureBasis.FULL.value)
    try:
        groups, _ = cluster_groups(centers, basis, k, args.seed)
    except ValueError as exc:
        raise CliError("input", str(exc), EXIT_INPUT) from exc
    out = _out_dir(args)
    with open(out / "assignments.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("center", "component", "weight"))
        for comp, members in enumerate(groups):
            for i, wt in members:
                w.writerow((i, comp, repr(float(wt))))
    print(f"cluster: {len(centers)} centers -> {k} components")


def _read_assignments(path, n):
    members: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            members.setdefault(int(row["component"]), []).append((int(row["center"]), float(row["weight"])))
    k = max(members) + 1 if members else 0
    groups = [members.get(c, []) for c in range(k)]
    assign = np.zeros(n, dtype=np.int64)
    for c, g in enumerate(groups):
        for i, _ in g:
            assign[i] = c
    return assign, groups, k


def cmd_render_components(args, cfg, man: RunManifest):
    from .components import amplitude_components, components_from_centers, reconstruct_components
    from .serialize import FormatError, load_chip, write_skb
    sec = _section(cfg, "components")
    k = _get(sec, "k", args.k, int, 4)
    pad = _get(sec, "pad_to", args.pad_to, int, 128)
    out = _out_dir(args)
    if args.chip is not None:
        path = _need(args.chip, "chip")
        man.add_input(path)
        try:
            chip = load_chip(path)
        except (FormatError, ValueError) as exc:
            raise CliError("format", f"{path}: {exc}", EXIT_INPUT) from exc
        comps = amplitude_components(chip, k, args.seed)
    else:
        path = _need(args.input, "input")
        man.add_input(path)
        centers = _read_centers(path)
        grid = _radar(cfg)
        if args.assignments is not None:
            apath = _need(args.assignments, "assignments")
            man.add_input(apath)
            assign, groups, k_file = _read_assignments(apath, len(centers))
            comps = reconstruct_components(centers, assign, grid, pad, k=k_file, members=groups)
        else:
            basis = _get(sec, "basis", args.basis, str, "x,y,L,phi_bar,alpha,A")
            comps = components_from_centers(centers, grid, basis, k, pad, args.seed)
    write_skb(out / "components.skb", comps.images.astype(np.float32), (comps.scale,))
    print(f"render-components: {comps.k} maps of {comps.shape[0]}x{comps.shape[1]}")


def cmd_gradcheck(args, cfg, man: RunManifest):
    from .tensor.gradcheck import run_all
    precision = args.precision or cfg.get("precision", "double")
    instances = _get(cfg, "gradcheck.instances", args.instances, int, 10)
    rep = run_all(precision, instances, args.seed)
    name, err = rep.worst
    if args.out is not None:
        out = _out_dir(args)
        with open(out / "gradcheck.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("op", "max_rel_error", "tolerance", "pass"))
            for op in sorted(rep.results):
                w.writerow((op, f"{rep.results[op]:.3e}", rep.tolerance, int(rep.results[op] < rep.tolerance)))
    print(f"gradcheck: precision={precision} ops={len(rep.results)} worst={name} "
          f"rel_error={err:.3e} tol={rep.tolerance:g} {'PASS' if rep.passed else 'FAIL'}")
    if not rep.passed:
        failing = ",".join(sorted(k for k, v in rep.results.items() if v >= rep.tolerance))
        raise CliError("gradcheck", f"ops over tolerance: {failing}", EXIT_STAGE)


def _backbone(cfg, n_classes, baseline):
    from .net import BackboneConfig
    sec = _section(cfg, "backbone")
    sec.setdefault("n_classes", str(n_classes))
    try:
        bb = BackboneConfig.from_config(sec)
    except ValueError as exc:
        raise CliError("config", f"backbone section: {exc}", EXIT_CONFIG) from exc
    return bb.baseline() if baseline else bb


def _train_config(args, cfg):
    from .net import TrainConfig
    try:
        tc = TrainConfig.from_config(_section(cfg, "train"))
        over = {"rng_seed": args.seed}
        if args.precision:
            over["precision"] = args.precision
        if args.max_epochs is not None:
            over["max_epochs"] = args.max_epochs
            over["early_stop_patience"] = min(tc.early_stop_patience, args.max_epochs)
        if args.repeats is not None:
            over["repeats"] = args.repeats
        return tc.__class__(**{**tc.__dict__, **over})
    except ValueError as exc:
        raise CliError("config", f"train section: {exc}", EXIT_CONFIG) from exc


def _load_data(path):
    from .dataset import load_dataset
    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError("input", f"cannot load dataset {path}: {exc}", EXIT_INPUT) from exc


def cmd_train(args, cfg, man: RunManifest):
    from .net import Model, TrainingDiverged, save_checkpoint, train
    from .ofa import OfaSpec, SplitError, make_splits
    data = _need(args.data, "data")
    pool_dir = data / "pool" if (data / "pool").is_dir() else data
    man.add_input(pool_dir)
    pool = _load_data(pool_dir)
    tc = _train_config(args, cfg)
    fraction = _get(cfg, "ofa.train_fraction", args.fraction, float, 0.9)
    try:
        spec = OfaSpec(train_fraction=fraction, repeats=tc.repeats, seed=args.seed)
        tr_idx, va_idx = make_splits(pool.labels, spec)
    except (ValueError, SplitError) as exc:
        raise CliError("data", str(exc), EXIT_INPUT) from exc
    bb = _backbone(cfg, pool.n_classes, args.baseline)
    man.settings.update({f"train.{k}": str(v) for k, v in tc.__dict__.items()})
    man.settings.update({f"backbone.{k}": v for k, v in bb.to_config().items()})
    man.settings["ofa.train_fraction"] = str(fraction)
    out = _out_dir(args)
    np.savetxt(out / "split_train.txt", tr_idx, fmt="%d")
    np.savetxt(out / "split_val.txt", va_idx, fmt="%d")
    train_set, val_set = pool.subset(tr_idx), pool.subset(va_idx)
    for r in range(tc.repeats):
        seed_r = int(np.random.SeedSequence([args.seed, r]).generate_state(1)[0])
        model = Model.init(bb, seed_r, tc.dtype)
        try:
            res = train(model, train_set, val_set, tc.__class__(**{**tc.__dict__, "rng_seed": seed_r}))
        except TrainingDiverged as exc:
            raise CliError("numeric", str(exc), EXIT_STAGE) from exc
        rdir = out / f"repeat{r}"
        save_checkpoint(model, rdir / "checkpoint")
        res.write_history(rdir / "history.csv")
        print(f"train: repeat={r} best_epoch={res.best_epoch} val_acc={res.best_val_acc:.2f} "
              f"stop={res.reason}")


def _models(path: Path):
    from .net import load_checkpoint
    from .serialize import FormatError
    dirs = sorted(p.parent for p in path.rglob("manifest.txt") if p.parent.name == "checkpoint") \
        if not (path / "manifest.txt").is_file() else [path]
    if not dirs:
        raise CliError("input", f"no checkpoints under {path}", EXIT_INPUT)
    try:
        return dirs, [load_checkpoint(d) for d in dirs]
    except (FormatError, OSError, ValueError) as exc:
        raise CliError("format", f"bad checkpoint: {exc}", EXIT_INPUT) from exc


def cmd_eval(args, cfg, man: RunManifest):
    from .ofa import (OfaReport, azimuth_csv, confusion_csv, evaluate, format_table,
                      model_predictor, report_csv)
    data = _need(args.data, "data")
    methods = {args.name: _need(args.models, "models")}
    if args.compare is not None:
        methods[args.compare_name] = _need(args.compare, "compare")
    sets = {}
    for name in ("OFA-1", "OFA-2", "OFA-3"):
        if (data / name).is_dir():
            man.add_input(data / name)
            sets[name] = _load_data(data / name)
    if not sets:
        raise CliError("input", f"no OFA-1/OFA-2/OFA-3 test sets under {data}", EXIT_INPUT)
    fraction = _get(cfg, "ofa.train_fraction", args.fraction, float, 0.9)
    reports = {}
    for method, path in methods.items():
        dirs, models = _models(path)
        for d in dirs:
            man.add_input(d)
        reports[method] = evaluate([model_predictor(m) for m in models], sets, fraction, OfaReport())
    out = _out_dir(args)
    table = format_table(reports)
    (out / "report.txt").write_text(table, encoding="utf-8")
    (out / "report.csv").write_text(report_csv(reports), encoding="utf-8")
    (out / "azimuth.csv").write_text(azimuth_csv(reports), encoding="utf-8")
    (out / "confusion.csv").write_text(confusion_csv(reports), encoding="utf-8")
    print(table, end="")


def cmd_mstar_split(args, cfg, man: RunManifest):
    from .mstar import SETS, MissingSerialsError, mstar_adapter
    root = Path(args.root) if args.root else None
    if root is None:
        raise CliError("usage", "--root is required", EXIT_USAGE)
    try:
        pools = mstar_adapter(root)
    except MissingSerialsError as exc:
        raise CliError("missing-data", str(exc), EXIT_INPUT) from exc
    except ValueError as exc:
        raise CliError("format", str(exc), EXIT_INPUT) from exc
    man.add_input(root / "manifest.csv")
    out = _out_dir(args)
    for s in SETS:
        with open(out / f"{s}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("relative_path", "class", "serial", "depression_deg", "azimuth_deg"))
            for it in pools.sets[s]:
                w.writerow((it.relative_path, it.class_name, it.serial, it.depression_deg, it.azimuth_deg))
    (out / "count_report.csv").write_text(pools.report(), encoding="utf-8")
    print("mstar-split: " + " ".join(f"{s}={n}" for s, n in pools.totals().items()))


def cmd_dump_attn(args, cfg, man: RunManifest):
    from .net import prepare
    from .piha import attention_rows, write_attention_csv
    from .tensor.core import no_grad
    mpath = _need(args.model, "model")
    dpath = _need(args.data, "data")
    man.add_input(dpath)
    dirs, models = _models(mpath)
    model = models[0]
    man.add_input(dirs[0])
    if not model.blocks:
        raise CliError("input", "model has no PIHA blocks to dump", EXIT_INPUT)
    ds = _load_data(dpath)
    if args.limit is not None:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    prep = prepare(model, ds)
    stage = args.stage if args.stage is not None else max(model.blocks)
    if stage not in model.blocks:
        raise CliError("usage", f"no PIHA block after stage {stage}", EXIT_USAGE)
    rows = []
    with no_grad():
        for start in range(0, len(ds), 64):
            sl = slice(start, start + 64)
            x, maps, _ = prep.batch(sl)
            traces: dict = {}
            model.forward(x, maps, traces)
            rows += list(attention_rows(ds.ids[sl], ds.azimuths[sl], traces[stage],
                                        model.blocks[stage].cfg))
    out = _out_dir(args)
    write_attention_csv(out / "attention.csv", rows)
    print(f"dump-attn: {len(ds)} samples, stage {stage}, {len(rows)} rows")


COMMANDS = {
    "synth": cmd_synth, "fit-asc": cmd_fit_asc, "cluster": cmd_cluster,
    "render-components": cmd_render_components, "gradcheck": cmd_gradcheck,
    "train": cmd_train, "eval": cmd_eval, "mstar-split": cmd_mstar_split,
    "dump-attn": cmd_dump_attn,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", metavar="PATH", help="flat key = value config file (flags override)")
    g.add_argument("--seed", type=int, default=0, metavar="U64", help="random seed (default 0)")
    g.add_argument("--out", metavar="DIR", help="output directory")
    g.add_argument("--threads", type=int, default=1, metavar="N",
                   help="worker cap for per-sample synthesis and batched inference; output does not depend on N")
    g.add_argument("--precision", choices=("single", "double"),
                   help="floating precision (gradcheck default double, train default single)")

    p = _Parser(prog="scatterkit", description="Scattering-center simulation, component "
                "extraction and hybrid-attention training toolkit.")
    p.add_argument("--version", action="version", version=f"scatterkit {__version__}")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a labeled synthetic pool and OFA test sets")
    s.add_argument("--classes", type=int, help="number of classes (first N templates)")
    s.add_argument("--per-class", type=int, help="pool chips per class")
    s.add_argument("--test-per-class", type=int, help="test chips per class and shift condition")
    s.add_argument("--components", choices=("truth", "amp", "omp"),
                   help="component source: true centers, amplitude pixels, or an OMP fit")
    s.add_argument("--no-tests", action="store_true", help="skip the OFA test sets")
    s.add_argument("--examples", action="store_true",
                   help="also write one centre list and spectrum per class under examples/")

    s = sub.add_parser("fit-asc", parents=[common], help="OMP scattering-center fit of an SKB1 spectrum")
    s.add_argument("--input", metavar="SKB", help="spectrum file")
    s.add_argument("--q-max", type=int, help="maximum number of centers (default 30)")
    s.add_argument("--tol", type=float, help="relative residual stop (default 0.1)")
    s.add_argument("--pad-to", type=int, help="image size defining the position grid (default 128)")
    s.add_argument("--extent", type=float, metavar="M", help="restrict positions to [-M, M] metres")

    s = sub.add_parser("cluster", parents=[common], help="K-means components of a centre list")
    s.add_argument("--input", metavar="ASC", help="centre list (one JSON object per line)")
    s.add_argument("--k", type=int, help="number of components (default 4)")
    s.add_argument("--basis", help="feature basis, e.g. 'x,y,L,phi_bar,alpha,A' or 'Amp,Loc'")

    s = sub.add_parser("render-components", parents=[common], help="render K component images")
    s.add_argument("--input", metavar="ASC", help="centre list")
    s.add_argument("--assignments", metavar="CSV", help="cluster output; clusters afresh when omitted")
    s.add_argument("--chip", metavar="SKB", help="magnitude chip for amplitude-only components")
    s.add_argument("--k", type=int, help="number of components (default 4)")
    s.add_argument("--basis", help="feature basis when clustering")
    s.add_argument("--pad-to", type=int, help="image size (default 128)")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    s.add_argument("--instances", type=int, help="random instances per op (default 10)")

    s = sub.add_parser("train", parents=[common], help="train one model per repeat on a synth pool")
    s.add_argument("--data", metavar="DIR", help="synth output (or a dataset directory)")
    s.add_argument("--fraction", type=float, help="training fraction: 0.9, 0.5, 0.3 or 0.1")
    s.add_argument("--baseline", action="store_true", help="remove every PIHA block")
    s.add_argument("--repeats", type=int, help="models to train (default from config, 5)")
    s.add_argument("--max-epochs", type=int, help="epoch cap")

    s = sub.add_parser("eval", parents=[common], help="OFA report for trained models")
    s.add_argument("--data", metavar="DIR", help="synth output holding OFA-1/2/3")
    s.add_argument("--models", metavar="DIR", help="train output")
    s.add_argument("--name", default="PIHA", help="method label (default PIHA)")
    s.add_argument("--compare", metavar="DIR", help="second train output, e.g. a baseline")
    s.add_argument("--compare-name", default="baseline", help="label for --compare")
    s.add_argument("--fraction", type=float, help="training fraction label for the report")

    s = sub.add_parser("mstar-split", parents=[common], help="select OFA pools from an MSTAR tree")
    s.add_argument("--root", metavar="DIR", help="tree with manifest.csv")

    s = sub.add_parser("dump-attn", parents=[common], help="per-sample attention weights as CSV")
    s.add_argument("--model", metavar="DIR", help="checkpoint or train output")
    s.add_argument("--data", metavar="DIR", help="dataset directory")
    s.add_argument("--stage", type=int, help="PIHA stage (default: deepest)")
    s.add_argument("--limit", type=int, help="first N samples only")
    return p


def _setup_logging():
    level = os.environ.get("SCATTERKIT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise CliError("config", f"SCATTERKIT_LOG must be one of {sorted(levels)}", EXIT_CONFIG)
    logging.basicConfig(level=levels[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            raise CliError("usage", "missing subcommand", EXIT_USAGE)
        if args.threads < 1:
            raise CliError("usage", "--threads must be >= 1", EXIT_USAGE)
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise CliError("usage", "--seed must fit in an unsigned 64-bit integer", EXIT_USAGE)
        cfg = _load_config(args.config)
        needs_out = args.command != "gradcheck"
        if needs_out and args.out is None:
            raise CliError("usage", "--out is required", EXIT_USAGE)
        man = RunManifest(args.command, args.config, args.seed, Path(args.out)) if args.out else None
        if args.config:
            man and man.add_input(args.config)
        from threadpoolctl import threadpool_limits

        from .parallel import worker_limit
        # BLAS stays single-threaded: its reductions are not bitwise stable across thread counts
        with threadpool_limits(limits=1), worker_limit(args.threads):
            COMMANDS[args.command](args, cfg, man or RunManifest(args.command, None, args.seed, Path(".")))
        if man is not None:
            man.write()
        return 0
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        print("error: interrupted: stopped by user", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
