"""Command-line front end.

Exit codes::

    0  success
    1  other toolkit error
    2  unreadable or empty input, bad config
    3  DSP failure (the offending clip is named on stderr)
    4  leakage audit failed (a bug trap; should never fire)
    5  a training fold holds a single class
    6  model file and config disagree on model kind or feature mask
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import errors as E
from .audio import read_manifest, load_wav, prepare_clip
from .config import ToolkitConfig, load_config
from .cv import run_cv, run_experiment_grid
from .dsp import extract_tracks
from .models import load_model, save_model
from .pipeline import ClipFailure, FittedPipeline, featurize_clip, featurize_manifest, fit_pipeline
from .select import fit_selection
from .stats import FeatureMatrix, column_name, read_feature_csv, resolve_mask, write_feature_csv
from .synth import SynthConfig, gen_dataset

EXIT_OK, EXIT_ERROR, EXIT_INPUT, EXIT_DSP, EXIT_LEAK, EXIT_FOLD, EXIT_SPEC = 0, 1, 2, 3, 4, 5, 6


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- #
# helpers
# --------------------------------------------------------------------------- #

def _config(args) -> ToolkitConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        s = args.seed
        cfg = replace(cfg, selection=replace(cfg.selection, seed=s), model=replace(cfg.model, seed=s),
                      cv=replace(cfg.cv, seed=s, grid_seeds=(s,)))
    if getattr(args, "mask", None):
        cfg = replace(cfg, features=replace(cfg.features, mask=_mask_arg(args.mask)))
    if getattr(args, "method", None):
        cfg = replace(cfg, selection=replace(cfg.selection, method=args.method))
    if getattr(args, "model", None):
        cfg = replace(cfg, model=replace(cfg.model, kind=args.model))
    return cfg


def _mask_arg(text: str):
    # either a mask name or a comma-separated list of track.stat columns
    return tuple(t.strip() for t in text.split(",")) if "," in text or "." in text else text


def _is_manifest(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip().replace(" ", "")
    return first == "path,label,patient_id"


def _load_matrix(path, cfg: ToolkitConfig, workers: int = 1) -> FeatureMatrix:
    """Feature matrix from a manifest (extracted now) or a feature CSV, restricted to the mask."""
    path = Path(path)
    names = [column_name(e) for e in resolve_mask(cfg.features.mask)]
    if _is_manifest(path):
        manifest = read_manifest(path)
        if len(manifest) == 0:
            raise CliExit(EXIT_INPUT, f"{path}: no entries")
        return featurize_manifest(manifest, cfg.dsp, cfg.features.mask, workers)
    fm = read_feature_csv(path)
    try:
        return fm.columns(names)
    except E.UnknownMaskEntry as exc:
        raise CliExit(EXIT_SPEC, f"{path}: feature CSV lacks columns of mask {cfg.features.mask!r}: {exc}")


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _prepared_clip(path, cfg: ToolkitConfig):
    clip = load_wav(path)
    return prepare_clip(clip, cfg.dsp.target_rate_hz)


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #

def cmd_gen(args) -> int:
    kw = {}
    for name in ("n_positive", "n_negative", "clips_per_patient"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    if args.seed is not None:
        kw["seed"] = args.seed
    cfg = SynthConfig.hard(**kw) if args.hard else SynthConfig(**kw)
    manifest = gen_dataset(cfg, args.out)
    print(f"{len(manifest)} clips -> {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config(args)
    manifest = read_manifest(args.manifest)
    if len(manifest) == 0:
        raise CliExit(EXIT_INPUT, f"{args.manifest}: no entries")
    fm = featurize_manifest(manifest, cfg.dsp, cfg.features.mask, args.workers)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(fm, args.out)
    print(f"{fm.n} rows x {fm.d} features -> {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _config(args)
    sel_cfg = cfg.selection if args.k is None else replace(cfg.selection, k=args.k)
    fm = _load_matrix(args.input, cfg, args.workers)
    result = fit_selection(fm, sel_cfg)
    if args.out:
        _write(args.out, result.to_text())
    for name in result.output_names:
        print(name)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    fm = _load_matrix(args.input, cfg, args.workers)
    fitted = fit_pipeline(fm, cfg.pipeline())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(save_model(fitted.model))
    print(f"{fitted.model.spec.kind} model, {fitted.selection.n_outputs} inputs, "
          f"final loss {fitted.history[-1]:.6f} -> {args.out}")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _config(args)
    fm = _load_matrix(args.input, cfg, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.grid:
        grid = run_experiment_grid(fm, cfg.cv.grid_seeds, cfg.pipeline(), cfg.cv.k)
        _write(out / "grid.json", grid.to_json())
        _write(out / "grid.csv", grid.to_csv())
        _write(out / "table.txt", grid.table("accuracy") + "\n" + grid.table("f1"))
        _write(out / "audit.log", grid.audit_text())
        sys.stdout.write(grid.table("accuracy"))
    else:
        rep = run_cv(fm, cfg.pipeline(), cfg.cv.k, cfg.cv.seed, name=f"{cfg.model.kind}/{cfg.selection.method}")
        _write(out / "report.json", rep.to_json())
        _write(out / "audit.log", rep.audit.to_text())
        print(f"accuracy={rep.accuracy:.6f} f1={rep.f1:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    try:
        model = load_model(Path(args.model_file).read_bytes(), expect_kind=args.model)
    except (E.BadMagic, E.VersionMismatch, E.ChecksumFailure) as exc:
        raise CliExit(EXIT_INPUT, f"{args.model_file}: {exc}")
    fitted = FittedPipeline.from_model(model)
    names = [column_name(e) for e in resolve_mask(cfg.features.mask)]
    if names != fitted.columns:
        raise CliExit(EXIT_SPEC, f"model expects {len(fitted.columns)} columns; config mask "
                                 f"{cfg.features.mask!r} gives {len(names)}")
    clip = load_wav(args.wav)
    try:
        full = featurize_clip(clip, cfg.dsp)
    except E.BreathScreenError as exc:
        raise ClipFailure(args.wav, exc) from exc
    pos = {column_name(e): i for i, e in enumerate(resolve_mask("full"))}
    x = full[[pos[c] for c in names]]
    labels, probs = fitted.predict(x[None, :])
    print(f"label={'positive' if labels[0] == 1 else 'negative'} p={float(probs[0]):.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    from . import plots

    cfg = _config(args)
    src = Path(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def clip_figures(path, stem):
        try:
            tracks = extract_tracks(_prepared_clip(path, cfg), cfg.dsp)
        except (E.ClipTooShort, E.InvalidBand, E.InvalidConfig) as exc:
            raise ClipFailure(str(path), exc) from exc
        for name, (svg, _) in (("mfcc", plots.mfcc_heatmap(tracks, f"MFCC map: {stem}")),
                               ("f0", plots.f0_curve(tracks, f"F0 curve: {stem}"))):
            _write(out / f"{stem}_{name}.svg", svg)
            written.append(out / f"{stem}_{name}.svg")
        return tracks

    if src.suffix.lower() == ".wav":
        clip_figures(src, src.stem)
    elif _is_manifest(src):
        manifest = read_manifest(src)
        if len(manifest) == 0:
            raise CliExit(EXIT_INPUT, f"{src}: no entries")
        tracks = [clip_figures(e.path, e.path.stem) for e in manifest.entries]
        svg, _ = plots.class_f0_curves(tracks, manifest.labels, tracks[0].frame_hop_s)
        _write(out / "class_f0.svg", svg)
        written.append(out / "class_f0.svg")
        if len(set(manifest.labels.tolist())) == 2:
            fm = featurize_manifest(manifest, cfg.dsp, cfg.features.mask, args.workers)
            _write(out / "correlation.svg", plots.correlation_heatmap(fm)[0])
            written.append(out / "correlation.svg")
    else:
        fm = read_feature_csv(src)
        _write(out / "correlation.svg", plots.correlation_heatmap(fm)[0])
        written.append(out / "correlation.svg")
    for p in written:
        print(p)
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(_config(args).dumps())
    return EXIT_OK


# --------------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="breathscreen", description="Nasal-breath acoustic screening toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mask=True, method=False, model=False):
        sp.add_argument("--config", help="JSON config file (see `config --dump`)")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        if mask:
            sp.add_argument("--mask", help="mask name (full, paper57, table4, rf23, pca_table3) or track.stat list")
        if method:
            sp.add_argument("--method", choices=["rf", "pca", "corr", "none"])
        if model:
            sp.add_argument("--model", choices=["dnn", "cnn"])
        sp.add_argument("--workers", type=int, default=1, help="clip extraction threads")

    sp = sub.add_parser("gen", help="write a synthetic dataset and manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--hard", action="store_true", help="narrow class gap")
    sp.add_argument("--n-positive", dest="n_positive", type=int)
    sp.add_argument("--n-negative", dest="n_negative", type=int)
    sp.add_argument("--clips-per-patient", dest="clips_per_patient", type=int)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("extract", help="manifest -> feature CSV")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("select", help="fit feature selection and list the chosen features")
    sp.add_argument("input", help="manifest or feature CSV")
    sp.add_argument("--out", help="write the fitted selection (JSON)")
    sp.add_argument("--k", type=int)
    common(sp, method=True)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("train", help="fit scaler, selection and model on all rows")
    sp.add_argument("input", help="manifest or feature CSV")
    sp.add_argument("--out", required=True, help="model file")
    common(sp, method=True, model=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("cv", help="grouped k-fold cross-validation")
    sp.add_argument("input", help="manifest or feature CSV")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--grid", action="store_true", help="run the {cnn,dnn} x {all,rf23,pca,corr8} grid")
    common(sp, method=True, model=True)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("predict", help="classify one WAV file")
    sp.add_argument("model_file")
    sp.add_argument("wav")
    common(sp, model=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("report", help="SVG figures for a clip, manifest or feature CSV")
    sp.add_argument("input")
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("config", help="print the effective configuration")
    sp.add_argument("--dump", action="store_true", help="print defaults (merged with --config)")
    common(sp, mask=True, method=True, model=True)
    sp.set_defaults(func=cmd_config)
    return p


_UNREADABLE = (E.MalformedHeader, E.UnsupportedEncoding, E.TruncatedData, E.EmptyClip)


def _code_for(exc: BaseException) -> int:
    if isinstance(exc, CliExit):
        return exc.code
    if isinstance(exc, ClipFailure):
        # a clip that cannot be decoded is unreadable input, not a DSP failure
        return EXIT_INPUT if isinstance(exc.cause, _UNREADABLE) else EXIT_DSP
    if isinstance(exc, E.LeakageDetected):
        return EXIT_LEAK
    if isinstance(exc, E.FoldClassMissing):
        return EXIT_FOLD
    if isinstance(exc, (E.SpecMismatch, E.UnknownMaskEntry)):
        return EXIT_SPEC
    if isinstance(exc, (OSError, E.ManifestError, E.InvalidConfig, E.BadMagic, E.VersionMismatch,
                        E.ChecksumFailure) + _UNREADABLE):
        return EXIT_INPUT
    if isinstance(exc, (E.ClipTooShort, E.InvalidBand)):
        return EXIT_DSP
    return EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (E.BreathScreenError, OSError, CliExit, E.LeakageDetected) as exc:
        print(f"breathscreen {args.command}: {exc}", file=sys.stderr)
        return _code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
