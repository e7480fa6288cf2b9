"""Manifest featurisation and the fit/apply chain: scaler -> selection -> model."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import DatasetManifest, load_wav, prepare_clip
from .dsp import DspConfig, extract_tracks
from .errors import BreathScreenError, SpecMismatch
from .models import CnnSpec, DnnSpec, ModelState, TrainConfig, init_model, predict, train
from .select import SelectionConfig, SelectionResult, fit_selection
from .stats import FULL_LAYOUT, FeatureMatrix, build_feature_vector, column_name, resolve_mask


class ClipFailure(BreathScreenError):
    """Feature extraction failed for one manifest entry."""

    def __init__(self, source, cause):
        super().__init__(f"{source}: {cause}")
        self.source = source
        self.cause = cause


def featurize_clip(clip, dsp: DspConfig = DspConfig()) -> np.ndarray:
    """Full 63-entry layout for one clip."""
    clip = prepare_clip(clip, dsp.target_rate_hz)
    return build_feature_vector(extract_tracks(clip, dsp), "full").values


def featurize_manifest(manifest: DatasetManifest, dsp: DspConfig = DspConfig(), mask="full",
                       workers: int = 1) -> FeatureMatrix:
    """Extract every clip in manifest order; no labels are consulted, so this is fold-agnostic."""

    def one(entry):
        try:
            return featurize_clip(load_wav(entry.path, entry.patient_id), dsp)
        except OSError:
            raise
        except BreathScreenError as exc:
            raise ClipFailure(str(entry.path), exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, manifest.entries))
    else:
        rows = [one(e) for e in manifest.entries]
    full = FeatureMatrix(
        np.vstack(rows),
        [column_name(e) for e in FULL_LAYOUT],
        manifest.labels,
        manifest.groups,
        [e.path.stem for e in manifest.entries],
    )
    return full.columns([column_name(e) for e in resolve_mask(mask)])


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
        return cls(mu, sd)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True)
class PipelineSpec:
    model: str = "dnn"  # dnn | cnn
    selection: SelectionConfig = SelectionConfig()
    train: TrainConfig = TrainConfig()
    hidden: tuple[int, ...] = (64, 32, 16)
    dropout: float = 0.25
    standardize: bool = True
    threshold: float = 0.5


def model_spec_for(kind: str, d_in: int, hidden=(64, 32, 16), dropout=0.25):
    if kind == "dnn":
        return DnnSpec.for_input(d_in, tuple(hidden), dropout)
    if kind == "cnn":
        return CnnSpec.for_input(d_in)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class FittedPipeline:
    columns: list[str]
    scaler: Standardizer | None
    selection: SelectionResult
    model: ModelState
    threshold: float = 0.5
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.scaler is not None:
            X = self.scaler.transform(X)
        return self.selection.transform(X)

    def predict(self, X):
        return predict(self.model, self.transform(X), self.threshold)

    def to_meta(self) -> dict:
        return {
            "columns": list(self.columns),
            "scaler": None if self.scaler is None else {
                "mean": self.scaler.mean.tolist(), "scale": self.scaler.scale.tolist()},
            "selection": self.selection.to_dict(),
            "threshold": self.threshold,
        }

    @classmethod
    def from_model(cls, model: ModelState) -> "FittedPipeline":
        meta = model.meta
        if "columns" not in meta:
            raise SpecMismatch("model file carries no feature layout")
        sc = meta.get("scaler")
        return cls(
            list(meta["columns"]),
            None if sc is None else Standardizer(np.array(sc["mean"]), np.array(sc["scale"])),
            SelectionResult.from_dict(meta["selection"]),
            model,
            meta.get("threshold", 0.5),
        )


def fit_pipeline(data: FeatureMatrix, spec: PipelineSpec, model_seed: int | None = None,
                 train_seed: int | None = None, selection_seed: int | None = None,
                 on_fit=None) -> FittedPipeline:
    """Fit scaler, selection and model on exactly the rows of ``data``.

    ``on_fit(stage, row_index)`` is called with the original row numbers of
    the matrix handed to each fitting stage.
    """
    def touched(stage, fm):
        if on_fit is not None:
            on_fit(stage, fm.row_index)

    X = data.X
    touched("scaler_fit", data)
    scaler = Standardizer.fit(X) if spec.standardize else None
    Xs = scaler.transform(X) if scaler is not None else X
    sel_cfg = spec.selection if selection_seed is None else replace(spec.selection, seed=selection_seed)
    scaled = FeatureMatrix(Xs, list(data.column_names), data.y, list(data.groups), row_index=data.row_index)
    touched("selection_fit", scaled)
    selection = fit_selection(scaled, sel_cfg)
    Z = selection.transform(Xs)
    mspec = model_spec_for(spec.model, Z.shape[1], spec.hidden, spec.dropout)
    model = init_model(mspec, spec.train.seed if model_seed is None else model_seed)
    tcfg = spec.train if train_seed is None else replace(spec.train, seed=train_seed)
    touched("model_train", scaled)
    model, history = train(model, Z, scaled.y, tcfg)
    fitted = FittedPipeline(list(data.column_names), scaler, selection, model, spec.threshold, history)
    model.meta = fitted.to_meta()
    return fitted
