"""Seeded synthetic nasal-breath clips with planted class differences.

Positive clips get a lower fundamental and a steeper spectral roll-off
("darker"); everything else is shared.  Not a physiological model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import AudioClip, DatasetManifest, ManifestEntry, encode_wav, write_manifest
from .errors import InvalidConfig, IoFailure


@dataclass(frozen=True)
class SynthConfig:
    n_positive: int = 67
    n_negative: int = 61
    clip_seconds: float = 6.0
    sample_rate: int = 16000
    f0_mean_positive: float = 150.0
    f0_mean_negative: float = 250.0
    f0_jitter: float = 0.10
    spectral_tilt_positive: float = -9.0  # dB/octave above tilt_ref_hz
    spectral_tilt_negative: float = -3.0
    tilt_ref_hz: float = 300.0
    harmonic_level: float = 2.0  # harmonic RMS relative to breath-noise RMS
    n_harmonics: int = 5
    breath_rate_hz: tuple[float, float] = (0.2, 0.4)
    noise_floor_dbfs: float = -60.0
    clips_per_patient: int = 1
    seed: int = 0

    def validate(self):
        if not self.f0_mean_positive < self.f0_mean_negative:
            raise InvalidConfig("positive-class F0 must be below negative-class F0")
        if self.n_positive < 1 or self.n_negative < 1 or self.clips_per_patient < 1:
            raise InvalidConfig("counts must be >= 1")
        if self.clip_seconds <= 0 or self.sample_rate <= 0:
            raise InvalidConfig("duration and sample rate must be positive")

    @classmethod
    def hard(cls, **kw) -> "SynthConfig":
        """Narrow class gap for robustness runs."""
        base = dict(f0_mean_positive=185.0, f0_mean_negative=215.0,
                    spectral_tilt_positive=-5.0, spectral_tilt_negative=-4.0)
        base.update(kw)
        return cls(**base)


def _tilted_noise(rng, n: int, rate: int, tilt_db_per_oct: float, ref_hz: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    octaves = np.log2(np.maximum(f, ref_hz) / ref_hz)
    gain = 10.0 ** (tilt_db_per_oct * octaves / 20.0)
    gain[f < 60.0] = 0.0  # no DC / rumble
    x = np.fft.irfft(spec * gain, n)
    return x / np.sqrt(np.mean(x * x))


def gen_clip(label: str, cfg: SynthConfig = SynthConfig(), clip_seed: int = 0,
             patient_id: str | None = None) -> AudioClip:
    cfg.validate()
    if label not in ("positive", "negative"):
        raise InvalidConfig(f"label must be positive/negative, got {label!r}")
    pos = label == "positive"
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, clip_seed, int(pos)]))
    rate = cfg.sample_rate
    n = int(round(cfg.clip_seconds * rate))
    t = np.arange(n) / rate

    breath_hz = rng.uniform(*cfg.breath_rate_hz)
    env = (0.5 * (1.0 - np.cos(2.0 * np.pi * breath_hz * t + rng.uniform(0, 2 * np.pi)))) ** 2

    tilt = cfg.spectral_tilt_positive if pos else cfg.spectral_tilt_negative
    noise = _tilted_noise(rng, n, rate, tilt, cfg.tilt_ref_hz)

    f0_mean = cfg.f0_mean_positive if pos else cfg.f0_mean_negative
    f0 = f0_mean * (1.0 + rng.uniform(-cfg.f0_jitter, cfg.f0_jitter))
    harm = np.zeros(n)
    for k in range(1, cfg.n_harmonics + 1):
        if k * f0 >= rate / 2:
            break
        harm += np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    harm /= np.sqrt(np.mean(harm * harm))

    x = env * (noise + cfg.harmonic_level * harm)
    x = x / np.max(np.abs(x))
    x += 10.0 ** (cfg.noise_floor_dbfs / 20.0) * rng.standard_normal(n)
    x = 0.9 * x / np.max(np.abs(x))
    sid = patient_id or f"{label}_{clip_seed}"
    return AudioClip(x, rate, source_id=sid, patient_id=patient_id or sid)


def planned_clips(cfg: SynthConfig):
    """Yield (label, patient_id, clip_seed, file_name) in manifest order."""
    clip_seed = 0
    for label, count, prefix in (("positive", cfg.n_positive, "pos"), ("negative", cfg.n_negative, "neg")):
        for i in range(count):
            pid = f"{prefix}{i:03d}"
            for c in range(cfg.clips_per_patient):
                yield label, pid, clip_seed, f"{pid}_{c}.wav"
                clip_seed += 1


def gen_dataset(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write one WAV per clip plus ``manifest.csv`` into ``out_dir``."""
    cfg.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for label, pid, seed, name in planned_clips(cfg):
            clip = gen_clip(label, cfg, seed, pid)
            (out / name).write_bytes(encode_wav(clip.samples, clip.sample_rate_hz))
            entries.append(ManifestEntry(out / name, label, pid))
        manifest = DatasetManifest(entries)
        write_manifest(manifest, out / "manifest.csv")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest


def with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed)
