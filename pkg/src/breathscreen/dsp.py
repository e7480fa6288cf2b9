"""Framing and the nine per-frame acoustic tracks.

Tracks: voiced / unvoiced indicators, effective-segment lengths, F0, log
energy, short-term energy, zero-crossing rate, SPL (dBFS) and MFCCs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .errors import ClipTooShort, InvalidBand, InvalidConfig

EPS = 1e-10


@dataclass(frozen=True)
class DspConfig:
    target_rate_hz: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    window: str = "hamming"
    f0_min_hz: float = 70.0
    f0_max_hz: float = 500.0
    voicing_corr: float = 0.45
    octave_tol: float = 0.8
    n_fft: int = 512
    n_filters: int = 26
    n_mfcc: int = 13
    eps: float = EPS
    zcr_threshold: float = 0.3
    t_low_fraction: float = 0.05
    t_high_ratio: float = 3.0
    min_run: int = 3

    def frame_len(self, rate: int) -> int:
        return int(round(self.frame_ms * rate / 1000.0))

    def hop(self, rate: int) -> int:
        return max(1, int(round(self.hop_ms * rate / 1000.0)))


@dataclass(frozen=True)
class FrameSeries:
    frames: np.ndarray  # (n_frames, frame_len), window already applied
    frame_len: int
    hop: int
    sample_rate_hz: int
    raw: np.ndarray | None = None  # same frames before windowing

    @property
    def unwindowed(self) -> np.ndarray:
        return self.frames if self.raw is None else self.raw

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def n_frames_for(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def hamming(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(clip: AudioClip, frame_len: int, hop: int, window: str = "hamming") -> FrameSeries:
    x = clip.samples
    if frame_len < 1 or hop < 1:
        raise InvalidConfig("frame_len and hop must be >= 1")
    if x.size < frame_len:
        raise ClipTooShort(f"{clip.source_id}: {x.size} samples < frame length {frame_len}")
    n = n_frames_for(x.size, frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    raw = x[idx]
    if window == "hamming":
        frames = raw * hamming(frame_len)
    elif window == "rectangular":
        frames = raw
    else:
        raise InvalidConfig(f"unknown window {window!r}")
    return FrameSeries(frames, frame_len, hop, clip.sample_rate_hz, raw)


def zero_crossing_rate(frames: np.ndarray) -> np.ndarray:
    """Fraction of adjacent sample pairs that change sign (zero counts as positive)."""
    n = frames.shape[1]
    if n < 2:
        return np.zeros(frames.shape[0])
    s = frames >= 0.0
    return np.count_nonzero(s[:, 1:] != s[:, :-1], axis=1) / (n - 1)


def per_frame_basic(fs: FrameSeries, eps: float = EPS):
    """Return (short_term_energy, log_energy, zcr, spl_db) tracks."""
    if eps <= 0:
        raise InvalidConfig("eps must be positive")
    f = fs.frames
    ste = np.mean(f * f, axis=1)
    log_e = np.log(ste + eps)
    zcr = zero_crossing_rate(f)
    spl = 20.0 * np.log10(np.sqrt(ste) + eps)
    return ste, log_e, zcr, spl


def normalized_autocorr(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalised cross-correlation of each frame with its own lagged copy.

    r[tau] = sum x[n] x[n+tau] / sqrt(sum_{n<N-tau} x[n]^2 * sum_{n>=tau} x[n]^2)
    """
    n_frames, n = frames.shape
    max_lag = min(max_lag, n - 1)
    n_fft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n_fft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), n_fft, axis=1)[:, : max_lag + 1]
    sq = frames * frames
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]  # energy of x[0 : n-tau]
    tail = csum[:, [n]] - csum[:, lags]  # energy of x[tau : n]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, ac / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def estimate_f0(fs: FrameSeries, f_min: float = 70.0, f_max: float = 500.0,
                threshold: float = 0.45, octave_tol: float = 0.8) -> np.ndarray:
    """Per-frame F0 in Hz, NaN where the frame is aperiodic.

    Runs on the unwindowed frames: a taper skews the correlation peak toward
    short lags by a few percent.  Lag search covers [fs/f_max, fs/f_min]; only
    interior local maxima count.
    Among peaks reaching ``octave_tol`` of the best one, the shortest lag wins,
    which keeps multiples of the true period from being reported.
    """
    if not f_min < f_max:
        raise InvalidBand(f"f_min {f_min} must be below f_max {f_max}")
    rate = fs.sample_rate_hz
    if f_max >= rate / 2:
        raise InvalidBand(f"f_max {f_max} must be below Nyquist {rate / 2}")
    lag_lo = max(1, int(np.floor(rate / f_max)))
    lag_hi = int(np.ceil(rate / f_min))
    out = np.full(fs.n_frames, np.nan)
    if lag_lo + 1 >= fs.frame_len:
        return out
    r = normalized_autocorr(fs.unwindowed, lag_hi + 1)
    top = r.shape[1] - 1
    for i in range(fs.n_frames):
        ri = r[i]
        hi = min(lag_hi, top - 1)
        lags = np.arange(max(lag_lo, 1), hi + 1)
        if lags.size == 0:
            continue
        v = ri[lags]
        peak = (v > ri[lags - 1]) & (v >= ri[lags + 1]) & (v >= threshold)
        if not peak.any():
            continue
        cand = lags[peak]
        best = ri[cand].max()
        tau = int(cand[np.argmax(ri[cand] >= octave_tol * best)])
        a, b, c = ri[tau - 1], ri[tau], ri[tau + 1]
        den = a - 2.0 * b + c
        shift = 0.5 * (a - c) / den if den < 0 else 0.0
        out[i] = min(max(rate / (tau + shift), f_min), f_max)
    return out


@dataclass(frozen=True)
class VoicingThresholds:
    t_low: float | None = None  # None: derived from the clip's mean STE
    t_high: float | None = None
    t_low_fraction: float = 0.05
    t_high_ratio: float = 3.0
    zcr: float = 0.3
    min_run: int = 3


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) spans of consecutive True values."""
    if mask.size == 0:
        return []
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def classify_voicing(ste, zcr, f0, th: VoicingThresholds = VoicingThresholds()):
    """Double-threshold endpoint detection followed by a voiced/unvoiced split.

    A run of frames with STE >= t_low is speech-active when it reaches t_high
    somewhere and spans at least ``min_run`` frames.  Returns
    ``(voiced, unvoiced, segment_lengths)``.
    """
    ste = np.asarray(ste, dtype=np.float64)
    zcr = np.asarray(zcr, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    if not (ste.shape == zcr.shape == f0.shape):
        raise ValueError("tracks must have equal length")
    t_low = th.t_low if th.t_low is not None else th.t_low_fraction * (ste.mean() if ste.size else 0.0)
    t_high = th.t_high if th.t_high is not None else th.t_high_ratio * t_low

    active = np.zeros(ste.size, dtype=bool)
    segments = []
    above = (ste >= t_low) & (ste > 0.0)
    for a, b in _runs(above):
        if b - a >= th.min_run and ste[a:b].max() >= t_high:
            active[a:b] = True
            segments.append(int(b - a))
    voiced = active & ~np.isnan(f0) & (zcr < th.zcr)
    unvoiced = active & ~voiced
    return voiced.astype(np.int8), unvoiced.astype(np.int8), np.array(segments, dtype=np.float64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _mel_filterbank_cached(n_filters: int, n_fft: int, rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    fb = np.zeros((n_filters, freqs.size))
    for m in range(n_filters):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_filters: int, n_fft: int, rate: int) -> np.ndarray:
    """Triangular HTK-mel filters with unit peak, shape (n_filters, n_fft//2 + 1)."""
    return _mel_filterbank_cached(int(n_filters), int(n_fft), int(rate))


def mel_centers_hz(n_filters: int, rate: int) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_filters + 2))[1:-1]


@lru_cache(maxsize=16)
def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    k = np.arange(n_out)[:, None]
    m = np.arange(n_in)[None, :]
    d = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (m + 0.5) / n_in)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def log_mel_energies(fs: FrameSeries, n_fft: int = 512, n_filters: int = 26, eps: float = EPS) -> np.ndarray:
    if n_fft < fs.frame_len:
        raise InvalidConfig(f"n_fft {n_fft} shorter than frame length {fs.frame_len}")
    power = np.abs(np.fft.rfft(fs.frames, n_fft, axis=1)) ** 2 / n_fft
    return np.log(power @ mel_filterbank(n_filters, n_fft, fs.sample_rate_hz).T + eps)


def compute_mfcc(fs: FrameSeries, n_fft: int = 512, n_filters: int = 26, n_coeffs: int = 13,
                 eps: float = EPS) -> np.ndarray:
    """Orthonormal DCT-II of log mel energies, shape (n_frames, n_coeffs)."""
    if n_coeffs > n_filters:
        raise InvalidConfig(f"n_coeffs {n_coeffs} exceeds n_filters {n_filters}")
    return log_mel_energies(fs, n_fft, n_filters, eps) @ _dct_matrix(n_coeffs, n_filters).T


TRACK_NAMES = (
    "voiced",
    "unvoiced",
    "effective_segments",
    "f0",
    "log_energy",
    "short_term_energy",
    "zcr",
    "spl",
    "mfcc",
)


@dataclass
class FeatureTrackSet:
    voiced: np.ndarray
    unvoiced: np.ndarray
    effective_segments: np.ndarray
    f0_frames: np.ndarray  # per-frame F0 with NaN where absent
    log_energy: np.ndarray
    short_term_energy: np.ndarray
    zcr: np.ndarray
    spl: np.ndarray
    mfcc: np.ndarray
    frame_hop_s: float = 0.01
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.short_term_energy.size

    @property
    def f0(self) -> np.ndarray:
        """F0 over voiced frames only."""
        return self.f0_frames[self.voiced.astype(bool)]

    def track(self, name: str) -> np.ndarray:
        if name == "mfcc":
            return self.mfcc.ravel()
        return np.asarray(getattr(self, name), dtype=np.float64)


def extract_tracks(clip: AudioClip, cfg: DspConfig = DspConfig()) -> FeatureTrackSet:
    rate = clip.sample_rate_hz
    fs = frame_signal(clip, cfg.frame_len(rate), cfg.hop(rate), cfg.window)
    ste, log_e, zcr, spl = per_frame_basic(fs, cfg.eps)
    f0 = estimate_f0(fs, cfg.f0_min_hz, cfg.f0_max_hz, cfg.voicing_corr, cfg.octave_tol)
    th = VoicingThresholds(
        t_low_fraction=cfg.t_low_fraction,
        t_high_ratio=cfg.t_high_ratio,
        zcr=cfg.zcr_threshold,
        min_run=cfg.min_run,
    )
    voiced, unvoiced, segs = classify_voicing(ste, zcr, f0, th)
    mfcc = compute_mfcc(fs, cfg.n_fft, cfg.n_filters, cfg.n_mfcc, cfg.eps)
    return FeatureTrackSet(
        voiced=voiced,
        unvoiced=unvoiced,
        effective_segments=segs,
        f0_frames=f0,
        log_energy=log_e,
        short_term_energy=ste,
        zcr=zcr,
        spl=spl,
        mfcc=mfcc,
        frame_hop_s=fs.hop / rate,
        meta={"source_id": clip.source_id, "warnings": list(clip.warnings)},
    )


def export_tracks_csv(tracks: FeatureTrackSet, out_dir) -> list:
    """Write one CSV per track for debugging; returns the written paths."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in TRACK_NAMES:
        p = out / f"{name}.csv"
        if name == "mfcc":
            arr = tracks.mfcc
            header = ",".join(f"c{i}" for i in range(arr.shape[1]))
        elif name == "f0":
            arr = tracks.f0_frames[:, None]
            header = "f0_hz"
        else:
            arr = np.asarray(getattr(tracks, name), dtype=np.float64)[:, None]
            header = name
        np.savetxt(p, arr, delimiter=",", header=header, comments="", fmt="%.17g")
        written.append(p)
    return written
