"""WAV decoding, clip conditioning and dataset manifests."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    EmptyClip,
    MalformedHeader,
    ManifestError,
    TruncatedData,
    UnsupportedEncoding,
)

CANONICAL_RATE_HZ = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

LABELS = ("negative", "positive")


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = "clip"
    patient_id: str = "clip"
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if s.size and (not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1.0):
            raise ValueError("samples must be finite and within [-1, 1]")
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        object.__setattr__(self, "samples", s)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def _iter_chunks(buf: bytes, start: int) -> Iterator[tuple[bytes, int, int]]:
    """Yield (chunk_id, payload_offset, declared_size) for each RIFF sub-chunk."""
    pos = start
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def _decode_pcm(raw: bytes, bits: int, fmt_tag: int) -> np.ndarray:
    if fmt_tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            return np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if bits == 64:
            return np.frombuffer(raw, dtype="<f8").copy()
        raise UnsupportedEncoding(f"{bits}-bit float samples")
    if bits == 8:
        # 8-bit WAV is unsigned with a 128 offset
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v.astype(np.float64) / float(1 << 23)
    if bits == 32:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedEncoding(f"{bits}-bit integer PCM")


def decode_wav(buf: bytes, source_id: str = "clip", patient_id: str | None = None) -> AudioClip:
    if len(buf) < 12 or buf[0:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise MalformedHeader("missing RIFF/WAVE magic")

    fmt = None
    data = None
    for cid, off, size in _iter_chunks(buf, 12):
        if cid == b"fmt ":
            if size < 16 or off + size > len(buf):
                raise MalformedHeader(f"bad fmt chunk size {size}")
            fmt = struct.unpack_from("<HHIIHH", buf, off)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise MalformedHeader("extensible fmt chunk too short")
                # first two bytes of the sub-format GUID carry the real tag
                sub_tag = struct.unpack_from("<H", buf, off + 24)[0]
                fmt = (sub_tag,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise MalformedHeader("data chunk precedes fmt chunk")
            if off + size > len(buf):
                raise TruncatedData(
                    f"data chunk declares {size} bytes, only {len(buf) - off} present"
                )
            data = buf[off : off + size]
            break
    if fmt is None:
        raise MalformedHeader("no fmt chunk")
    if data is None:
        raise MalformedHeader("no data chunk")

    fmt_tag, channels, rate, _byte_rate, block_align, bits = fmt
    if fmt_tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedEncoding(f"format tag 0x{fmt_tag:04x}")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels")
    if rate == 0:
        raise MalformedHeader("zero sample rate")
    width = bits // 8
    if bits % 8 or block_align != width * channels:
        raise MalformedHeader(f"inconsistent block align {block_align} for {bits} bits x {channels}")

    n_frames = len(data) // block_align
    x = _decode_pcm(data[: n_frames * block_align], bits, fmt_tag)
    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    x = np.clip(np.nan_to_num(x, nan=0.0), -1.0, 1.0)
    return AudioClip(x, int(rate), source_id, patient_id or source_id)


def load_wav(path, patient_id: str | None = None) -> AudioClip:
    path = Path(path)
    return decode_wav(path.read_bytes(), source_id=path.stem, patient_id=patient_id)


def encode_wav(samples: np.ndarray, sample_rate_hz: int, channels: int = 1) -> bytes:
    """16-bit PCM encoding; inverse of the decoder's scaling (x * 32768, clipped)."""
    x = np.asarray(samples, dtype=np.float64)
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    block_align = 2 * channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        WAVE_FORMAT_PCM,
        channels,
        sample_rate_hz,
        sample_rate_hz * block_align,
        block_align,
        16,
        b"data",
        len(payload),
    )
    return header + payload


def write_wav(path, samples: np.ndarray, sample_rate_hz: int) -> None:
    Path(path).write_bytes(encode_wav(samples, sample_rate_hz))


def resample_linear(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return x.copy()
    n_out = max(1, int(round(x.size * dst_rate / src_rate)))
    t = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t, np.arange(x.size), x)


def prepare_clip(clip: AudioClip, target_rate_hz: int = CANONICAL_RATE_HZ) -> AudioClip:
    """Resample to ``target_rate_hz`` and peak-normalise to 1.0.

    All-zero clips pass through with a ``"silent"`` warning instead of failing.
    """
    if clip.samples.size == 0:
        raise EmptyClip(f"{clip.source_id}: no samples")
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    x = resample_linear(clip.samples, clip.sample_rate_hz, target_rate_hz)
    peak = float(np.max(np.abs(x)))
    warnings = clip.warnings
    if peak > 0.0:
        x = x / peak
        # guard against 1 + ulp after division
        np.clip(x, -1.0, 1.0, out=x)
    elif "silent" not in warnings:
        warnings = warnings + ("silent",)
    return AudioClip(x, target_rate_hz, clip.source_id, clip.patient_id, warnings)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    patient_id: str

    @property
    def y(self) -> int:
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.label not in LABELS:
                raise ManifestError(f"bad label {e.label!r}")
            if not e.patient_id:
                raise ManifestError(f"{e.path}: empty patient_id")
            if e.path in seen:
                raise ManifestError(f"duplicate path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.y for e in self.entries], dtype=np.int64)

    @property
    def groups(self) -> list[str]:
        return [e.patient_id for e in self.entries]


MANIFEST_HEADER = ["path", "label", "patient_id"]


def read_manifest(path) -> DatasetManifest:
    """Read a ``path,label,patient_id`` CSV; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 columns")
            p, label, pid = (c.strip() for c in row)
            label = label.lower()
            if label not in LABELS:
                raise ManifestError(f"{path}:{lineno}: label must be positive/negative, got {label!r}")
            fp = Path(p)
            if not fp.is_absolute():
                fp = base / fp
            entries.append(ManifestEntry(fp, label, pid))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path, relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            p = e.path
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            w.writerow([p.as_posix(), e.label, e.patient_id])
