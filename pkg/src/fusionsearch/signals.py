"""Recording I/O, resampling, standardization, windowing and perturbations."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal as sps

from .genome import CHANNEL_NAMES

CANONICAL_RATE_HZ = 100
STD_EPS = 1e-12


class DataError(ValueError):
    """Malformed or inconsistent recording data."""


class DegenerateChannelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MultiChannelRecording:
    subject_id: str
    channels: Mapping[str, np.ndarray]
    sample_rate_hz: int
    labels: np.ndarray
    degenerate: tuple[str, ...] = ()

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DataError("sample_rate_hz must be positive")
        if not self.channels:
            raise DataError("recording has no channels")
        lengths = {name: len(x) for name, x in self.channels.items()}
        if len(set(lengths.values())) != 1:
            raise DataError(f"channel length mismatch: {lengths}")
        n = next(iter(lengths.values()))
        expected = n // self.sample_rate_hz
        if len(self.labels) != expected:
            raise DataError(
                f"{self.subject_id}: {len(self.labels)} labels for {n} samples "
                f"at {self.sample_rate_hz} Hz (expected {expected})")

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.channels.values())))

    @property
    def duration_s(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class FilterSpec:
    factor: int
    order: int = 8
    passband_ripple_db: float = 0.05

    @property
    def normalized_cutoff(self) -> float:
        return 0.8 / self.factor

    def ba(self) -> tuple[np.ndarray, np.ndarray]:
        return sps.cheby1(self.order, self.passband_ripple_db, self.normalized_cutoff)

    def sos(self) -> np.ndarray:
        return sps.cheby1(self.order, self.passband_ripple_db, self.normalized_cutoff, output="sos")


def decimate(x: np.ndarray, s: int) -> np.ndarray:
    """Anti-alias with an order-8 Chebyshev I lowpass, then keep every s-th sample.

    The filter runs forward only. ``s == 1`` returns the input untouched.
    """
    if int(s) != s or s < 1:
        raise ValueError(f"decimation factor must be a positive integer, got {s!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot decimate an empty signal")
    if s == 1:
        return x
    y = sps.sosfilt(FilterSpec(int(s)).sos(), x)
    return y[::s]


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit population std. Near-constant input gives zeros and a warning."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot standardize an empty signal")
    mu = x.mean()
    sd = x.std()
    if sd < STD_EPS:
        warnings.warn("zero-variance channel standardized to zeros", DegenerateChannelWarning,
                      stacklevel=2)
        return np.zeros_like(x)
    return (x - mu) / sd


def preprocess(rec: MultiChannelRecording,
               target_rate: int = CANONICAL_RATE_HZ) -> MultiChannelRecording:
    """Decimate every channel to ``target_rate`` and standardize it per recording."""
    if rec.sample_rate_hz % target_rate:
        raise DataError(
            f"{rec.subject_id}: {rec.sample_rate_hz} Hz is not an integer multiple of "
            f"{target_rate} Hz; resample upstream")
    s = rec.sample_rate_hz // target_rate
    chans = {}
    degenerate = []
    n_keep = rec.duration_s * target_rate
    for name, x in rec.channels.items():
        y = decimate(x, s)[:n_keep]
        if y.std() < STD_EPS:
            degenerate.append(name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateChannelWarning)
            chans[name] = standardize(y)
    if degenerate:
        warnings.warn(f"{rec.subject_id}: degenerate channels {degenerate}",
                      DegenerateChannelWarning, stacklevel=2)
    return MultiChannelRecording(rec.subject_id, chans, target_rate, rec.labels,
                                 degenerate=tuple(degenerate))


# --- windowing ---------------------------------------------------------------

def window_index(n_epochs: int, T: int) -> np.ndarray:
    """Epoch indices [n_epochs, T] for the window ending at each label.

    Window k covers epochs k-T+1..k; negative indices are clamped to epoch 0.
    """
    k = np.arange(n_epochs)[:, None]
    return np.maximum(k - (T - 1) + np.arange(T)[None, :], 0)


def epoch_matrix(x: np.ndarray, n_epochs: int, samples_per_epoch: int) -> np.ndarray:
    return np.asarray(x[:n_epochs * samples_per_epoch]).reshape(n_epochs, samples_per_epoch)


@dataclass
class EpochWindowBatch:
    """Per-slot window tensors [n_windows, T, samples_per_epoch] plus labels."""
    channels: list[np.ndarray]
    labels: np.ndarray
    subject_ids: np.ndarray
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        shapes = {c.shape for c in self.channels}
        if len(shapes) != 1:
            raise ValueError(f"slot tensors differ in shape: {shapes}")
        if self.channels[0].shape[0] != len(self.labels):
            raise ValueError("window count and label count differ")

    @property
    def n_windows(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "EpochWindowBatch":
        return EpochWindowBatch([c[idx] for c in self.channels], self.labels[idx],
                                self.subject_ids[idx], self.channel_names)


def assemble_windows(rec: MultiChannelRecording, T: int,
                     channels: Sequence[str] | None = None) -> EpochWindowBatch:
    if rec.sample_rate_hz != CANONICAL_RATE_HZ:
        raise DataError(f"windows need {CANONICAL_RATE_HZ} Hz input, got {rec.sample_rate_hz}")
    if T < 1:
        raise ValueError("T must be positive")
    n = rec.duration_s
    if n < 1:
        raise DataError("recording shorter than one epoch")
    names = tuple(channels) if channels is not None else tuple(rec.channels)
    idx = window_index(n, T)
    tensors = [epoch_matrix(rec.channels[c], n, rec.sample_rate_hz)[idx] for c in names]
    return EpochWindowBatch(tensors, np.asarray(rec.labels, dtype=np.int64),
                            np.full(n, rec.subject_id, dtype=object), names)


def substitute_channels(batch: EpochWindowBatch, working: Sequence[int],
                        replacement: Mapping[int, int]) -> EpochWindowBatch:
    """Overwrite each lost slot with an exact copy of a working slot."""
    working = set(working)
    if not working:
        raise ValueError("at least one working channel is required")
    n = len(batch.channels)
    lost = set(range(n)) - working
    if set(replacement) != lost:
        raise ValueError(f"replacement must cover exactly the lost slots {sorted(lost)}")
    for dst, src in replacement.items():
        if src not in working:
            raise ValueError(f"slot {dst} replaced by non-working slot {src}")
    chans = [batch.channels[replacement.get(k, k)] for k in range(n)]
    return replace(batch, channels=chans)


def add_awgn(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise with variance power(x) / 10**(snr_db / 10)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    power = float(np.mean(x * x))
    if power <= 0.0:
        raise ValueError("cannot set an SNR relative to a zero-power signal")
    sd = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    return x + sd * rng.standard_normal(x.shape)


# --- synthetic subjects ------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    duration_s: int = 1200
    n_channels: int = 3
    prevalence: float = 0.129
    burst_gains: tuple[float, ...] = (1.0, 0.75, 0.5)
    burst_amplitude: float = 3.0
    burst_band_hz: tuple[float, float] = (0.5, 4.0)
    background_band_hz: tuple[float, float] = (0.5, 30.0)
    shared_background: float = 0.3
    sample_rate_hz: int = CANONICAL_RATE_HZ
    mean_run_s: float = 8.0
    min_run_s: int = 2
    max_run_s: int = 60
    min_gap_s: int = 2
    channel_names: tuple[str, ...] = field(default=CHANNEL_NAMES)

    def validate(self) -> None:
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        if self.duration_s < 120:
            raise ValueError("synthetic subjects need at least 120 s")
        if not 1 <= self.n_channels <= len(self.channel_names):
            raise ValueError("n_channels out of range")
        if len(self.burst_gains) < self.n_channels:
            raise ValueError("one burst gain per channel is required")


def _compose(total: int, parts: int, minimum: int, rng: np.random.Generator,
             maximum: int | None = None) -> np.ndarray:
    """Random composition of ``total`` into ``parts`` integers each >= minimum (and <= maximum)."""
    spare = total - parts * minimum
    if spare < 0:
        raise ValueError("composition infeasible")
    for _ in range(1000):
        out = minimum + rng.multinomial(spare, rng.dirichlet(np.full(parts, 2.0)))
        if maximum is None or out.max() <= maximum:
            return out
    # fall back to the flattest split
    out = np.full(parts, minimum + spare // parts)
    out[: spare % parts] += 1
    return out


def synth_labels(p: SynthParams, rng: np.random.Generator) -> np.ndarray:
    n = p.duration_s
    n_a = int(round(p.prevalence * n))
    n_runs = max(1, int(round(n_a / p.mean_run_s)))
    n_runs = min(n_runs, n_a // p.min_run_s)
    n_runs = max(n_runs, -(-n_a // p.max_run_s))
    if n_runs < 1:
        raise ValueError("prevalence too low for the requested duration")
    runs = _compose(n_a, n_runs, p.min_run_s, rng, p.max_run_s)
    gaps = _compose(n - n_a, n_runs + 1, p.min_gap_s, rng)
    labels = np.zeros(n, dtype=np.int8)
    pos = 0
    for gap, run in zip(gaps[:-1], runs):
        pos += gap
        labels[pos:pos + run] = 1
        pos += run
    return labels


def _band_noise(n: int, band: tuple[float, float], fs: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = band
    sos = sps.butter(4, [lo, min(hi, 0.45 * fs)], btype="bandpass", fs=fs, output="sos")
    y = sps.sosfilt(sos, rng.standard_normal(n + 2 * fs))[2 * fs:]
    return y / y.std()


def generate_synthetic_subject(params: SynthParams, rng: np.random.Generator,
                               subject_id: str = "synth") -> MultiChannelRecording:
    """Band-limited background plus low-frequency bursts on every A-phase second.

    Bursts share one source across channels, scaled by per-channel gains, so
    channels carry correlated but unequally strong evidence.
    """
    params.validate()
    fs = params.sample_rate_hz
    labels = synth_labels(params, rng)
    n = params.duration_s * fs
    envelope = np.repeat(labels.astype(np.float64), fs)
    burst = _band_noise(n, params.burst_band_hz, fs, rng) * envelope * params.burst_amplitude
    shared = _band_noise(n, params.background_band_hz, fs, rng)
    w = params.shared_background
    chans = {}
    for k in range(params.n_channels):
        own = _band_noise(n, params.background_band_hz, fs, rng)
        bg = math.sqrt(w) * shared + math.sqrt(1.0 - w) * own
        chans[params.channel_names[k]] = (bg + params.burst_gains[k] * burst).astype(np.float64)
    return MultiChannelRecording(subject_id, chans, fs, labels.astype(np.int64))


# --- on-disk format ----------------------------------------------------------

def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name)


def save_recording(rec: MultiChannelRecording, directory: str | Path) -> Path:
    """Write manifest.json, one float32 file per channel and a labels file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    chans = []
    for name, x in rec.channels.items():
        fname = f"{_safe(name)}.f32"
        np.asarray(x, dtype="<f4").tofile(d / fname)
        chans.append({"name": name, "file": fname})
    (d / "labels.txt").write_text("".join(f"{int(v)}\n" for v in rec.labels))
    manifest = {"subject_id": rec.subject_id, "sample_rate_hz": int(rec.sample_rate_hz),
                "channels": chans, "labels_file": "labels.txt"}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_recording(manifest_path: str | Path) -> MultiChannelRecording:
    path = Path(manifest_path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        m = json.loads(path.read_text())
        subject_id = str(m["subject_id"])
        fs = int(m["sample_rate_hz"])
        chan_specs = list(m["channels"])
        labels_file = m["labels_file"]
        chan_specs = [(str(c["name"]), str(c["file"])) for c in chan_specs]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    chans = {}
    for name, fname in chan_specs:
        f = path.parent / fname
        if not f.is_file():
            raise DataError(f"missing channel file {f}")
        chans[name] = np.fromfile(f, dtype="<f4").astype(np.float64)
    lf = path.parent / labels_file
    if not lf.is_file():
        raise DataError(f"missing labels file {lf}")
    lines = lf.read_text().splitlines()
    if any(line not in ("0", "1") for line in lines):
        raise DataError(f"labels file {lf} must contain one '0' or '1' per line")
    labels = np.array([int(v) for v in lines], dtype=np.int64)
    return MultiChannelRecording(subject_id, chans, fs, labels)


class WindowedDataset:
    """Windows over several preprocessed recordings, gathered on demand.

    Epochs are stored once per channel as float32 [total_epochs, samples]; a
    window is a row of global epoch indices, so ``take`` is a single gather.
    """

    def __init__(self, recordings: Sequence[MultiChannelRecording], T: int,
                 channels: Sequence[str], labels: Sequence[np.ndarray] | None = None):
        if not recordings:
            raise DataError("no recordings")
        self.T = int(T)
        self.channel_names = tuple(channels)
        epochs = {c: [] for c in self.channel_names}
        idx, lab, sids = [], [], []
        offset = 0
        for r, rec in enumerate(recordings):
            if rec.sample_rate_hz != CANONICAL_RATE_HZ:
                raise DataError(f"{rec.subject_id}: expected {CANONICAL_RATE_HZ} Hz after preprocessing")
            n = rec.duration_s
            if n < 1:
                raise DataError(f"{rec.subject_id}: shorter than one epoch")
            for c in self.channel_names:
                if c not in rec.channels:
                    raise DataError(f"{rec.subject_id}: missing channel {c}")
                epochs[c].append(epoch_matrix(rec.channels[c], n, rec.sample_rate_hz).astype(np.float32))
            idx.append(window_index(n, self.T) + offset)
            lab.append(np.asarray(rec.labels if labels is None else labels[r], dtype=np.int64))
            sids.append(np.full(n, rec.subject_id, dtype=object))
            offset += n
        self.epochs = [np.concatenate(epochs[c]) for c in self.channel_names]
        self.index = np.concatenate(idx)
        self.labels = np.concatenate(lab)
        self.subject_ids = np.concatenate(sids)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> EpochWindowBatch:
        rows = self.index[idx]
        return EpochWindowBatch([e[rows] for e in self.epochs], self.labels[idx],
                                self.subject_ids[idx], self.channel_names)
