"""Synthetic EEG epochs and preprocessing.

Epochs are 32-channel recordings at 250 Hz spanning -200..+1200 ms around
a stimulus (350 samples). Both classes share a pink-noise background and
a posterior alpha rhythm; the hazard-viewing class additionally carries a
30-40 Hz burst at electrode PO8 whose amplitude is the class gap, which
is the discriminative structure the downstream features and classifiers
look for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

FS = 250
T0_MS = -200
N_SAMPLES = 350
EPOCH_MS = 1400

CHANNELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
    "P7", "P3", "Pz", "P4", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8",
)

LABEL_HAZARD = "hazardous"
LABEL_SAFE = "safe"

_POSTERIOR = {"P7", "P3", "Pz", "P4", "P8", "PO7", "PO3", "POz", "PO4", "PO8"}


class PipelineError(Exception):
    pass


class ChannelError(PipelineError):
    pass


@dataclass
class EEGEpoch:
    samples: np.ndarray  # (32, 350) microvolts
    label: str
    split: str = "train"
    fs: int = FS
    t0_ms: int = T0_MS
    channels: tuple = CHANNELS

    def __post_init__(self):
        if self.samples.shape != (len(self.channels), N_SAMPLES):
            raise PipelineError(f"bad epoch shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise PipelineError("epoch contains non-finite values")

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise ChannelError(f"channel {name} not in montage")
        return self.samples[self.channels.index(name)]

    def times_ms(self) -> np.ndarray:
        return self.t0_ms + np.arange(N_SAMPLES) * 1000.0 / self.fs


@dataclass
class LabeledDataset:
    epochs: list = field(default_factory=list)

    def split(self, tag: str) -> list:
        return [e for e in self.epochs if e.split == tag]

    def __len__(self) -> int:
        return len(self.epochs)


def _pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int) -> np.ndarray:
    """1/f-shaped noise via spectral shaping of white noise."""
    white = rng.standard_normal((n_channels, n_samples))
    spectrum = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / FS)
    shaping = np.ones_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    shaping[0] = 0.0
    shaped = np.fft.irfft(spectrum * shaping, n=n_samples, axis=1)
    rms = np.sqrt(np.mean(shaped**2, axis=1, keepdims=True))
    return shaped / np.maximum(rms, 1e-12)


def _gamma_burst(rng: np.random.Generator, times_ms: np.ndarray) -> np.ndarray:
    """Hanning-windowed 30-40 Hz burst somewhere in 300..700 ms."""
    carrier_hz = rng.uniform(31.0, 39.0)
    center_ms = rng.uniform(400.0, 600.0)
    width_ms = 240.0
    envelope = np.zeros_like(times_ms)
    inside = np.abs(times_ms - center_ms) <= width_ms / 2
    envelope[inside] = 0.5 * (1 + np.cos(2 * np.pi * (times_ms[inside] - center_ms) / width_ms))
    phase = rng.uniform(0, 2 * np.pi)
    return envelope * np.sin(2 * np.pi * carrier_hz * times_ms / 1000.0 + phase)


def synthesize_dataset(n_trials: int = 120, class_gap: float = 3.0, seed: int = 0) -> LabeledDataset:
    """Balanced, label-stratified 70:30 dataset; deterministic per seed."""
    if n_trials < 4:
        raise PipelineError("need at least 4 trials")
    if n_trials % 2 != 0:
        raise PipelineError("n_trials must be even for balanced classes")
    if class_gap < 0:
        raise PipelineError("class_gap must be non-negative")

    rng = np.random.default_rng(seed)
    times = T0_MS + np.arange(N_SAMPLES) * 1000.0 / FS
    post_idx = [i for i, ch in enumerate(CHANNELS) if ch in _POSTERIOR]
    po8 = CHANNELS.index("PO8")

    epochs = []
    for trial in range(n_trials):
        label = LABEL_HAZARD if trial % 2 == 0 else LABEL_SAFE
        data = 4.0 * _pink_noise(rng, len(CHANNELS), N_SAMPLES)
        alpha_phase = rng.uniform(0, 2 * np.pi)
        alpha = 3.0 * np.sin(2 * np.pi * 10.0 * times / 1000.0 + alpha_phase)
        data[post_idx] += alpha
        burst = _gamma_burst(rng, times)  # drawn for both classes to keep rng streams aligned
        if label == LABEL_HAZARD:
            data[po8] += class_gap * burst
        epochs.append(EEGEpoch(samples=data.astype(np.float64), label=label))

    # stratified 70:30 split, deterministic shuffle
    for label in (LABEL_HAZARD, LABEL_SAFE):
        idx = [i for i, e in enumerate(epochs) if e.label == label]
        order = rng.permutation(len(idx))
        n_train = round(len(idx) * 0.7)
        for rank, j in enumerate(order):
            epochs[idx[j]].split = "train" if rank < n_train else "test"
    return LabeledDataset(epochs=epochs)


_BANDPASS_ORDER = 7


def _bandpass_sos(lo_hz: float, hi_hz: float, fs: int):
    return sp_signal.butter(_BANDPASS_ORDER, [lo_hz, hi_hz], btype="bandpass", fs=fs, output="sos")


def bandpass_filter(epoch: EEGEpoch, lo_hz: float = 0.1, hi_hz: float = 40.0) -> EEGEpoch:
    """Zero-phase forward-backward Butterworth bandpass."""
    if lo_hz >= hi_hz:
        raise PipelineError("lo must be below hi")
    sos = _bandpass_sos(lo_hz, hi_hz, epoch.fs)
    filtered = sp_signal.sosfiltfilt(sos, epoch.samples, axis=1)
    return EEGEpoch(
        samples=np.ascontiguousarray(filtered),
        label=epoch.label,
        split=epoch.split,
        fs=epoch.fs,
        t0_ms=epoch.t0_ms,
        channels=epoch.channels,
    )


def bandpass_attenuation_db(freq_hz: float, lo_hz: float = 0.1, hi_hz: float = 40.0, fs: int = FS) -> float:
    """Two-pass (forward-backward) attenuation of the designed filter."""
    sos = _bandpass_sos(lo_hz, hi_hz, fs)
    _, response = sp_signal.sosfreqz(sos, worN=[freq_hz], fs=fs)
    magnitude = np.abs(response[0]) ** 2  # squared: filtfilt applies the filter twice
    return float(-20 * np.log10(max(magnitude, 1e-300)))
