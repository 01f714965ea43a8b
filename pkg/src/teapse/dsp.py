"""Short-time analysis/synthesis and spectral feature primitives."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, InputTooShortError, ReconstructionError, SignalError

SAMPLE_RATE = 48000


@dataclass(frozen=True)
class StftConfig:
    """STFT geometry in samples.

    With ``center_pad`` the signal gets ``win_len - hop_len`` zeros on the left
    and enough zeros on the right that every input sample is covered by full
    overlap; without it, the trailing partial frame is dropped.
    """

    fft_len: int = 960
    win_len: int = 960
    hop_len: int = 480
    window: str = "hann"
    center_pad: bool = False

    def __post_init__(self):
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")
        if not 0 < self.hop_len <= self.win_len <= self.fft_len:
            raise ConfigError(
                f"need 0 < hop_len <= win_len <= fft_len, got "
                f"{self.hop_len}/{self.win_len}/{self.fft_len}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @cached_property
    def window_array(self) -> np.ndarray:
        # periodic hann: sums to exactly 1 at 50% overlap
        n = np.arange(self.win_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.win_len)

    @cached_property
    def cola_constant(self) -> float | None:
        """Overlap-added window value, or None when it is not constant."""
        w = self.window_array
        acc = np.zeros(self.hop_len)
        for start in range(0, self.win_len, self.hop_len):
            seg = w[start:start + self.hop_len]
            acc[: len(seg)] += seg
        if acc.max() <= 0 or np.ptp(acc) > 1e-10 * acc.max():
            return None
        return float(acc.mean())

    def padding(self, n: int) -> tuple[int, int]:
        if not self.center_pad:
            return 0, 0
        edge = self.win_len - self.hop_len
        return edge, edge + (-n) % self.hop_len

    def n_frames(self, n: int) -> int:
        left, right = self.padding(n)
        n_padded = n + left + right
        if n_padded < self.win_len:
            return 0
        return (n_padded - self.win_len) // self.hop_len + 1


MODEL_STFT = StftConfig(960, 960, 480)


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("audio contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float32)
        self.imag = np.asarray(self.imag, dtype=np.float32)
        if self.real.shape != self.imag.shape:
            raise ConfigError("real/imag planes differ in shape")
        if self.real.ndim != 2 or self.real.shape[1] != self.config.n_bins:
            raise ConfigError(
                f"expected [frames, {self.config.n_bins}], got {self.real.shape}"
            )

    @classmethod
    def from_complex(cls, z: np.ndarray, config: StftConfig) -> ComplexSpectrogram:
        return cls(z.real, z.imag, config)

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real.astype(np.float64) + 1j * self.imag.astype(np.float64)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)


def _samples(audio) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio).reshape(-1)


def stft(audio, cfg: StftConfig = MODEL_STFT) -> ComplexSpectrogram:
    x = _samples(audio).astype(np.float64)
    if x.size == 0:
        raise InputTooShortError("input too short: empty signal")
    n_frames = cfg.n_frames(x.size)
    if n_frames == 0:
        raise InputTooShortError(
            f"input too short: {x.size} samples < one {cfg.win_len}-sample window"
        )
    left, right = cfg.padding(x.size)
    if left or right:
        x = np.pad(x, (left, right))
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_len)[:: cfg.hop_len]
    frames = frames[:n_frames] * cfg.window_array
    z = np.fft.rfft(frames, n=cfg.fft_len, axis=-1)
    return ComplexSpectrogram.from_complex(z, cfg)


def stft_frame(frame: np.ndarray, cfg: StftConfig = MODEL_STFT) -> np.ndarray:
    """Complex spectrum of one ``win_len`` frame."""
    return np.fft.rfft(np.asarray(frame, np.float64) * cfg.window_array, n=cfg.fft_len)


def synth_frame(z: np.ndarray, cfg: StftConfig = MODEL_STFT) -> np.ndarray:
    """Time-domain contribution of one spectrum, scaled for plain overlap-add."""
    scale = cfg.cola_constant
    if scale is None:
        raise ReconstructionError(
            f"reconstruction not exact: hann/{cfg.win_len} at hop {cfg.hop_len} is not COLA"
        )
    return np.fft.irfft(z, n=cfg.fft_len)[: cfg.win_len] / scale


def istft(spec: ComplexSpectrogram, out_len: int) -> AudioBuffer:
    cfg = spec.config
    scale = cfg.cola_constant
    if scale is None:
        raise ReconstructionError(
            f"reconstruction not exact: hann/{cfg.win_len} at hop {cfg.hop_len} is not COLA"
        )
    frames = np.fft.irfft(spec.to_complex(), n=cfg.fft_len, axis=-1)[:, : cfg.win_len]
    n_frames = frames.shape[0]
    total = (n_frames - 1) * cfg.hop_len + cfg.win_len if n_frames else 0
    y = np.zeros(max(total, 0))
    for i in range(n_frames):
        s = i * cfg.hop_len
        y[s:s + cfg.win_len] += frames[i]
    y /= scale
    left, _ = cfg.padding(out_len)
    y = y[left:left + out_len]
    if y.size < out_len:
        y = np.pad(y, (0, out_len - y.size))
    return AudioBuffer(y)


def power_law_compress(spec: ComplexSpectrogram, c: float = 0.3):
    """Return ``(|S|**c, |S|**c * exp(j*angle(S)))``; zero bins stay zero."""
    if not 0 < c <= 1:
        raise ConfigError(f"compression exponent must be in (0, 1], got {c}")
    re = spec.real.astype(np.float64)
    im = spec.imag.astype(np.float64)
    mag = np.hypot(re, im)
    mag_c = mag ** c
    safe = np.where(mag > 0, mag, 1.0)
    gain = np.where(mag > 0, mag_c / safe, 0.0)
    comp = ComplexSpectrogram(re * gain, im * gain, spec.config)
    return mag_c.astype(np.float32), comp
