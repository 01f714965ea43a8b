"""Training objectives evaluated on waveforms.

The composites combine negative SI-SNR with spectral terms averaged over a set
of STFT resolutions::

    L1 = -si_snr + mean_m(mag_m + asym_m)
    L2 = -si_snr + mean_m(mag_m + pha_m + asym_m)

Spectral terms use power-law compressed spectra and are means over all
time-frequency bins of a resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import StftConfig, power_law_compress, stft
from .errors import ConfigError, SignalError

SI_SNR_EPS = 1e-8
COMPRESSION = 0.3

MULTI_RES = (
    StftConfig(512, 480, 240, center_pad=True),
    StftConfig(1024, 960, 480, center_pad=True),
    StftConfig(2048, 1920, 960, center_pad=True),
)
SINGLE_RES = (StftConfig(1024, 960, 480, center_pad=True),)


@dataclass(frozen=True)
class MultiResConfig:
    scales: tuple = MULTI_RES

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ConfigError("at least one STFT scale is required")
        for cfg in self.scales:
            if cfg.cola_constant is None:
                raise ConfigError(f"scale {cfg} does not satisfy COLA")

    @classmethod
    def single(cls):
        return cls(SINGLE_RES)


def _pair(s, s_hat):
    s = np.asarray(getattr(s, "samples", s), dtype=np.float64).reshape(-1)
    s_hat = np.asarray(getattr(s_hat, "samples", s_hat), dtype=np.float64).reshape(-1)
    if s.shape != s_hat.shape:
        raise SignalError(f"reference and estimate lengths differ: {s.size} vs {s_hat.size}")
    return s, s_hat


def _si_snr_parts(s, s_hat):
    ss = s @ s
    if ss == 0:
        raise SignalError("all-zero reference")
    s_t = (s_hat @ s) / ss * s
    e = s_hat - s_t
    return s_t, e


def si_snr(s, s_hat, eps=SI_SNR_EPS) -> float:
    """Scale-invariant SNR in dB (no mean removal)."""
    s, s_hat = _pair(s, s_hat)
    s_t, e = _si_snr_parts(s, s_hat)
    return float(10.0 * np.log10((s_t @ s_t + eps) / (e @ e + eps)))


def si_snr_grad(s, s_hat, eps=SI_SNR_EPS) -> np.ndarray:
    """Gradient of ``-si_snr(s, s_hat)`` with respect to ``s_hat``."""
    s, s_hat = _pair(s, s_hat)
    s_t, e = _si_snr_parts(s, s_hat)
    # d|s_t|^2 = 2 s_t, d|e|^2 = 2 e (e is orthogonal to s)
    k = -10.0 / np.log(10.0)
    return k * (2.0 * s_t / (s_t @ s_t + eps) - 2.0 * e / (e @ e + eps))


def _compressed(x, cfg, c):
    return power_law_compress(stft(x, cfg), c)


def mag_loss(s, s_hat, cfg: StftConfig, c=COMPRESSION) -> float:
    s, s_hat = _pair(s, s_hat)
    m, _ = _compressed(s, cfg, c)
    m_hat, _ = _compressed(s_hat, cfg, c)
    return float(np.mean((m.astype(np.float64) - m_hat) ** 2))


def pha_loss(s, s_hat, cfg: StftConfig, c=COMPRESSION) -> float:
    s, s_hat = _pair(s, s_hat)
    _, z = _compressed(s, cfg, c)
    _, z_hat = _compressed(s_hat, cfg, c)
    return float(np.mean(np.abs(z.to_complex() - z_hat.to_complex()) ** 2))


def asym_loss(s, s_hat, cfg: StftConfig, c=COMPRESSION) -> float:
    """Penalises only bins where the estimate falls below the reference."""
    s, s_hat = _pair(s, s_hat)
    m, _ = _compressed(s, cfg, c)
    m_hat, _ = _compressed(s_hat, cfg, c)
    return float(np.mean(np.maximum(m.astype(np.float64) - m_hat, 0.0) ** 2))


def spectral_terms(s, s_hat, cfg: StftConfig, c=COMPRESSION) -> dict[str, float]:
    """mag, pha and asym at one resolution from a single pair of STFTs."""
    s, s_hat = _pair(s, s_hat)
    m, z = _compressed(s, cfg, c)
    m_hat, z_hat = _compressed(s_hat, cfg, c)
    diff = m.astype(np.float64) - m_hat
    return {
        "mag": float(np.mean(diff**2)),
        "pha": float(np.mean(np.abs(z.to_complex() - z_hat.to_complex()) ** 2)),
        "asym": float(np.mean(np.maximum(diff, 0.0) ** 2)),
    }


_TERMS = {"L1": ("mag", "asym"), "L2": ("mag", "pha", "asym")}


@dataclass
class LossBreakdown:
    which: str
    si_snr: float
    mag: list = field(default_factory=list)
    pha: list = field(default_factory=list)
    asym: list = field(default_factory=list)

    def scale_part(self, m: int) -> float:
        terms = {"mag": self.mag, "pha": self.pha, "asym": self.asym}
        total = 0.0
        for name in _TERMS[self.which]:
            total += terms[name][m]
        return total

    @property
    def spectral(self) -> float:
        parts = [self.scale_part(m) for m in range(len(self.mag))]
        return sum(parts) / len(parts)

    @property
    def composite(self) -> float:
        return -self.si_snr + self.spectral

    def lines(self):
        yield f"which={self.which}"
        yield f"si_snr_db={self.si_snr:.9g}"
        for m in range(len(self.mag)):
            yield f"scale{m}.mag={self.mag[m]:.9g}"
            yield f"scale{m}.pha={self.pha[m]:.9g}"
            yield f"scale{m}.asym={self.asym[m]:.9g}"
        yield f"composite={self.composite:.9g}"


def composite_loss(s, s_hat, multi: MultiResConfig | None = None, which="L2",
                   c=COMPRESSION) -> LossBreakdown:
    which = which.upper()
    if which not in _TERMS:
        raise ConfigError(f"unknown composite {which!r}; expected L1 or L2")
    multi = multi or MultiResConfig()
    out = LossBreakdown(which, si_snr(s, s_hat))
    for cfg in multi.scales:
        t = spectral_terms(s, s_hat, cfg, c)
        out.mag.append(t["mag"])
        out.pha.append(t["pha"])
        out.asym.append(t["asym"])
    return out


def fd_gradient(loss_fn, x, h=1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        f_plus = loss_fn(x)
        x[i] = orig - h
        f_minus = loss_fn(x)
        x[i] = orig
        g[i] = (f_plus - f_minus) / (2.0 * h)
    return g
