"""Image-method room impulse responses and on-the-fly mixture synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import SAMPLE_RATE, AudioBuffer
from .errors import ConfigError, InfeasibleRT60Error, SignalError

SOUND_SPEED = 343.0
RT60_RANGE = (0.1, 1.0)
SNR_RANGE = (-5.0, 20.0)
SIR_RANGE = (-5.0, 20.0)
PEAK_LIMIT = 0.99
FD_TAPS = 81


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple
    source: tuple
    mic: tuple
    rt60: float
    sample_rate: int = SAMPLE_RATE
    rir_len: int = SAMPLE_RATE
    c: float = SOUND_SPEED

    def __post_init__(self):
        for name in ("dims", "source", "mic"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ConfigError(f"{name} needs three coordinates")
            object.__setattr__(self, name, v)
        if min(self.dims) <= 0:
            raise ConfigError("room dimensions must be positive")
        for name in ("source", "mic"):
            p = getattr(self, name)
            if not all(0 < x < L for x, L in zip(p, self.dims)):
                raise ConfigError(f"{name} {p} is not strictly inside room {self.dims}")
        if self.rt60 <= 0:
            raise InfeasibleRT60Error("RT60 must be positive")
        if self.rir_len < 1:
            raise ConfigError("rir_len must be at least one sample")

    @property
    def volume(self) -> float:
        Lx, Ly, Lz = self.dims
        return Lx * Ly * Lz

    @property
    def surface(self) -> float:
        Lx, Ly, Lz = self.dims
        return 2.0 * (Lx * Ly + Lx * Lz + Ly * Lz)

    def swapped(self) -> RoomSpec:
        return RoomSpec(self.dims, self.mic, self.source, self.rt60,
                        self.sample_rate, self.rir_len, self.c)


def rt60_to_reflection(room: RoomSpec) -> float:
    """Uniform wall reflection coefficient from Sabine's formula."""
    alpha = 0.161 * room.volume / (room.surface * room.rt60)
    if alpha > 1.0:
        raise InfeasibleRT60Error(
            f"infeasible RT60 {room.rt60}s for a {room.volume:.1f} m^3 room "
            f"(needs absorption {alpha:.3f} > 1)"
        )
    return math.sqrt(1.0 - alpha)


class RirBuffer(AudioBuffer):
    """AudioBuffer that keeps float64 precision (impulse responses span many decades)."""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("impulse response contains non-finite samples")


def _axis_images(src, mic, L, n_max):
    """Mic-relative image offsets and wall-hit counts along one axis."""
    n = np.arange(-n_max, n_max + 1)
    offs, hits = [], []
    for q in (0, 1):
        offs.append((1 - 2 * q) * src + 2 * n * L - mic)
        hits.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(offs), np.concatenate(hits)


def max_image_order(room: RoomSpec) -> tuple[int, int, int]:
    """Per-axis image index bound covering the longest path that fits in rir_len."""
    reach = room.c * (room.rir_len + FD_TAPS) / room.sample_rate
    return tuple(int(math.ceil(reach / (2.0 * L))) + 1 for L in room.dims)


def image_sources(room: RoomSpec, max_order=None):
    """Distances (m) and wall-hit counts of every image whose arrival fits in rir_len."""
    if max_order is None:
        max_order = max_image_order(room)
    elif np.isscalar(max_order):
        max_order = (int(max_order),) * 3
    axes = [_axis_images(s, m, L, n) for s, m, L, n in zip(room.source, room.mic, room.dims, max_order)]
    (dx, hx), (dy, hy), (dz, hz) = axes
    yz_d2 = (dy[:, None] ** 2 + dz[None, :] ** 2).ravel()
    yz_h = (hy[:, None] + hz[None, :]).ravel()
    limit = (room.rir_len + FD_TAPS // 2) * room.c / room.sample_rate
    dists, hits = [], []
    for x_off, x_hit in zip(dx, hx):
        d = np.sqrt(x_off * x_off + yz_d2)
        keep = d < limit
        dists.append(d[keep])
        hits.append(x_hit + yz_h[keep])
    return np.concatenate(dists), np.concatenate(hits)


def _render(dist, gain, room, n_out):
    """Sum 81-tap Hann-windowed sinc pulses at fractional delays ``dist*fs/c``."""
    half = FD_TAPS // 2
    k = np.arange(-half, half + 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    ck, sk = np.cos(2.0 * np.pi * k / FD_TAPS), np.sin(2.0 * np.pi * k / FD_TAPS)
    h = np.zeros(n_out)
    chunk = 1 << 15
    for i in range(0, dist.size, chunk):
        delay = dist[i:i + chunk] * room.sample_rate / room.c
        g = gain[i:i + chunk]
        center = np.rint(delay).astype(np.int64)
        frac = (delay - center)[:, None]
        t = k[None, :] - frac
        # sin(pi*(k - f)) = -(-1)**k * sin(pi*f); one sine per image, not per tap
        num = -sign[None, :] * np.sin(np.pi * frac)
        exact = t == 0
        sinc = np.where(exact, 1.0, num / (np.pi * np.where(exact, 1.0, t)))
        cf, sf = np.cos(2.0 * np.pi * frac / FD_TAPS), np.sin(2.0 * np.pi * frac / FD_TAPS)
        window = 0.5 + 0.5 * (ck[None, :] * cf + sk[None, :] * sf)
        idx = center[:, None] + k[None, :]
        ok = (idx >= 0) & (idx < n_out)
        h += np.bincount(idx[ok], weights=(g[:, None] * sinc * window)[ok], minlength=n_out)
    return h


def allen_berkley_highpass(x, sample_rate=SAMPLE_RATE, cutoff=100.0):
    """Second-order high-pass that removes the DC build-up of an image lattice."""
    w = 2.0 * np.pi * cutoff / sample_rate
    r1 = math.exp(-w)
    b = [1.0, -(1.0 + r1), r1]
    a = [1.0, -2.0 * r1 * math.cos(w), r1 * r1]
    return lfilter(b, a, x)


def simulate_rir(room: RoomSpec, beta: float | None = None, max_order=None,
                 highpass=True) -> AudioBuffer:
    """Allen-Berkley image method with uniform reflection ``beta``.

    Each image contributes ``beta**hits / (4*pi*d)`` at a fractional delay of
    ``d*fs/c`` samples, rendered with an 81-tap Hann-windowed sinc. The
    reflected field (every image but the direct path) is high-passed at 100 Hz
    as in the original method; all image amplitudes are positive, so without
    it their low-frequency content piles up and stretches the decay. Without
    an explicit ``beta`` the coefficient is calibrated to the RT60 target.
    """
    dist, hits = image_sources(room, max_order)
    if beta is None:
        beta = calibrate_reflection(room, images=(dist, hits))
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"reflection coefficient must be in [0, 1], got {beta}")
    gain = np.power(beta, hits) / (4.0 * np.pi * dist)
    direct = hits == 0
    h = _render(dist[direct], gain[direct], room, room.rir_len)
    refl = ~direct & (gain != 0)
    if refl.any():
        late = _render(dist[refl], gain[refl], room, room.rir_len)
        h += allen_berkley_highpass(late, room.sample_rate) if highpass else late
    return RirBuffer(h, room.sample_rate)


def _image_edc_db(dist, hits, beta, room):
    delay = np.rint(dist * room.sample_rate / room.c).astype(np.int64)
    energy = np.power(beta, 2 * hits) / (4.0 * np.pi * dist) ** 2
    return schroeder_db(np.sqrt(np.bincount(delay, weights=energy)))


def calibrate_reflection(room: RoomSpec, images=None, rel_tol=1e-3, max_iter=60) -> float:
    """Reflection coefficient whose image-energy decay has T20 equal to the target.

    Sabine's inversion assumes a diffuse field; a shoebox image lattice does
    not decay that way (axial paths hit few walls), so the coefficient is
    found by bisection on the incoherent energy curve of the images.
    """
    dist, hits = images if images is not None else image_sources(room)
    target = room.rt60

    def t20(beta):
        try:
            return t20_from_edc(_image_edc_db(dist, hits, beta, room), room.sample_rate)
        except SignalError:
            return 0.0

    lo, hi = 0.0, 1.0 - 1e-9
    if t20(hi) < target:
        raise InfeasibleRT60Error(
            f"infeasible RT60 {target}s: rir_len {room.rir_len} too short to show the decay"
        )
    beta = hi
    for _ in range(max_iter):
        beta = 0.5 * (lo + hi)
        est = t20(beta)
        if abs(est - target) <= rel_tol * target:
            break
        if est < target:
            lo = beta
        else:
            hi = beta
    return float(beta)


def schroeder_db(rir) -> np.ndarray:
    h = np.asarray(getattr(rir, "samples", rir), dtype=np.float64)
    edc = np.cumsum((h * h)[::-1])[::-1]
    if edc[0] <= 0:
        raise SignalError("impulse response is all zeros")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def t20_from_edc(edc_db, sample_rate, start_db=-5.0, stop_db=-25.0) -> float:
    """Fit a line to a Schroeder curve between ``start_db`` and ``stop_db``.

    A curve that jumps past the whole fit range in one sample (a bare
    impulse) has no decay to fit and returns 0.
    """
    below_start = np.nonzero(edc_db <= start_db)[0]
    below_stop = np.nonzero(edc_db <= stop_db)[0]
    if below_stop.size == 0:
        raise SignalError(f"decay never reaches {stop_db} dB; response too short")
    i0, i1 = below_start[0], below_stop[0]
    if i1 == i0:
        return 0.0
    if i1 - i0 < 10:
        raise SignalError(f"decay segment of {i1 - i0} samples is shorter than 10")
    t = np.arange(i0, i1) / sample_rate
    slope, _ = np.polyfit(t, edc_db[i0:i1], 1)
    return float(-60.0 / slope)


def estimate_rt60(rir, sample_rate: int | None = None) -> float:
    """T20 reverberation time (s) from Schroeder backward integration."""
    fs = sample_rate or getattr(rir, "sample_rate", SAMPLE_RATE)
    return t20_from_edc(schroeder_db(rir), fs)


def _power(x):
    return float(np.mean(np.asarray(x, dtype=np.float64) ** 2))


def _fit_length(x, n, offset=0):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise SignalError("empty signal")
    return np.resize(np.roll(x, -offset), n)


def mix_at_snr(target, noise, snr_db):
    """Add ``noise`` (looped or trimmed to length) at ``snr_db`` relative to ``target``."""
    if not -60.0 <= snr_db <= 60.0:
        raise ConfigError(f"SNR {snr_db} dB outside the supported [-60, 60] range")
    t = np.asarray(getattr(target, "samples", target), dtype=np.float64).reshape(-1)
    n = _fit_length(getattr(noise, "samples", noise), t.size)
    p_t, p_n = _power(t), _power(n)
    if p_t == 0:
        raise SignalError("silent target")
    if p_n == 0:
        raise SignalError("silent noise")
    scale = math.sqrt(p_t / (p_n * 10.0 ** (snr_db / 10.0)))
    return t + scale * n, scale


@dataclass
class MixtureRecipe:
    target: np.ndarray
    enroll: np.ndarray
    noise: np.ndarray | None = None
    interferer: np.ndarray | None = None
    rir: np.ndarray | None = None
    interferer_rir: np.ndarray | None = None
    snr_db: float = 5.0
    sir_db: float = 5.0
    output_gain: float = 1.0
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.noise is not None and not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ConfigError(f"snr {self.snr_db} dB outside {SNR_RANGE}")
        if self.interferer is not None and not SIR_RANGE[0] <= self.sir_db <= SIR_RANGE[1]:
            raise ConfigError(f"sir {self.sir_db} dB outside {SIR_RANGE}")
        if self.output_gain <= 0:
            raise ConfigError("output gain must be positive")


@dataclass
class MixtureParts:
    """Pre-sum components (after the common output gain)."""

    clean: np.ndarray
    interference: np.ndarray
    noise: np.ndarray
    enroll: np.ndarray
    gain: float
    sample_rate: int = SAMPLE_RATE

    @property
    def noisy(self) -> np.ndarray:
        return self.clean + self.interference + self.noise


def _reverb(x, rir):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if rir is None:
        return x
    rir = np.asarray(getattr(rir, "samples", rir), dtype=np.float64).reshape(-1)
    return fftconvolve(x, rir)[: x.size]


def synth_parts(recipe: MixtureRecipe) -> MixtureParts:
    rng = np.random.default_rng(recipe.seed)
    clean = _reverb(recipe.target, recipe.rir)
    n = clean.size
    if _power(clean) == 0:
        raise SignalError("silent target")
    interference = np.zeros(n)
    noise = np.zeros(n)
    if recipe.interferer is not None:
        src = _reverb(recipe.interferer, recipe.interferer_rir)
        src = _fit_length(src, n, int(rng.integers(src.size)))
        _, scale = mix_at_snr(clean, src, recipe.sir_db)
        interference = scale * src
    else:
        rng.integers(1)  # keep the stream aligned with and without an interferer
    if recipe.noise is not None:
        src = np.asarray(recipe.noise, dtype=np.float64).reshape(-1)
        src = _fit_length(src, n, int(rng.integers(max(src.size, 1))))
        _, scale = mix_at_snr(clean, src, recipe.snr_db)
        noise = scale * src
    peak = float(np.max(np.abs(clean + interference + noise)))
    gain = recipe.output_gain
    if peak * gain > PEAK_LIMIT:
        gain = PEAK_LIMIT / peak
    enroll = np.asarray(recipe.enroll, dtype=np.float64).reshape(-1)
    return MixtureParts(clean * gain, interference * gain, noise * gain, enroll,
                        gain, recipe.sample_rate)


def synth_example(recipe: MixtureRecipe):
    """Return ``(noisy, clean_reverberant, enroll)`` audio buffers."""
    p = synth_parts(recipe)
    fs = recipe.sample_rate
    return AudioBuffer(p.noisy, fs), AudioBuffer(p.clean, fs), AudioBuffer(p.enroll, fs)


@dataclass(frozen=True)
class MixParams:
    """Random draws behind one on-the-fly example."""

    seed: int
    snr_db: float
    sir_db: float
    room: RoomSpec
    extras: dict = field(default_factory=dict, compare=False)


def draw_room(rng, rt60=None, sample_rate=SAMPLE_RATE, rir_len=SAMPLE_RATE, margin=0.5,
              max_tries=1000) -> RoomSpec:
    """Random shoebox with a feasible Sabine absorption for the RT60 draw."""
    if rt60 is None:
        rt60 = float(rng.uniform(*RT60_RANGE))
    for _ in range(max_tries):
        dims = (rng.uniform(3.0, 10.0), rng.uniform(3.0, 8.0), rng.uniform(2.5, 4.0))
        V = dims[0] * dims[1] * dims[2]
        S = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])
        if 0.161 * V / (S * rt60) <= 0.95:
            break
    else:
        raise InfeasibleRT60Error(f"no feasible room found for RT60 {rt60}s")
    src = tuple(rng.uniform(margin, L - margin) for L in dims)
    mic = tuple(rng.uniform(margin, L - margin) for L in dims)
    return RoomSpec(dims, src, mic, rt60, sample_rate, rir_len)


def draw_params(seed: int, rt60=None, snr_db=None, sir_db=None, rir_len=SAMPLE_RATE) -> MixParams:
    """Per-recipe random draws from an independent generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    rt = float(rng.uniform(*RT60_RANGE)) if rt60 is None else float(rt60)
    snr = float(rng.uniform(*SNR_RANGE)) if snr_db is None else float(snr_db)
    sir = float(rng.uniform(*SIR_RANGE)) if sir_db is None else float(sir_db)
    return MixParams(seed, snr, sir, draw_room(rng, rt, rir_len=rir_len))
