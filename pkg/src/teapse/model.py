"""Two-stage personalized enhancement network: MAG-Net, COM-Net, speaker encoders.

The magnitude stage predicts a sigmoid mask on the noisy magnitude; the
complex stage refines the stage-one spectrum with a residual on the real and
imaginary planes. Both stages share one topology: a gated-conv encoder with
speaker-level features concatenated between levels, groups of squeezed TCMs
followed by a residual LSTM with the speaker embedding multiplied in ahead of
each group, and gated transposed-conv decoders with U-Net skips.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dsp import (
    MODEL_STFT,
    AudioBuffer,
    ComplexSpectrogram,
    StftConfig,
    istft,
    stft,
    stft_frame,
    synth_frame,
)
from .errors import ConfigError, ShapeError, SignalError
from .nn import (
    BLSTM,
    F32,
    LSTM,
    STCM,
    CumulativeLayerNorm,
    Dense,
    GatedConv2d,
    Layer,
    PReLU,
    TransposedGatedConv2d,
    sigmoid,
)

GROUPS = ("mag_net", "com_net", "spk_enc_mag", "spk_enc_com", "fusion")


@dataclass(frozen=True)
class ModelConfig:
    n_fd: int = 6
    n_fu: int = 6
    conv_channels: int = 64
    kernel: tuple = (2, 3)
    stride: tuple = (1, 2)
    n_stcnl_groups: int = 4
    stcm_per_group: int = 4
    dilations: tuple = (1, 2, 5, 9)
    dconv_kernel: int = 5
    stcm_channels: int = 64
    lstm_hidden: int = 512
    spk_blstm_hidden: int = 512  # BLSTM output width, split across directions
    spk_fd_layers: int = 5
    spk_channels: int = 1
    embedding_dim: int = 192
    stft: StftConfig = field(default=MODEL_STFT)
    compression: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "stride", tuple(self.stride))
        object.__setattr__(self, "dilations", tuple(self.dilations))
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if len(self.dilations) != self.stcm_per_group:
            raise ConfigError("dilations must have one entry per S-TCM in a group")
        if self.n_fu != self.n_fd:
            raise ConfigError("each FU layer pairs with one FD layer: n_fu must equal n_fd")
        if self.spk_fd_layers > self.n_fd - 1:
            raise ConfigError("speaker encoder cannot have more levels than encoder joints")
        if self.spk_blstm_hidden % 2:
            raise ConfigError("spk_blstm_hidden must be even (split over two directions)")
        if self.stride[0] != 1:
            raise ConfigError("time stride must be 1 for frame-synchronous streaming")
        if not 0 < self.compression <= 1:
            raise ConfigError("compression exponent must be in (0, 1]")
        self.freq_sizes()

    def freq_sizes(self) -> list[int]:
        """Frequency extent at every encoder level, input first."""
        kf, s = self.kernel[1], self.stride[1]
        sizes = [self.stft.n_bins]
        for _ in range(self.n_fd):
            nxt = (sizes[-1] + 2 - kf) // s + 1
            if nxt < 1:
                raise ConfigError(f"FD chain reduces the frequency axis below 1: {sizes}")
            sizes.append(nxt)
        return sizes

    @property
    def bottleneck_dim(self) -> int:
        return self.conv_channels * self.freq_sizes()[-1]

    @property
    def frames_per_second(self) -> float:
        return 48000 / self.stft.hop_len


class FDLayer(Layer):
    """Frequency down-sampling: gated conv, cLN, PReLU."""

    def __init__(self, c_in, c_out, cfg, rng):
        super().__init__()
        self.conv = GatedConv2d(c_in, c_out, cfg.kernel, cfg.stride[1], 1, rng)
        self.norm = CumulativeLayerNorm(c_out)
        self.act = PReLU(c_out)

    def forward(self, x):
        return self.act.forward(self.norm.forward(self.conv.forward(x)))

    def init_state(self):
        return [self.conv.init_state(), self.norm.init_state()]

    def step(self, x, state):
        return self.act.forward(self.norm.step(self.conv.step(x, state[0]), state[1]))


class FULayer(Layer):
    """Frequency up-sampling: gated transposed conv, cLN, PReLU."""

    def __init__(self, c_in, c_out, cfg, rng):
        super().__init__()
        self.conv = TransposedGatedConv2d(c_in, c_out, cfg.kernel, cfg.stride[1], 1, rng)
        self.norm = CumulativeLayerNorm(c_out)
        self.act = PReLU(c_out)

    def forward(self, x, out_size):
        return self.act.forward(self.norm.forward(self.conv.forward(x, out_size)))

    def init_state(self):
        return [self.conv.init_state(), self.norm.init_state()]

    def step(self, x, state, out_size):
        return self.act.forward(self.norm.step(self.conv.step(x, state[0], out_size), state[1]))


class STCNLGroup(Layer):
    """Speaker fusion, S-TCMs at the configured dilations, residual LSTM."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        D = cfg.bottleneck_dim
        self.fusion = Dense(cfg.embedding_dim, D, rng)
        self.stcms = [
            STCM(D, cfg.stcm_channels, cfg.dconv_kernel, d, rng) for d in cfg.dilations
        ]
        self.lstm = LSTM(D, cfg.lstm_hidden, rng)
        # only needed when the LSTM width differs from the bottleneck
        self.lstm_proj = Dense(cfg.lstm_hidden, D, rng) if cfg.lstm_hidden != D else None

    def project_embedding(self, embedding):
        return self.fusion.forward(np.asarray(embedding, dtype=F32))

    def _lstm_out(self, h):
        return h if self.lstm_proj is None else self.lstm_proj.forward(h)

    def forward(self, x, e_proj):
        self.calls += 1
        x = x * e_proj
        for stcm in self.stcms:
            x = stcm.forward(x)
        return x + self._lstm_out(self.lstm.forward(x))

    def init_state(self):
        return [s.init_state() for s in self.stcms] + [self.lstm.init_state()]

    def step(self, x, state, e_proj):
        x = x * e_proj
        for stcm, st in zip(self.stcms, state):
            x = stcm.step(x, st)
        return x + self._lstm_out(self.lstm.step(x, state[-1]))


class Decoder(Layer):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        C = cfg.conv_channels
        self.fus = [FULayer(2 * C, C, cfg, rng) for _ in range(cfg.n_fu)]
        self.head = Dense(C, 1, rng)


class Stage(Layer):
    """Encoder, sequence model, and ``n_decoders`` decoder stacks."""

    def __init__(self, cfg: ModelConfig, in_channels: int, n_decoders: int, rng):
        super().__init__()
        self.cfg = cfg
        C = cfg.conv_channels
        self.encoder = []
        for i in range(cfg.n_fd):
            c_in = in_channels if i == 0 else C + (cfg.spk_channels if i <= cfg.spk_fd_layers else 0)
            self.encoder.append(FDLayer(c_in, C, cfg, rng))
        self.groups = [STCNLGroup(cfg, rng) for _ in range(cfg.n_stcnl_groups)]
        self.decoders = [Decoder(cfg, rng) for _ in range(n_decoders)]
        self.sizes = cfg.freq_sizes()

    def project_embedding(self, embedding):
        return [g.project_embedding(embedding) for g in self.groups]

    def forward(self, x, spk_levels, e_projs):
        """``x`` [C_in, T, F0] -> one [T, F0] head output per decoder."""
        self.calls += 1
        C, T, _ = x.shape
        if C != self.encoder[0].conv.c_in:
            raise ShapeError(f"stage input has {C} channels, expected {self.encoder[0].conv.c_in}")
        if len(spk_levels) != self.cfg.spk_fd_layers:
            raise ShapeError(f"expected {self.cfg.spk_fd_layers} speaker levels, got {len(spk_levels)}")
        skips = []
        h = x
        for i, fd in enumerate(self.encoder):
            h = fd.forward(h)
            skips.append(h)
            if i < len(spk_levels):
                lvl = spk_levels[i]
                h = np.concatenate([h, np.broadcast_to(lvl[:, None, :], (lvl.shape[0], T, lvl.shape[1]))])
        F_b = self.sizes[-1]
        seq = h.transpose(1, 0, 2).reshape(T, -1)
        for g, e in zip(self.groups, e_projs):
            seq = g.forward(seq, e)
        bottleneck = seq.reshape(T, -1, F_b).transpose(1, 0, 2)
        outs = []
        n = len(self.encoder)
        for dec in self.decoders:
            d = bottleneck
            for j, fu in enumerate(dec.fus):
                d = fu.forward(np.concatenate([d, skips[n - 1 - j]]), self.sizes[n - 1 - j])
            outs.append(dec.head.forward(d.transpose(1, 2, 0))[..., 0])
        return outs

    def init_state(self):
        return {
            "enc": [fd.init_state() for fd in self.encoder],
            "groups": [g.init_state() for g in self.groups],
            "dec": [[fu.init_state() for fu in dec.fus] for dec in self.decoders],
        }

    def step(self, x, spk_levels, e_projs, state):
        """One frame ``x`` [C_in, F0] -> one [F0] head output per decoder."""
        skips = []
        h = x
        for i, (fd, st) in enumerate(zip(self.encoder, state["enc"])):
            h = fd.step(h, st)
            skips.append(h)
            if i < len(spk_levels):
                h = np.concatenate([h, spk_levels[i]])
        F_b = self.sizes[-1]
        seq = h.reshape(-1)
        for g, e, st in zip(self.groups, e_projs, state["groups"]):
            seq = g.step(seq, st, e)
        bottleneck = seq.reshape(-1, F_b)
        outs = []
        n = len(self.encoder)
        for dec, dst in zip(self.decoders, state["dec"]):
            d = bottleneck
            for j, (fu, st) in enumerate(zip(dec.fus, dst)):
                d = fu.step(np.concatenate([d, skips[n - 1 - j]]), st, self.sizes[n - 1 - j])
            outs.append(dec.head.forward(d.T)[:, 0])
        return outs


class SpeakerEncoder(Layer):
    """BLSTM, dense back to the bin count, then single-channel FD levels.

    Each level's output is averaged over time, so enrollment length never has
    to match the noisy input.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        n_bins = cfg.stft.n_bins
        self.blstm = BLSTM(n_bins, cfg.spk_blstm_hidden // 2, rng)
        self.dense = Dense(cfg.spk_blstm_hidden, n_bins, rng)
        ch = cfg.spk_channels
        self.fds = [FDLayer(1 if i == 0 else ch, ch, cfg, rng) for i in range(cfg.spk_fd_layers)]

    def levels(self, enroll_mag):
        """Unpooled level outputs, each [spk_channels, T, F_i]."""
        self.calls += 1
        if enroll_mag.ndim != 2 or enroll_mag.shape[0] < 1:
            raise SignalError("empty enrollment")
        feat = (enroll_mag.astype(np.float64) ** self.cfg.compression).astype(F32)
        h = self.dense.forward(self.blstm.forward(feat))
        x = h[None]
        out = []
        for fd in self.fds:
            x = fd.forward(x)
            out.append(x)
        return out

    def forward(self, enroll_mag):
        return [pool_time(lvl) for lvl in self.levels(enroll_mag)]


def pool_time(level):
    """Average a [C, T, F] feature map over time -> [C, F]."""
    return level.mean(axis=1, dtype=np.float64).astype(F32)


def _compress_planes(re, im, c):
    mag = np.hypot(re.astype(np.float64), im.astype(np.float64))
    gain = np.where(mag > 0, mag ** c / np.where(mag > 0, mag, 1.0), 0.0)
    return (re * gain).astype(F32), (im * gain).astype(F32)


def _unit_phase(re, im):
    mag = np.hypot(re, im)
    safe = np.where(mag > 0, mag, 1.0)
    return np.where(mag > 0, re / safe, 0.0), np.where(mag > 0, im / safe, 0.0)


class MagNet(Layer):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.stage = Stage(cfg, 1, 1, rng)

    def forward(self, noisy_mag, spk_levels, e_projs):
        feat = (noisy_mag.astype(np.float64) ** self.cfg.compression).astype(F32)
        mask = sigmoid(self.stage.forward(feat[None], spk_levels, e_projs)[0])
        return (mask * noisy_mag).astype(F32)

    def step(self, mag_t, spk_levels, e_projs, state):
        feat = (mag_t.astype(np.float64) ** self.cfg.compression).astype(F32)
        mask = sigmoid(self.stage.step(feat[None], spk_levels, e_projs, state)[0])
        return (mask * mag_t).astype(F32)


class ComNet(Layer):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.stage = Stage(cfg, 4, 2, rng)

    def _inputs(self, n_re, n_im, s_re, s_im):
        c = self.cfg.compression
        return np.stack(_compress_planes(n_re, n_im, c) + _compress_planes(s_re, s_im, c))

    def forward(self, n_re, n_im, s_re, s_im, spk_levels, e_projs):
        r_re, r_im = self.stage.forward(self._inputs(n_re, n_im, s_re, s_im), spk_levels, e_projs)
        return s_re + r_re, s_im + r_im

    def step(self, n_re, n_im, s_re, s_im, spk_levels, e_projs, state):
        x = self._inputs(n_re[None], n_im[None], s_re[None], s_im[None])[:, 0]
        r_re, r_im = self.stage.step(x, spk_levels, e_projs, state)
        return s_re + r_re, s_im + r_im


@dataclass
class ParamEntry:
    tensor: np.ndarray
    group: str
    stage: str
    trainable: bool = True

    @property
    def unit(self) -> str:
        """Freeze unit: the group, with fusion split per stage."""
        return f"fusion_{self.stage}" if self.group == "fusion" else self.group


class ParameterRegistry(OrderedDict):
    """Ordered ``name -> ParamEntry``."""

    def groups(self):
        return sorted({e.group for e in self.values()})

    def units(self):
        return sorted({e.unit for e in self.values()})

    def count(self, group=None, trainable=True):
        total = 0
        for e in self.values():
            if group is not None and group not in (e.group, e.unit):
                continue
            if trainable is not None and e.trainable != trainable:
                continue
            total += e.tensor.size
        return total

    def breakdown(self, trainable=True):
        return {g: self.count(g, trainable) for g in self.groups()}


def count_params(registry: ParameterRegistry, group_filter=None, trainable=True) -> int:
    """Element count of matching entries; ``trainable=None`` ignores the flag."""
    return registry.count(group_filter, trainable)


class TeaPse(Layer):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.mag = MagNet(cfg, rng)
        self.com = ComNet(cfg, rng)
        self.spk_mag = SpeakerEncoder(cfg, rng)
        self.spk_com = SpeakerEncoder(cfg, rng)
        self.registry = self._build_registry()

    def _build_registry(self):
        reg = ParameterRegistry()
        owners = {"mag": ("mag_net", "mag"), "com": ("com_net", "com"),
                  "spk_mag": ("spk_enc_mag", "mag"), "spk_com": ("spk_enc_com", "com")}
        for name, tensor in self.named_parameters():
            group, stage = owners[name.split(".", 1)[0]]
            if ".fusion." in name:
                group = "fusion"
            if name in reg:
                raise ConfigError(f"duplicate parameter name {name}")
            reg[name] = ParamEntry(tensor, group, stage)
        return reg

    # speaker conditioning

    def _check_embedding(self, embedding):
        e = np.asarray(embedding, dtype=F32).reshape(-1)
        if e.shape != (self.cfg.embedding_dim,):
            raise ShapeError(f"speaker embedding must have {self.cfg.embedding_dim} values, got {e.size}")
        if not np.all(np.isfinite(e)):
            raise SignalError("speaker embedding is not finite")
        return e

    def condition(self, enroll, embedding):
        """Per-stage speaker features: pooled LGR levels and projected embeddings."""
        e = self._check_embedding(embedding)
        enroll_mag = stft(enroll, self.cfg.stft).magnitude()
        return {
            "mag": (self.spk_mag.forward(enroll_mag), self.mag.stage.project_embedding(e)),
            "com": (self.spk_com.forward(enroll_mag), self.com.stage.project_embedding(e)),
        }

    def speaker_encoder_forward(self, enroll_mag, stage="mag"):
        return (self.spk_mag if stage == "mag" else self.spk_com).forward(enroll_mag)

    def magnet_forward(self, noisy_mag, spk_levels, embedding):
        e_projs = self.mag.stage.project_embedding(self._check_embedding(embedding))
        return self.mag.forward(noisy_mag, spk_levels, e_projs)

    def comnet_forward(self, noisy_spec, stage1_spec, spk_levels, embedding):
        if noisy_spec.config != stage1_spec.config or noisy_spec.shape != stage1_spec.shape:
            raise ConfigError("noisy and stage-one spectrograms must share STFT config and shape")
        e_projs = self.com.stage.project_embedding(self._check_embedding(embedding))
        re, im = self.com.forward(noisy_spec.real, noisy_spec.imag, stage1_spec.real,
                                  stage1_spec.imag, spk_levels, e_projs)
        return ComplexSpectrogram(re, im, noisy_spec.config)

    # end to end

    def enhance_spectra(self, noisy_spec: ComplexSpectrogram, cond):
        mag = noisy_spec.magnitude()
        est_mag = self.mag.forward(mag, *cond["mag"])
        ph_re, ph_im = _unit_phase(noisy_spec.real, noisy_spec.imag)
        stage1 = ComplexSpectrogram(est_mag * ph_re, est_mag * ph_im, noisy_spec.config)
        re, im = self.com.forward(noisy_spec.real, noisy_spec.imag, stage1.real, stage1.imag, *cond["com"])
        return stage1, ComplexSpectrogram(re, im, noisy_spec.config)

    def enhance(self, noisy, enroll, embedding, return_stage1=False):
        x = noisy.samples if isinstance(noisy, AudioBuffer) else np.asarray(noisy, F32)
        cond = self.condition(enroll, embedding)
        stage1, est = self.enhance_spectra(stft(x, self.cfg.stft), cond)
        out = istft(est, len(x))
        if return_stage1:
            return out, istft(stage1, len(x))
        return out

    def stream(self, enroll, embedding):
        return StreamSession(self, enroll, embedding)


def build_model(cfg: ModelConfig | None = None, seed: int = 0):
    model = TeaPse(cfg or ModelConfig(), seed)
    return model, model.registry


def enhance_offline(noisy, enroll, embedding, model: TeaPse) -> AudioBuffer:
    return model.enhance(noisy, enroll, embedding)


class StreamSession:
    """Frame-by-frame enhancement: push one hop in, get one hop out.

    Output lags the offline result by one hop (``win_len - hop_len`` samples):
    the first push returns silence and ``flush`` releases the final hop.
    """

    def __init__(self, model: TeaPse, enroll, embedding):
        cfg = model.cfg.stft
        if cfg.win_len != 2 * cfg.hop_len:
            raise ConfigError("streaming requires win_len == 2 * hop_len")
        self.model = model
        self.hop = cfg.hop_len
        self.cond = model.condition(enroll, embedding)
        self.reset()

    def reset(self):
        self._prev = np.zeros(self.hop, dtype=F32)
        self._tail = np.zeros(self.hop)
        self._pushed = 0
        self._mag_state = self.model.mag.stage.init_state()
        self._com_state = self.model.com.stage.init_state()

    def _frame(self, window):
        m = self.model
        z = stft_frame(window, m.cfg.stft)
        re, im = z.real.astype(F32), z.imag.astype(F32)
        mag = np.hypot(re, im)
        est_mag = m.mag.step(mag, *self.cond["mag"], self._mag_state)
        ph_re, ph_im = _unit_phase(re, im)
        s_re, s_im = (est_mag * ph_re).astype(F32), (est_mag * ph_im).astype(F32)
        o_re, o_im = m.com.step(re, im, s_re, s_im, *self.cond["com"], self._com_state)
        return o_re.astype(np.float64) + 1j * o_im.astype(np.float64)

    def push(self, frame) -> np.ndarray:
        frame = np.asarray(frame, dtype=F32).reshape(-1)
        if frame.size != self.hop:
            raise ShapeError(f"stream frames must be {self.hop} samples, got {frame.size}")
        window = np.concatenate([self._prev, frame])
        self._prev = frame
        self._pushed += 1
        if self._pushed == 1:
            return np.zeros(self.hop, dtype=F32)
        seg = synth_frame(self._frame(window), self.model.cfg.stft)
        out = self._tail + seg[: self.hop]
        self._tail = seg[self.hop:].copy()
        return out.astype(F32)

    def flush(self) -> np.ndarray:
        out = self._tail.astype(F32)
        self._tail = np.zeros(self.hop)
        return out

    def run(self, samples) -> np.ndarray:
        """Push a whole signal (zero-padded to whole hops) and flush."""
        x = np.asarray(samples, dtype=F32).reshape(-1)
        pad = (-x.size) % self.hop
        x = np.pad(x, (0, pad))
        chunks = [self.push(x[i:i + self.hop]) for i in range(0, x.size, self.hop)]
        chunks.append(self.flush())
        return np.concatenate(chunks)


def stream_create(model, enroll, embedding) -> StreamSession:
    return StreamSession(model, enroll, embedding)


def stream_push(session: StreamSession, frame) -> np.ndarray:
    return session.push(frame)


def mac_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Analytic multiply-accumulates.

    Keys ending in ``_per_frame`` scale with frame count (noisy path, or
    enrollment frames for the speaker encoders); ``fusion_once`` is paid once
    per enrollment.
    """
    C = cfg.conv_channels
    kt, kf = cfg.kernel
    sizes = cfg.freq_sizes()
    D = cfg.bottleneck_dim
    H = cfg.lstm_hidden
    n = cfg.n_fd

    def gconv(ci, co, f_out):
        return 2 * ci * co * kt * kf * f_out

    def trgconv(ci, co, f_in):
        return 2 * ci * co * kt * kf * f_in

    def encoder(c_in):
        total = 0
        for i in range(n):
            ci = c_in if i == 0 else C + (cfg.spk_channels if i <= cfg.spk_fd_layers else 0)
            total += gconv(ci, C, sizes[i + 1])
        return total

    decoder = sum(trgconv(2 * C, C, sizes[n - j]) for j in range(n)) + C * sizes[0]
    stcm = D * cfg.stcm_channels * 2 + cfg.stcm_channels ** 2 * cfg.dconv_kernel
    lstm = 4 * H * (D + H) + (H * D if H != D else 0)
    groups = cfg.n_stcnl_groups * (cfg.stcm_per_group * stcm + lstm)
    hb = cfg.spk_blstm_hidden // 2
    F0 = sizes[0]
    spk = 2 * 4 * hb * (F0 + hb) + cfg.spk_blstm_hidden * F0
    spk += sum(gconv(1 if i == 0 else cfg.spk_channels, cfg.spk_channels, sizes[i + 1])
               for i in range(cfg.spk_fd_layers))
    return {
        "mag_net_per_frame": encoder(1) + groups + decoder,
        "com_net_per_frame": encoder(4) + groups + 2 * decoder,
        "spk_enc_per_frame": 2 * spk,
        "fusion_once": 2 * cfg.n_stcnl_groups * cfg.embedding_dim * D,
    }


def count_macs(cfg: ModelConfig | None = None) -> float:
    """MACs per second of audio for both stages and both speaker encoders."""
    cfg = cfg or ModelConfig()
    b = mac_breakdown(cfg)
    per_frame = b["mag_net_per_frame"] + b["com_net_per_frame"] + b["spk_enc_per_frame"]
    return per_frame * cfg.frames_per_second


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
