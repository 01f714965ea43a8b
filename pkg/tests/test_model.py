import numpy as np
import pytest

from teapse.dsp import AudioBuffer, ComplexSpectrogram, StftConfig, stft
from teapse.errors import ConfigError, InputTooShortError, ShapeError, SignalError
from teapse.model import (
    GROUPS,
    ModelConfig,
    build_model,
    count_macs,
    count_params,
    enhance_offline,
    mac_breakdown,
    pool_time,
    stream_create,
    stream_push,
)
from teapse.nn import Dense, GatedConv2d, Layer

from conftest import TOY


def noise(n, seed, scale=0.3):
    return (scale * np.random.default_rng(seed).standard_normal(n)).astype(np.float32)


def toy_embedding(cfg, seed=7):
    return np.random.default_rng(seed).standard_normal(cfg.embedding_dim).astype(np.float32)


# configuration

def test_config_defaults():
    cfg = ModelConfig()
    assert cfg.freq_sizes() == [481, 241, 121, 61, 31, 16, 8]
    assert cfg.bottleneck_dim == 512
    assert cfg.frames_per_second == 100
    assert cfg.dilations == (1, 2, 5, 9)


@pytest.mark.parametrize("kw", [
    dict(conv_channels=0),
    dict(dilations=(1, 2, 5)),
    dict(n_fu=5),
    dict(spk_fd_layers=6),
    dict(kernel=(2, 5), n_fd=12, n_fu=12),
    dict(stride=(2, 2)),
    dict(compression=1.5),
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


# registry and parameter counts

def test_default_registry(default_model):
    reg = default_model.registry
    assert reg.groups() == sorted(GROUPS)
    assert all(e.trainable for e in reg.values())
    assert len(set(reg)) == len(reg)


def toy_ledger():
    """Hand count for the toy config (C=4, sizes 481/241/121, D=484, H=8)."""
    C, D, H, E = 4, 4 * 121, 8, 4
    gconv = lambda ci, co: 2 * co * ci * 2 * 3 + 2 * co  # noqa: E731
    fd = lambda ci: gconv(ci, C) + 2 * C + C  # conv + cLN + PReLU  # noqa: E731
    stcm = (D * 4 + 4) + 4 + 8 + (4 * 5 * 4 + 4) + 4 + 8 + (4 * D + D)
    group = 4 * stcm + (4 * H * (D + H) + 4 * H) + (H * D + D)
    decoder = 2 * (gconv(2 * C, C) + 2 * C + C) + (C + 1)
    mag = fd(1) + fd(C + 1) + group + decoder
    com = fd(4) + fd(C + 1) + group + 2 * decoder
    fusion = E * D + D
    spk = 2 * (4 * 4 * (481 + 4) + 16) + (8 * 481 + 481) + (gconv(1, 1) + 2 + 1)
    return {"mag_net": mag, "com_net": com, "fusion": 2 * fusion, "spk_enc_mag": spk, "spk_enc_com": spk}


def test_toy_param_ledger(toy_model):
    ledger = toy_ledger()
    assert ledger == {"mag_net": 39145, "com_net": 40102, "fusion": 4840,
                      "spk_enc_mag": 19898, "spk_enc_com": 19898}
    assert toy_model.registry.breakdown() == ledger
    assert count_params(toy_model.registry) == sum(ledger.values()) == 123883


def test_same_seed_bitwise(toy_cfg):
    _, a = build_model(toy_cfg, seed=11)
    _, b = build_model(toy_cfg, seed=11)
    _, c = build_model(toy_cfg, seed=12)
    assert all(np.array_equal(a[k].tensor, b[k].tensor) for k in a)
    assert not all(np.array_equal(a[k].tensor, c[k].tensor) for k in a)


def test_registry_completeness(toy_cfg):
    model, reg = build_model(toy_cfg, seed=1)
    model.reset_counters()
    model.enhance(noise(4800, 1), noise(4800, 2), toy_embedding(toy_cfg))
    owned = [(layer, arr) for layer in model.layers() for arr in layer.params.values()]
    # every parameter-owning layer ran, and its arrays are the registry's arrays
    assert all(layer.calls > 0 for layer, _ in owned)
    reg_ids = {id(e.tensor) for e in reg.values()}
    assert len(owned) == len(reg) and all(id(arr) in reg_ids for _, arr in owned)


# speaker encoder

def test_speaker_levels(default_model):
    mag = stft(noise(9600, 3)).magnitude()
    feats = default_model.speaker_encoder_forward(mag)
    assert [f.shape for f in feats] == [(1, 241), (1, 121), (1, 61), (1, 31), (1, 16)]
    assert all(fd.conv.c_out == 1 for fd in default_model.spk_mag.fds)
    with pytest.raises(SignalError):
        default_model.speaker_encoder_forward(np.zeros((0, 481), np.float32))


def test_pool_time_of_constant_map():
    frame = np.random.default_rng(0).standard_normal((1, 31)).astype(np.float32)
    level = np.repeat(frame[:, None, :], 12, axis=1)
    np.testing.assert_allclose(pool_time(level), frame, rtol=1e-6)


# stages

@pytest.mark.parametrize("T", [1, 7, 100])
def test_magnet_shape_and_bound(toy_model, toy_cfg, T):
    spk = toy_model.speaker_encoder_forward(stft(noise(4800, 4)).magnitude())
    mag = np.abs(np.random.default_rng(T).standard_normal((T, 481))).astype(np.float32)
    est = toy_model.magnet_forward(mag, spk, toy_embedding(toy_cfg))
    assert est.shape == (T, 481)
    assert np.all(est <= mag) and np.all(est >= 0)
    assert not toy_model.magnet_forward(np.zeros((T, 481), np.float32), spk, toy_embedding(toy_cfg)).any()


def test_magnet_wrong_speaker_levels(toy_model, toy_cfg):
    with pytest.raises(ShapeError):
        toy_model.magnet_forward(np.ones((3, 481), np.float32), [], toy_embedding(toy_cfg))
    with pytest.raises(ShapeError):
        toy_model.magnet_forward(np.ones((3, 481), np.float32), [], np.ones(3))


def test_comnet_residual_identity(toy_cfg):
    model, _ = build_model(toy_cfg, seed=5)
    for dec in model.com.stage.decoders:
        dec.head.params["weight"][:] = 0
        dec.head.params["bias"][:] = 0
    noisy = stft(noise(4800, 5))
    stage1 = stft(noise(4800, 6))
    spk = model.speaker_encoder_forward(noisy.magnitude(), "com")
    est = model.comnet_forward(noisy, stage1, spk, toy_embedding(toy_cfg))
    assert est.shape == noisy.shape
    np.testing.assert_array_equal(est.real, stage1.real)
    np.testing.assert_array_equal(est.imag, stage1.imag)


def test_comnet_config_mismatch(toy_model, toy_cfg):
    a = stft(noise(4800, 1))
    b = stft(noise(4800, 1), StftConfig(960, 960, 240))
    with pytest.raises(ConfigError):
        toy_model.comnet_forward(a, b, [], toy_embedding(toy_cfg))


def test_comnet_causality(toy_model, toy_cfg):
    noisy = stft(noise(9600, 8))
    stage1 = stft(noise(9600, 9))
    spk = toy_model.speaker_encoder_forward(noisy.magnitude(), "com")
    e = toy_embedding(toy_cfg)
    base = toy_model.comnet_forward(noisy, stage1, spk, e)
    t0 = 11
    re = noisy.real.copy()
    re[t0:] += 3.0
    pert = toy_model.comnet_forward(ComplexSpectrogram(re, noisy.imag, noisy.config), stage1, spk, e)
    assert np.array_equal(base.real[:t0], pert.real[:t0])
    assert not np.allclose(base.real[t0:], pert.real[t0:])


def test_fusion_locality(toy_model):
    group = toy_model.mag.stage.groups[0]
    x = np.random.default_rng(2).standard_normal((6, toy_model.cfg.bottleneck_dim)).astype(np.float32)
    ones = np.ones(x.shape[1], np.float32)
    unconditioned = x
    for stcm in group.stcms:
        unconditioned = stcm.forward(unconditioned)
    unconditioned = unconditioned + group._lstm_out(group.lstm.forward(unconditioned))
    np.testing.assert_array_equal(group.forward(x, ones), unconditioned)
    assert not np.allclose(group.forward(x, np.zeros_like(ones)), unconditioned)


# end to end

@pytest.mark.parametrize("n", [4800, 48000, 48001])
def test_offline_length(toy_model, toy_cfg, n):
    out = enhance_offline(AudioBuffer(noise(n, n)), AudioBuffer(noise(9600, 1)), toy_embedding(toy_cfg), toy_model)
    assert len(out) == n and np.all(np.isfinite(out.samples))


def test_offline_zero_input_and_determinism(toy_model, toy_cfg):
    e = toy_embedding(toy_cfg)
    z = toy_model.enhance(np.zeros(4800, np.float32), np.zeros(4800, np.float32), e)
    assert np.all(np.isfinite(z.samples)) and np.abs(z.samples).max() < 1e-6
    args = (noise(9600, 3), noise(4800, 4), e)
    a = toy_model.enhance(*args).samples
    b = toy_model.enhance(*args).samples
    assert a.tobytes() == b.tobytes()


def test_stage1_waveform(toy_model, toy_cfg):
    out, s1 = toy_model.enhance(noise(4800, 3), noise(4800, 4), toy_embedding(toy_cfg), return_stage1=True)
    assert len(s1) == len(out) == 4800 and not np.array_equal(out.samples, s1.samples)


def test_short_enrollment(toy_model, toy_cfg):
    with pytest.raises(InputTooShortError):
        toy_model.enhance(noise(4800, 1), noise(500, 2), toy_embedding(toy_cfg))


def test_two_enrollments_identical(toy_model, toy_cfg):
    e, enroll = toy_embedding(toy_cfg), noise(4800, 2)
    a = stream_create(toy_model, enroll, e)
    b = stream_create(toy_model, enroll, e)
    x = noise(4800, 3)
    assert np.array_equal(a.run(x), b.run(x))


def test_streaming_matches_offline_toy(toy_model, toy_cfg):
    e, enroll = toy_embedding(toy_cfg), noise(9600, 2)
    x = noise(5 * 48000, 10)
    offline = toy_model.enhance(x, enroll, e).samples
    session = stream_create(toy_model, enroll, e)
    out = np.concatenate([stream_push(session, x[i:i + 480]) for i in range(0, x.size, 480)])
    out = np.concatenate([out, session.flush()])
    # one-hop algorithmic latency
    assert np.abs(out[480:480 + x.size] - offline).max() <= 1e-4
    assert not out[:480].any()


def test_stream_reset_replay(toy_model, toy_cfg):
    session = toy_model.stream(noise(4800, 2), toy_embedding(toy_cfg))
    x = noise(4800, 6)
    first = session.run(x)
    session.reset()
    assert np.array_equal(session.run(x), first)
    with pytest.raises(ShapeError):
        session.push(np.zeros(479, np.float32))


def test_stream_requires_half_overlap(toy_model, toy_cfg):
    cfg = ModelConfig(**TOY, stft=StftConfig(960, 960, 240))
    model, _ = build_model(cfg)
    with pytest.raises(ConfigError):
        model.stream(noise(4800, 1), toy_embedding(cfg))


# MAC accounting

def test_dense_and_lstm_counters():
    d = Dense(512, 512)
    d.forward(np.zeros((100, 512), np.float32))
    assert d.macs == 26_214_400
    from teapse.nn import LSTM
    lstm = LSTM(512, 512)
    lstm.forward(np.zeros((3, 512), np.float32))
    assert lstm.macs == 4 * 512 * (512 + 512) * 3


def test_conv_counter_closed_form():
    g = GatedConv2d(5, 7)
    g.forward(np.zeros((5, 4, 33), np.float32))
    assert g.macs == 2 * 5 * 7 * 2 * 3 * 4 * 17


def test_conv_macs_scale_with_channels(toy_cfg):
    def conv_macs(cfg):
        model, _ = build_model(cfg)
        model.reset_counters()
        model.mag.stage.encoder[1].forward(np.zeros((cfg.conv_channels + 1, 3, 241), np.float32))
        return sum(layer.macs for layer in model.layers() if isinstance(layer, GatedConv2d))

    ratio = conv_macs(ModelConfig(**{**TOY, "conv_channels": 8})) / conv_macs(toy_cfg)
    # one speaker channel rides along: (2C+1)*2C over (C+1)*C at C=4
    assert ratio == pytest.approx(9 * 8 / (5 * 4))


def test_instrumented_macs_equal_analytic(toy_cfg):
    model, _ = build_model(toy_cfg, seed=2)
    enroll, x = noise(9600, 1), noise(7200, 2)
    model.reset_counters()
    cond = model.condition(enroll, toy_embedding(toy_cfg))
    model.enhance_spectra(stft(x, toy_cfg.stft), cond)
    measured = sum(layer.macs for layer in model.layers())
    b = mac_breakdown(toy_cfg)
    T, T_e = stft(x).shape[0], stft(enroll).shape[0]
    expected = (b["mag_net_per_frame"] + b["com_net_per_frame"]) * T + b["spk_enc_per_frame"] * T_e + b["fusion_once"]
    assert measured == expected


def test_streaming_step_macs_per_frame(default_model):
    cfg = default_model.cfg
    session = default_model.stream(noise(4800, 1), np.zeros(cfg.embedding_dim, np.float32))
    session.push(np.zeros(480, np.float32))
    for layer in default_model.layers():
        layer.macs = 0
    session.push(noise(480, 2))
    measured = sum(layer.macs for layer in default_model.layers())
    b = mac_breakdown(cfg)
    assert measured == b["mag_net_per_frame"] + b["com_net_per_frame"]


def test_count_macs_default():
    total = count_macs()
    assert abs(total / 19.66e9 - 1) <= 0.2
    assert isinstance(Layer().macs, int)
