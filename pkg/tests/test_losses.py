import numpy as np
import pytest

from teapse.dsp import StftConfig
from teapse.errors import ConfigError, SignalError
from teapse.losses import (
    MULTI_RES,
    MultiResConfig,
    asym_loss,
    composite_loss,
    fd_gradient,
    mag_loss,
    pha_loss,
    si_snr,
    si_snr_grad,
    spectral_terms,
)


def pair(seed, n=9600):
    r = np.random.default_rng(seed)
    s = r.standard_normal(n)
    return s, s + 0.5 * r.standard_normal(n)


def test_si_snr_hand_value():
    assert si_snr(np.array([1.0, 0, 0]), np.array([1.0, 1, 0])) == pytest.approx(0.0, abs=1e-7)


def test_si_snr_ceiling_and_scale():
    s = np.random.default_rng(0).standard_normal(1000)
    s /= np.linalg.norm(s)
    assert si_snr(s, s) >= 80.0
    # epsilon keeps the perfect case finite, so 2.5*s scores higher, not equal
    assert si_snr(s, 2.5 * s) >= 80.0


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_si_snr_scale_invariance(alpha):
    s, s_hat = pair(1)
    assert abs(si_snr(s, s_hat) - si_snr(s, alpha * s_hat)) <= 1e-6


def test_si_snr_zero_reference():
    with pytest.raises(SignalError):
        si_snr(np.zeros(8), np.ones(8))
    with pytest.raises(SignalError):
        si_snr(np.ones(8), np.ones(9))


def test_grad_matches_central_differences():
    r = np.random.default_rng(2)
    s, s_hat = r.standard_normal(64), r.standard_normal(64)
    for point in (s_hat, 2.0 * s_hat):
        g = si_snr_grad(s, point)
        fd = fd_gradient(lambda v: -si_snr(s, v), point, 1e-4)
        assert np.abs(g - fd).max() <= 1e-3 * np.abs(g).max()


def test_grad_orthogonal_to_estimate():
    # scale invariance: moving along s_hat changes nothing, up to the
    # epsilon terms, which contribute about 2*eps*(1/|s_t|^2 + 1/|e|^2)
    r = np.random.default_rng(3)
    s, s_hat = r.standard_normal(64), r.standard_normal(64)
    g = si_snr_grad(s, s_hat)
    assert abs(g @ s_hat) <= 1e-6 * np.linalg.norm(g) * np.linalg.norm(s_hat)


def test_fd_gradient_quadratic():
    f = lambda v: float(np.sum(v ** 2))  # noqa: E731
    np.testing.assert_allclose(fd_gradient(f, np.array([1.0, 2.0]), 1e-3), [2.0, 4.0], atol=1e-6)
    cubic = lambda v: float(np.sum(v ** 3))  # noqa: E731
    x = np.array([1.0, 2.0])
    err = [np.abs(fd_gradient(cubic, x, h) - 3 * x ** 2).max() for h in (1e-2, 5e-3)]
    assert err[1] < err[0] and err[0] / err[1] == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("cfg", MULTI_RES)
def test_terms_vanish_for_identical_signals(cfg):
    s, _ = pair(4)
    assert spectral_terms(s, s, cfg) == {"mag": 0.0, "pha": 0.0, "asym": 0.0}


def test_asym_zero_when_estimate_louder():
    s, _ = pair(5)
    cfg = MULTI_RES[1]
    assert asym_loss(s, 2.0 * s, cfg) == 0.0
    assert mag_loss(s, 2.0 * s, cfg) > 0


def test_single_bin_hinge():
    # one frame of a cosine on bin 2; the estimate is silent
    cfg = StftConfig(16, 16, 8, center_pad=True)
    n = 64
    s = np.cos(2 * np.pi * 2 * np.arange(n) / 16)
    t = spectral_terms(s, np.zeros(n), cfg, c=1.0)
    assert t["mag"] == pytest.approx(t["asym"]) and t["mag"] > 0
    assert spectral_terms(np.zeros(n) + 1e-30, s, cfg, c=1.0)["asym"] == 0.0


def test_term_orderings():
    for seed in range(5):
        s, s_hat = pair(seed)
        t = spectral_terms(s, s_hat, MULTI_RES[0])
        assert min(t.values()) >= 0 and t["asym"] <= t["mag"]


def test_composite_identities():
    s, s_hat = pair(6)
    l2 = composite_loss(s, s_hat, MultiResConfig(), "L2")
    l1 = composite_loss(s, s_hat, MultiResConfig(), "L1")
    assert l1.mag == l2.mag and l1.asym == l2.asym
    parts = [composite_loss(s, s_hat, MultiResConfig((cfg,)), "L2").spectral for cfg in MULTI_RES]
    assert l2.composite == -si_snr(s, s_hat) + sum(parts) / 3
    assert l2.composite - l1.composite == pytest.approx(np.mean(l2.pha), rel=1e-12)
    same = composite_loss(s, s, which="L2")
    assert same.composite == -si_snr(s, s)


def test_single_resolution_variant():
    s, s_hat = pair(7)
    single = composite_loss(s, s_hat, MultiResConfig.single(), "L2")
    cfg = StftConfig(1024, 960, 480, center_pad=True)
    assert single.mag == [mag_loss(s, s_hat, cfg)]
    assert single.pha == [pha_loss(s, s_hat, cfg)]
    assert single.composite == -si_snr(s, s_hat) + single.scale_part(0)


def test_config_errors():
    with pytest.raises(ConfigError):
        MultiResConfig(())
    with pytest.raises(ConfigError):
        MultiResConfig((StftConfig(960, 960, 400),))
    with pytest.raises(ConfigError):
        composite_loss(*pair(0), which="L3")


def test_breakdown_lines():
    lines = list(composite_loss(*pair(8), which="l1").lines())
    assert lines[0] == "which=L1" and lines[-1].startswith("composite=")
    assert len(lines) == 3 + 3 * 3
