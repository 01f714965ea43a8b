"""Real-time-factor measurement for offline and streaming enhancement."""

from __future__ import annotations

import time

import numpy as np

from .dsp import SAMPLE_RATE
from .errors import ConfigError

WARMUP_FRAMES = 50


def _synthetic(seconds, seed, amplitude=0.3):
    rng = np.random.default_rng(seed)
    return (amplitude * rng.standard_normal(int(round(seconds * SAMPLE_RATE)))).astype(np.float32)


def bench_rtf(model, duration_s=10.0, mode="streaming", seed=0, warmup=WARMUP_FRAMES):
    """Time enhancement of seeded noise; return ``rtf_mean``, ``rtf_p95``, ``frames``.

    RTF is processing time per frame divided by the hop duration. Streaming
    mode times every push and drops the first ``warmup`` pushes; offline mode
    times one whole-signal call and spreads it evenly over its frames.
    """
    if duration_s < 5:
        raise ConfigError("benchmark needs at least 5 s of input")
    hop = model.cfg.stft.hop_len
    hop_s = hop / SAMPLE_RATE
    noisy = _synthetic(duration_s, seed)
    enroll = _synthetic(2.0, seed + 1)
    emb = np.random.default_rng(seed + 2).standard_normal(model.cfg.embedding_dim).astype(np.float32)
    if mode == "streaming":
        session = model.stream(enroll, emb)
        n = noisy.size // hop
        times = np.empty(n)
        for i in range(n):
            t0 = time.perf_counter()
            session.push(noisy[i * hop:(i + 1) * hop])
            times[i] = time.perf_counter() - t0
        rtf = times[warmup:] / hop_s
        return {"mode": mode, "rtf_mean": float(rtf.mean()),
                "rtf_p95": float(np.percentile(rtf, 95)), "frames": int(rtf.size)}
    if mode == "offline":
        t0 = time.perf_counter()
        model.enhance(noisy, enroll, emb)
        elapsed = time.perf_counter() - t0
        frames = model.cfg.stft.n_frames(noisy.size)
        rtf = elapsed / frames / hop_s
        return {"mode": mode, "rtf_mean": rtf, "rtf_p95": rtf, "frames": frames,
                "total_s": elapsed, "audio_s": noisy.size / SAMPLE_RATE}
    raise ConfigError(f"unknown benchmark mode {mode!r}")


def format_report(report: dict) -> str:
    return "\n".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in report.items())
