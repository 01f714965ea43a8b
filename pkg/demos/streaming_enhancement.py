"""Stream noise through a randomly initialized model, one 10 ms hop at a time.

The weights are untrained, so the output is not speech; the point is the
plumbing: conditioning once on enrollment audio, pushing hops, and checking
that the stream matches the whole-signal result one hop later.
"""

import time

import numpy as np

from teapse import ModelConfig, build_model

FS = 48000

rng = np.random.default_rng(0)
noisy = (0.3 * rng.standard_normal(2 * FS)).astype(np.float32)
enroll = (0.3 * rng.standard_normal(FS)).astype(np.float32)

cfg = ModelConfig()
model, registry = build_model(cfg, seed=0)
embedding = rng.standard_normal(cfg.embedding_dim).astype(np.float32)
print(f"{sum(e.tensor.size for e in registry.values()):,} parameters")

session = model.stream(enroll, embedding)
hop = session.hop
chunks, times = [], []
for i in range(0, noisy.size, hop):
    t0 = time.perf_counter()
    chunks.append(session.push(noisy[i:i + hop]))
    times.append(time.perf_counter() - t0)
chunks.append(session.flush())
streamed = np.concatenate(chunks)

offline = model.enhance(noisy, enroll, embedding).samples
diff = np.abs(streamed[hop:hop + noisy.size] - offline).max()
print(f"stream vs offline, one hop late: max diff {diff:.2e}")
print(f"mean time per hop {1e3 * np.mean(times[20:]):.1f} ms (hop is {1e3 * hop / FS:.0f} ms)")
