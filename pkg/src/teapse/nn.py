"""Neural layer primitives with offline forward and streaming step.

Layout conventions:
    2-D feature maps are ``[C, T, F]`` (channels, frames, frequency bins);
    sequences are ``[T, D]``.

Every causal layer has ``init_state()`` and ``step(x_t, state)``; ``step``
consumes one frame and reads the same parameter arrays as ``forward``.
Parameter arrays may be views into a fused backing buffer (so a single matmul
can serve content and gate paths); loaders must write them in place.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NonCausalLayerError, ShapeError

EPS = 1e-5
F32 = np.float32

_CHUNK_ELEMS = 1 << 22


def sigmoid(x):
    # no overflow warnings for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(F32)


class Layer:
    """Base class: named parameters plus recursive traversal of child layers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.calls = 0
        self.macs = 0

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Layer):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for key, value in self.params.items():
            yield prefix + key, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def layers(self):
        yield self
        for _, child in self.children():
            yield from child.layers()

    def reset_counters(self):
        for layer in self.layers():
            layer.calls = 0
            layer.macs = 0


class PReLU(Layer):
    def __init__(self, channels, axis=0, init=0.25):
        super().__init__()
        self.axis = axis
        self.params["slope"] = np.full(channels, init, dtype=F32)

    def _slope(self, ndim):
        shape = [1] * ndim
        shape[self.axis] = -1
        return self.params["slope"].reshape(shape)

    def forward(self, x):
        self.calls += 1
        return np.where(x >= 0, x, self._slope(x.ndim) * x)

    def step(self, x, state=None):
        return self.forward(x)

    def init_state(self):
        return None


class CumulativeLayerNorm(Layer):
    """Layer norm whose statistics accumulate over all frames seen so far.

    Input ``[C, T, F]`` (offline) or ``[C, F]`` (one frame); the mean and
    variance at frame t pool every (C, F) value of frames 0..t.
    """

    def __init__(self, channels, eps=EPS):
        super().__init__()
        self.eps = eps
        self.params["gain"] = np.ones(channels, dtype=F32)
        self.params["bias"] = np.zeros(channels, dtype=F32)

    def init_state(self):
        return np.zeros(3)  # count, sum, sum of squares

    def forward(self, x):
        self.calls += 1
        C, T, F = x.shape
        x64 = x.astype(np.float64)
        frame_sum = x64.sum(axis=(0, 2))
        frame_sq = np.einsum("ctf,ctf->t", x64, x64)
        count = np.arange(1, T + 1) * (C * F)
        mean = np.cumsum(frame_sum) / count
        var = np.maximum(np.cumsum(frame_sq) / count - mean**2, 0.0)
        y = (x64 - mean[None, :, None]) / np.sqrt(var + self.eps)[None, :, None]
        g = self.params["gain"][:, None, None]
        b = self.params["bias"][:, None, None]
        return (y * g + b).astype(F32)

    def step(self, x, state):
        self.calls += 1
        x64 = x.astype(np.float64)
        flat = x64.ravel()
        state[0] += flat.size
        state[1] += flat.sum()
        state[2] += flat @ flat
        mean = state[1] / state[0]
        var = max(state[2] / state[0] - mean * mean, 0.0)
        y = (x64 - mean) / np.sqrt(var + self.eps)
        return (y * self.params["gain"][:, None] + self.params["bias"][:, None]).astype(F32)


class Dense(Layer):
    """Affine map on the last axis; also serves as a pointwise (1x1) conv."""

    def __init__(self, d_in, d_out, rng=None):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = _uniform(rng, (d_out, d_in), d_in)
        self.params["bias"] = np.zeros(d_out, dtype=F32)

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"dense expects last dim {self.d_in}, got {x.shape}")
        self.calls += 1
        self.macs += self.d_in * self.d_out * (x.size // self.d_in)
        return x @ self.params["weight"].T + self.params["bias"]

    def step(self, x, state=None):
        return self.forward(x)

    def init_state(self):
        return None


class GatedConv2d(Layer):
    """``content(x) * sigmoid(gate(x))`` with causal time padding.

    Time tap j (0..kt-1) reads frame ``t - (kt-1) + j``; frequency is padded by
    ``pad_f`` on both sides and strided by ``stride_f``.
    """

    def __init__(self, c_in, c_out, kernel=(2, 3), stride_f=2, pad_f=1, rng=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kt, self.kf = kernel
        self.stride_f, self.pad_f = stride_f, pad_f
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * self.kt * self.kf
        self._w = _uniform(rng, (2, c_out, c_in, self.kt, self.kf), fan_in)
        self._b = np.zeros((2, c_out), dtype=F32)
        self._wm = self._w.reshape(2 * c_out, fan_in)
        self.params.update(
            content_kernel=self._w[0],
            content_bias=self._b[0],
            gate_kernel=self._w[1],
            gate_bias=self._b[1],
        )

    def out_size(self, f_in):
        f_out = (f_in + 2 * self.pad_f - self.kf) // self.stride_f + 1
        if f_out < 1:
            raise ConfigError(f"frequency axis of {f_in} bins collapses below 1")
        return f_out

    def _check(self, x):
        if x.shape[0] != self.c_in:
            raise ShapeError(f"gconv expects {self.c_in} input channels, got {x.shape[0]}")

    def _gate(self, z):
        co = self.c_out
        z += self._b.reshape(2 * co, *([1] * (z.ndim - 1)))
        return z[:co] * sigmoid(z[co:])

    def _patches(self, xp, f_out):
        # xp: [C, kt-1+T, F+2p] -> [C*kt*kf, T*f_out]
        C, Tp, _ = xp.shape
        T = Tp - self.kt + 1
        s = self.stride_f
        out = np.empty((C, self.kt, self.kf, T, f_out), dtype=F32)
        for j in range(self.kt):
            for k in range(self.kf):
                out[:, j, k] = xp[:, j:j + T, k:k + s * (f_out - 1) + 1:s]
        return out.reshape(C * self.kt * self.kf, T * f_out)

    def forward(self, x):
        self._check(x)
        self.calls += 1
        C, T, F = x.shape
        f_out = self.out_size(F)
        xp = np.pad(x, ((0, 0), (self.kt - 1, 0), (self.pad_f, self.pad_f)))
        y = np.empty((self.c_out, T, f_out), dtype=F32)
        chunk = max(1, _CHUNK_ELEMS // (self._wm.shape[1] * f_out))
        for t0 in range(0, T, chunk):
            t1 = min(T, t0 + chunk)
            p = self._patches(xp[:, t0:t1 + self.kt - 1], f_out)
            z = (self._wm @ p).reshape(2 * self.c_out, t1 - t0, f_out)
            y[:, t0:t1] = self._gate(z)
        self.macs += self._wm.size * T * f_out
        return y

    def init_state(self):
        return {"hist": None}

    def step(self, x, state):
        self._check(x)
        self.calls += 1
        C, F = x.shape
        f_out = self.out_size(F)
        hist = state["hist"]
        if hist is None:
            hist = np.zeros((C, self.kt - 1, F), dtype=F32)
        win = np.concatenate([hist, x[:, None, :]], axis=1)
        state["hist"] = win[:, 1:]
        xp = np.pad(win, ((0, 0), (0, 0), (self.pad_f, self.pad_f)))
        idx = np.arange(self.kf)[:, None] + self.stride_f * np.arange(f_out)[None, :]
        p = xp[:, :, idx].reshape(C * self.kt * self.kf, f_out)
        self.macs += self._wm.size * f_out
        return self._gate(self._wm @ p)


class TransposedGatedConv2d(Layer):
    """Gated transposed convolution along frequency, causal conv along time.

    The full transposed output ``(F_in - 1) * stride + kf`` is cropped to
    ``[pad_f, pad_f + out_size)``, where ``out_size`` is the frequency size the
    paired down-sampling layer saw at its input.
    """

    def __init__(self, c_in, c_out, kernel=(2, 3), stride_f=2, pad_f=1, rng=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kt, self.kf = kernel
        self.stride_f, self.pad_f = stride_f, pad_f
        rng = rng or np.random.default_rng(0)
        # fan-in of a transposed conv: inputs feeding one output position
        fan_in = c_in * self.kt * max(1, self.kf // stride_f)
        # backing layout [kf, 2, C_out, C_in, kt] so one matmul covers every tap
        self._w = _uniform(rng, (self.kf, 2, c_out, c_in, self.kt), fan_in)
        self._b = np.zeros((2, c_out), dtype=F32)
        self._wm = self._w.reshape(self.kf * 2 * c_out, c_in * self.kt)
        self.params.update(
            content_kernel=self._w[:, 0].transpose(1, 2, 3, 0),
            content_bias=self._b[0],
            gate_kernel=self._w[:, 1].transpose(1, 2, 3, 0),
            gate_bias=self._b[1],
        )

    def _check(self, x, out_size):
        if x.shape[0] != self.c_in:
            raise ShapeError(f"trgconv expects {self.c_in} input channels, got {x.shape[0]}")
        if out_size is None:
            raise ConfigError("transposed conv needs the paired layer's frequency size")
        full = (x.shape[-1] - 1) * self.stride_f + self.kf
        if out_size + self.pad_f > full:
            raise ConfigError(f"cannot crop {full} bins to {out_size} with pad {self.pad_f}")

    def _scatter(self, z, f_in, out_size):
        # z: [kf, 2*C_out, ..., f_in] -> cropped, biased, gated [C_out, ..., out_size]
        s = self.stride_f
        full = np.zeros(z.shape[1:-1] + ((f_in - 1) * s + self.kf,), dtype=F32)
        for k in range(self.kf):
            full[..., k:k + s * (f_in - 1) + 1:s] += z[k]
        y = full[..., self.pad_f:self.pad_f + out_size]
        co = self.c_out
        y += self._b.reshape(2 * co, *([1] * (y.ndim - 1)))
        return y[:co] * sigmoid(y[co:])

    def forward(self, x, out_size=None):
        self._check(x, out_size)
        self.calls += 1
        C, T, F = x.shape
        xp = np.pad(x, ((0, 0), (self.kt - 1, 0), (0, 0)))
        y = np.empty((self.c_out, T, out_size), dtype=F32)
        chunk = max(1, _CHUNK_ELEMS // (self._wm.shape[0] * F))
        for t0 in range(0, T, chunk):
            t1 = min(T, t0 + chunk)
            n = t1 - t0
            p = np.stack([xp[:, t0 + j:t1 + j] for j in range(self.kt)], axis=1)
            z = (self._wm @ p.reshape(C * self.kt, n * F)).reshape(self.kf, 2 * self.c_out, n, F)
            y[:, t0:t1] = self._scatter(z, F, out_size)
        self.macs += self._wm.size * T * F
        return y

    def init_state(self):
        return {"hist": None}

    def step(self, x, state, out_size=None):
        self._check(x, out_size)
        self.calls += 1
        C, F = x.shape
        hist = state["hist"]
        if hist is None:
            hist = np.zeros((C, self.kt - 1, F), dtype=F32)
        win = np.concatenate([hist, x[:, None, :]], axis=1)
        state["hist"] = win[:, 1:]
        z = (self._wm @ win.reshape(C * self.kt, F)).reshape(self.kf, 2 * self.c_out, F)
        self.macs += self._wm.size * F
        return self._scatter(z, F, out_size)


class LSTM(Layer):
    """Unidirectional LSTM, gate order (input, forget, cell, output)."""

    def __init__(self, d_in, hidden, rng=None):
        super().__init__()
        self.d_in, self.hidden = d_in, hidden
        rng = rng or np.random.default_rng(0)
        # fused [W_ih | W_hh] so a streaming step is a single matvec
        self._w = _uniform(rng, (4 * hidden, d_in + hidden), hidden)
        self.params.update(
            weight_ih=self._w[:, :d_in],
            weight_hh=self._w[:, d_in:],
            bias=np.zeros(4 * hidden, dtype=F32),
        )

    def init_state(self):
        h = np.zeros(self.hidden, dtype=F32)
        return [h, h.copy()]

    def _cell(self, z, c):
        H = self.hidden
        i = sigmoid(z[:H])
        f = sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = sigmoid(z[3 * H:])
        c = f * c + i * g
        return o * np.tanh(c), c

    def forward(self, x, state=None):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"lstm expects [T, {self.d_in}], got {x.shape}")
        self.calls += 1
        T = x.shape[0]
        h, c = state if state is not None else self.init_state()
        zx = x @ self.params["weight_ih"].T + self.params["bias"]
        w_hh = np.ascontiguousarray(self.params["weight_hh"])
        out = np.empty((T, self.hidden), dtype=F32)
        for t in range(T):
            h, c = self._cell(zx[t] + w_hh @ h, c)
            out[t] = h
        if state is not None:
            state[0], state[1] = h, c
        self.macs += self._w.size * T
        return out

    def step(self, x, state):
        if x.shape != (self.d_in,):
            raise ShapeError(f"lstm step expects [{self.d_in}], got {x.shape}")
        self.calls += 1
        h, c = state
        z = self._w @ np.concatenate([x, h]) + self.params["bias"]
        state[0], state[1] = self._cell(z, c)
        self.macs += self._w.size
        return state[0]


class BLSTM(Layer):
    """Bidirectional LSTM; output is ``[forward | backward]``, width 2*hidden."""

    def __init__(self, d_in, hidden, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.fwd = LSTM(d_in, hidden, rng)
        self.bwd = LSTM(d_in, hidden, rng)

    def forward(self, x):
        self.calls += 1
        return np.concatenate([self.fwd.forward(x), self.bwd.forward(x[::-1])[::-1]], axis=1)

    def init_state(self):
        raise NonCausalLayerError("non-causal layer: BLSTM cannot run frame by frame")

    def step(self, x, state=None):
        raise NonCausalLayerError("non-causal layer: BLSTM cannot run frame by frame")


def lstm_forward(x, layer, bidirectional=False, state=None):
    """Run an LSTM or BLSTM over ``x`` [T, D]; streaming state only for LSTM."""
    if bidirectional:
        if state is not None:
            raise NonCausalLayerError("non-causal layer: BLSTM cannot take a stream state")
        return layer.forward(x)
    return layer.forward(x, state)


class DilatedConv1d(Layer):
    """Causal dilated conv over time on ``[T, C]`` sequences."""

    def __init__(self, channels, kernel=5, dilation=1, rng=None):
        super().__init__()
        self.channels, self.kernel, self.dilation = channels, kernel, dilation
        rng = rng or np.random.default_rng(0)
        self._w = _uniform(rng, (channels, kernel, channels), channels * kernel)
        self._wm = self._w.reshape(channels, kernel * channels)
        self.params.update(weight=self._w.transpose(0, 2, 1), bias=np.zeros(channels, dtype=F32))

    @property
    def history(self):
        return (self.kernel - 1) * self.dilation

    def forward(self, x):
        self.calls += 1
        T, C = x.shape
        d = self.dilation
        xp = np.pad(x, ((self.history, 0), (0, 0)))
        p = np.stack([xp[j * d:j * d + T] for j in range(self.kernel)], axis=1)
        self.macs += self._wm.size * T
        return p.reshape(T, self.kernel * C) @ self._wm.T + self.params["bias"]

    def init_state(self):
        return {"hist": np.zeros((self.history, self.channels), dtype=F32)}

    def step(self, x, state):
        self.calls += 1
        win = np.concatenate([state["hist"], x[None]], axis=0)
        state["hist"] = win[1:]
        self.macs += self._wm.size
        return self._wm @ win[:: self.dilation].ravel() + self.params["bias"]


class STCM(Layer):
    """Squeezed temporal conv module on ``[T, D]`` with a residual path.

    pointwise D->C, PReLU, cLN, dilated causal conv C->C, PReLU, cLN,
    pointwise C->D, then add the input.
    """

    def __init__(self, dim, channels=64, kernel=5, dilation=1, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.dim = dim
        self.pconv_in = Dense(dim, channels, rng)
        self.act1 = PReLU(channels, axis=-1)
        self.norm1 = CumulativeLayerNorm(channels)
        self.dconv = DilatedConv1d(channels, kernel, dilation, rng)
        self.act2 = PReLU(channels, axis=-1)
        self.norm2 = CumulativeLayerNorm(channels)
        self.pconv_out = Dense(channels, dim, rng)

    @property
    def receptive_field(self):
        return self.dconv.history

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"stcm expects [T, {self.dim}], got {x.shape}")
        self.calls += 1
        h = self.act1.forward(self.pconv_in.forward(x))
        h = self.norm1.forward(h.T[:, :, None])[:, :, 0].T
        h = self.act2.forward(self.dconv.forward(h))
        h = self.norm2.forward(h.T[:, :, None])[:, :, 0].T
        return x + self.pconv_out.forward(h)

    def init_state(self):
        return [self.norm1.init_state(), self.dconv.init_state(), self.norm2.init_state()]

    def step(self, x, state):
        if x.shape != (self.dim,):
            raise ShapeError(f"stcm step expects [{self.dim}], got {x.shape}")
        self.calls += 1
        h = self.act1.forward(self.pconv_in.forward(x))
        h = self.norm1.step(h[:, None], state[0])[:, 0]
        h = self.act2.forward(self.dconv.step(h, state[1]))
        h = self.norm2.step(h[:, None], state[2])[:, 0]
        return x + self.pconv_out.forward(h)


def stcm_forward(x, module, state=None):
    """Offline forward, or one streaming step when ``state`` is given."""
    return module.forward(x) if state is None else module.step(x, state)
