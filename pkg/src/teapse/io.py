"""WAV files, the weight container, and key=value run configs."""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from collections import OrderedDict
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer, StftConfig
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    UnsupportedEncodingError,
    WavFormatError,
    WeightFileError,
    WeightShapeError,
)
from .model import ModelConfig

WAVE_PCM = 1
WAVE_FLOAT = 3
_FORMAT_NAMES = {2: "MS ADPCM", 6: "A-law", 7: "mu-law", 17: "IMA ADPCM", 85: "MP3",
                 0xFFFE: "extensible"}

WEIGHT_MAGIC = b"TPW3"
WEIGHT_VERSION = 1


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# WAV

def encode_wav(audio: AudioBuffer, encoding="float32") -> bytes:
    x = np.asarray(audio.samples, dtype=np.float32)
    if encoding == "pcm16":
        payload = np.clip(np.round(x.astype(np.float64) * 32768.0), -32768, 32767).astype("<i2").tobytes()
        fmt = struct.pack("<HHIIHH", WAVE_PCM, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16)
        chunks = [b"fmt ", struct.pack("<I", len(fmt)), fmt]
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHHH", WAVE_FLOAT, 1, audio.sample_rate, audio.sample_rate * 4, 4, 32, 0)
        chunks = [b"fmt ", struct.pack("<I", len(fmt)), fmt,
                  b"fact", struct.pack("<II", 4, x.size)]
    else:
        raise UnsupportedEncodingError(f"unsupported encoding {encoding!r}; use pcm16 or float32")
    chunks += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) % 2:
        chunks.append(b"\0")
    body = b"WAVE" + b"".join(chunks)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(path, audio: AudioBuffer, encoding="float32"):
    atomic_write(path, encode_wav(audio, encoding))


def decode_wav(data: bytes) -> AudioBuffer:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    samples = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated {cid.decode('latin-1')!r} chunk: "
                                 f"{len(body)} of {size} bytes")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body)
            code, channels, _, _, _, bits = fmt
            if code not in (WAVE_PCM, WAVE_FLOAT):
                name = _FORMAT_NAMES.get(code, "unknown")
                raise UnsupportedEncodingError(f"unsupported encoding: format code {code} ({name})")
            if channels != 1:
                raise WavFormatError(f"only mono is supported, file has {channels} channels")
            if (code, bits) not in ((WAVE_PCM, 16), (WAVE_FLOAT, 32)):
                raise UnsupportedEncodingError(
                    f"unsupported encoding: {bits}-bit {'PCM' if code == 1 else 'float'}")
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError("data chunk precedes fmt chunk")
            if fmt[0] == WAVE_PCM:
                if size % 2:
                    raise WavFormatError("PCM16 data has an odd byte count")
                samples = np.frombuffer(body, dtype="<i2").astype(np.float32) / 32768.0
            else:
                if size % 4:
                    raise WavFormatError("float32 data is not a whole number of samples")
                samples = np.frombuffer(body, dtype="<f4").astype(np.float32)
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if samples is None:
        raise WavFormatError("missing data chunk")
    return AudioBuffer(samples, fmt[2])


def read_wav(path) -> AudioBuffer:
    return decode_wav(Path(path).read_bytes())


# Weights

def encode_weights(tensors) -> bytes:
    """``tensors``: ordered mapping of name -> array."""
    parts = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def decode_weights(data: bytes) -> OrderedDict:
    if data[:4] != WEIGHT_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {WEIGHT_MAGIC!r}")
    if len(data) < 16:
        raise WeightFileError("weight file truncated")
    blob, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(blob) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch: weight file is corrupted")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"unsupported weight format version {version}")
    pos = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", blob, pos)
            dims = struct.unpack_from(f"<{rank}I", blob, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(blob):
                raise WeightFileError(f"payload of {name!r} runs past the end of the file")
            if name in out:
                raise WeightFileError(f"duplicate tensor name {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise WeightFileError(f"weight file truncated: {exc}") from None
    if pos != len(blob):
        raise WeightFileError(f"{len(blob) - pos} trailing bytes after the last tensor")
    return out


def save_weights(registry, path):
    atomic_write(path, encode_weights(OrderedDict((k, e.tensor) for k, e in registry.items())))


def load_weights(path) -> OrderedDict:
    return decode_weights(Path(path).read_bytes())


def load_into(registry, source):
    """Copy tensors into the registry's arrays in place, checking names and shapes."""
    tensors = source if isinstance(source, dict) else load_weights(source)
    missing = [k for k in registry if k not in tensors]
    extra = [k for k in tensors if k not in registry]
    for name, entry in registry.items():
        if name in tensors and tensors[name].shape != entry.tensor.shape:
            raise WeightShapeError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, "
                f"model expects {tuple(entry.tensor.shape)}"
            )
    if missing or extra:
        raise WeightShapeError(f"tensor set differs from the model: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, entry in registry.items():
        np.copyto(entry.tensor, tensors[name])
    return registry


# Run config

_TUPLE_FIELDS = {"kernel", "stride", "dilations"}
_STFT_KEYS = {"stft_fft_len": "fft_len", "stft_win_len": "win_len", "stft_hop_len": "hop_len"}
RUN_KEYS = {"seed", "weights", "noisy", "enroll", "embedding", "out", "manifest"}


def parse_run_config(text: str):
    """Parse ``key=value`` lines into ``(ModelConfig, extras)``; unknown keys raise."""
    model_fields = {f.name for f in fields(ModelConfig)} - {"stft"}
    values, stft_kw, extras = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TUPLE_FIELDS:
                values[key] = tuple(int(v) for v in value.split(","))
            elif key == "compression":
                values[key] = float(value)
            elif key in model_fields:
                values[key] = int(value)
            elif key in _STFT_KEYS:
                stft_kw[_STFT_KEYS[key]] = int(value)
            elif key in RUN_KEYS:
                extras[key] = int(value) if key == "seed" else value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    if stft_kw:
        values["stft"] = StftConfig(**{**dict(fft_len=960, win_len=960, hop_len=480), **stft_kw})
    return ModelConfig(**values), extras


def load_run_config(path):
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


def read_embedding(path, dim: int) -> np.ndarray:
    if str(path) == "zero":
        return np.zeros(dim, dtype=np.float32)
    data = Path(path).read_bytes()
    if len(data) != 4 * dim:
        raise ConfigError(f"embedding file holds {len(data) // 4} floats, expected {dim}")
    return np.frombuffer(data, dtype="<f4").astype(np.float32)
