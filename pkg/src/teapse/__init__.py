"""Two-stage personalized speech enhancement in numpy.

A magnitude stage (MagNet) masks the noisy magnitude, a complex stage
(ComNet) refines the complex spectrum, and both are conditioned on an
enrollment utterance and a fixed speaker embedding.
"""

from .dsp import AudioBuffer, ComplexSpectrogram, StftConfig, istft, power_law_compress, stft
from .errors import TeapseError
from .model import (
    ModelConfig,
    StreamSession,
    TeaPse,
    build_model,
    count_macs,
    count_params,
    enhance_offline,
    stream_create,
    stream_push,
)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "ComplexSpectrogram",
    "ModelConfig",
    "StftConfig",
    "StreamSession",
    "TeaPse",
    "TeapseError",
    "build_model",
    "count_macs",
    "count_params",
    "enhance_offline",
    "istft",
    "power_law_compress",
    "stft",
    "stream_create",
    "stream_push",
]
