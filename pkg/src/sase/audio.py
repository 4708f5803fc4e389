"""Mono WAV I/O.

Readers always hand back float64 in [-1, 1] scaling conventions
(PCM16 divides by 32768), writers default to 32-bit float WAV which
round-trips float data without quantization.
"""

import numpy as np
import scipy.io.wavfile

from .errors import DataError


def read_wav(path):
    """Return (sample_rate, float64 samples). Mono only."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.ndim} channels"
                        f" (shape {data.shape})")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    return rate, x


def write_wav(path, rate, samples, encoding="float32"):
    """Write mono samples; encoding is 'float32' or 'pcm16'."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"{path}: expected mono samples, got shape {x.shape}")
    if encoding == "float32":
        scipy.io.wavfile.write(path, int(rate), x.astype(np.float32))
    elif encoding == "pcm16":
        # symmetric with the reader's /32768 so round trips stay unbiased
        q = np.clip(np.round(x * 32768.0), -32768, 32767)
        scipy.io.wavfile.write(path, int(rate), q.astype(np.int16))
    else:
        raise ValueError(f"unknown WAV encoding {encoding!r}")
