"""WAV decode/encode, decibel conversions and framewise level measurement.

Every DSP stage works on :class:`AudioClip`, a mono float64 waveform with
samples nominally in ``[-1, 1]``. Multi-channel files are downmixed by the
arithmetic mean on load.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

DB_FLOOR = -120.0
PCM16_SCALE = 32768.0


class AudioError(Exception):
    """Base class for audio ingestion and encoding failures."""


class UnreadableAudioError(AudioError):
    """The file is missing or is not a parseable RIFF/WAVE file."""


class UnsupportedEncodingError(AudioError):
    """The WAV sample format is neither 16-bit PCM nor 32-bit float."""


class EmptyAudioError(AudioError):
    """The audio contains zero samples."""


class ConversionError(AudioError):
    """The external format converter failed."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "samples", samples)

    @property
    def channel_count(self) -> int:
        return 1

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    def __len__(self) -> int:
        return self.num_samples


@dataclass(frozen=True)
class FrameLevel:
    frame_index: int
    rms_db: float
    is_silent: bool


def _normalize(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / PCM16_SCALE
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise UnsupportedEncodingError(f"unsupported WAV sample format {data.dtype} (need PCM16 or float32)")


def read_wav(path: str | os.PathLike) -> AudioClip:
    """Decode a PCM16 or float32 WAV file into a mono clip.

    Raises:
        UnreadableAudioError: the file is missing or malformed.
        UnsupportedEncodingError: any other sample format.
        EmptyAudioError: the data chunk holds no samples.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError as exc:
        raise UnreadableAudioError(f"{path}: no such file") from exc
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() and "riff" not in msg.lower():
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise UnreadableAudioError(f"{path}: {msg}") from exc
    except (OSError, EOFError) as exc:
        raise UnreadableAudioError(f"{path}: {exc}") from exc

    samples = _normalize(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    if not np.all(np.isfinite(samples)):
        raise UnreadableAudioError(f"{path}: non-finite float samples")
    return AudioClip(int(rate), samples)


def wav_duration(path: str | os.PathLike) -> float:
    """Duration in seconds from the header, without decoding into memory."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(os.fspath(path), mmap=True)
    except FileNotFoundError as exc:
        raise UnreadableAudioError(f"{path}: no such file") from exc
    except (ValueError, OSError, EOFError) as exc:
        raise UnreadableAudioError(f"{path}: {exc}") from exc
    return data.shape[0] / rate


def quantize_pcm16(samples: np.ndarray) -> tuple[np.ndarray, int]:
    """Return int16 samples and the number of out-of-range values clamped."""
    clamped = int(np.count_nonzero(np.abs(samples) > 1.0))
    ints = np.round(np.clip(samples, -1.0, 1.0) * PCM16_SCALE)
    return np.clip(ints, -32768, 32767).astype(np.int16), clamped


def write_wav(clip: AudioClip, path: str | os.PathLike, encoding: str = "pcm16") -> int:
    """Encode ``clip`` to ``path``.

    Samples outside ``[-1, 1]`` are clamped; the number clamped is logged and
    returned.
    """
    if clip.num_samples == 0:
        raise EmptyAudioError("refusing to write an empty clip")
    if encoding == "pcm16":
        data, clamped = quantize_pcm16(clip.samples)
    elif encoding == "float32":
        clamped = int(np.count_nonzero(np.abs(clip.samples) > 1.0))
        data = np.clip(clip.samples, -1.0, 1.0).astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r} (expected 'pcm16' or 'float32')")
    if clamped:
        log.warning("clamped %d samples outside [-1, 1] while writing %s", clamped, path)
    try:
        wavfile.write(os.fspath(path), clip.sample_rate, data)
    except OSError as exc:
        raise AudioError(f"{path}: cannot write: {exc}") from exc
    return clamped


def amplitude_to_db(a: float) -> float:
    if a < 0:
        raise ValueError(f"amplitude must be non-negative, got {a}")
    if a == 0:
        return DB_FLOOR
    return 20.0 * float(np.log10(a))


def db_to_amplitude(db: float) -> float:
    return float(10.0 ** (db / 20.0))


def frame_length(sample_rate: int, frame_s: float) -> int:
    if frame_s <= 0:
        raise ValueError(f"frame_s must be positive, got {frame_s}")
    return max(1, int(round(frame_s * sample_rate)))


def frame_rms_db(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """RMS level in dBFS of contiguous ``frame_len`` frames; last frame may be partial."""
    n = samples.shape[0]
    if n == 0:
        return np.zeros(0)
    n_frames = -(-n // frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[:n] = samples
    sq = (padded * padded).reshape(n_frames, frame_len).sum(axis=1)
    counts = np.full(n_frames, frame_len, dtype=np.float64)
    counts[-1] = n - (n_frames - 1) * frame_len
    rms = np.sqrt(sq / counts)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    db[rms == 0] = DB_FLOOR
    return np.maximum(db, DB_FLOOR)


def frame_levels(clip: AudioClip, frame_s: float = 0.01, threshold_db: float = -55.0) -> list[FrameLevel]:
    """Split the clip into non-overlapping frames and classify each as silent or not.

    A ``frame_s`` longer than the clip yields one frame covering all of it.
    """
    flen = min(frame_length(clip.sample_rate, frame_s), max(clip.num_samples, 1))
    levels = frame_rms_db(clip.samples, flen)
    return [FrameLevel(i, float(db), bool(db < threshold_db)) for i, db in enumerate(levels)]


def render_command(template: str, **paths: str | os.PathLike) -> list[str]:
    """Split a command template and substitute ``{input}``/``{output}`` placeholders."""
    subs = {k: os.fspath(v) for k, v in paths.items()}
    try:
        return [tok.format(**subs) for tok in shlex.split(template)]
    except (KeyError, IndexError) as exc:
        raise ValueError(f"command template {template!r} has an unknown placeholder: {exc}") from exc


def convert_external(
    input_path: str | os.PathLike,
    output_path: str | os.PathLike,
    command_template: str,
    timeout: float = 120.0,
) -> Path:
    """Run a format converter such as ``ffmpeg -y -i {input} {output}``.

    Exit code 0 and a decodable output file mean success.
    """
    argv = render_command(command_template, input=input_path, output=output_path)
    try:
        proc = subprocess.run(argv, stdin=subprocess.DEVNULL, capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise ConversionError(f"converter timed out after {timeout}s on {input_path}") from exc
    except OSError as exc:
        raise ConversionError(f"cannot start converter {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace").strip().splitlines()[-1:] or [""]
        raise ConversionError(f"converter exited {proc.returncode} on {input_path}: {tail[0]}")
    out = Path(output_path)
    wav_duration(out)
    return out

