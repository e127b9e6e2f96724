"""Noise-profile spectral subtraction, silence trimming/padding and the external enhancer hook."""

from __future__ import annotations

import logging
import os
import signal
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip, AudioError, frame_length, read_wav, render_command

log = logging.getLogger(__name__)


class EnhanceError(Exception):
    pass


class ProfileError(EnhanceError):
    """Not enough audio to form a noise profile."""


class AllSilentError(EnhanceError):
    """Every detection frame of the clip is below the silence threshold."""


def hann(n: int) -> np.ndarray:
    """Periodic Hann window; its square overlap-adds to a constant at hop n/4."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _window_square_sum(window: np.ndarray, hop: int) -> np.ndarray:
    n = window.shape[0]
    total = np.zeros(n + hop * (n // hop))
    sq = window * window
    for k in range(n // hop + 1):
        total[k * hop : k * hop + n] += sq
    # steady-state region, fully covered by every overlapping shift
    return total[n - hop : n]


@dataclass(frozen=True)
class SubtractParams:
    fft_size: int = 2048
    hop: int | None = None
    over_subtraction: float = 1.0
    spectral_floor: float = 0.02

    def __post_init__(self) -> None:
        if self.fft_size < 2 or self.fft_size % 2:
            raise ValueError(f"fft_size must be an even integer >= 2, got {self.fft_size}")
        hop = self.fft_size // 4 if self.hop is None else int(self.hop)
        if hop <= 0 or self.fft_size % hop:
            raise ValueError(f"hop {hop} must evenly divide fft_size {self.fft_size}")
        ola = _window_square_sum(hann(self.fft_size), hop)
        if np.ptp(ola) > 1e-9 * ola.max():
            raise ValueError(f"Hann window is not constant-overlap-add at hop {hop} for fft_size {self.fft_size}")
        if self.over_subtraction < 0:
            raise ValueError("over_subtraction must be >= 0")
        if not 0.0 <= self.spectral_floor < 1.0:
            raise ValueError("spectral_floor must lie in [0, 1)")
        object.__setattr__(self, "hop", hop)


@dataclass(frozen=True)
class TrimParams:
    silence_threshold_db: float = -55.0
    min_silence_s: float = 0.1
    pad_s: float = 0.1
    frame_s: float = 0.01

    def __post_init__(self) -> None:
        if self.min_silence_s <= 0:
            raise ValueError("min_silence_s must be > 0")
        if self.pad_s < 0:
            raise ValueError("pad_s must be >= 0")
        if self.silence_threshold_db >= 0:
            raise ValueError("silence_threshold_db must be negative")
        if self.frame_s <= 0:
            raise ValueError("frame_s must be > 0")


@dataclass(frozen=True, eq=False)
class NoiseProfile:
    fft_size: int
    bin_magnitudes: np.ndarray
    source_seconds: float
    truncated: bool = False

    def __post_init__(self) -> None:
        mags = np.asarray(self.bin_magnitudes, dtype=np.float64)
        if mags.shape != (self.fft_size // 2 + 1,):
            raise ValueError(f"expected {self.fft_size // 2 + 1} bins, got shape {mags.shape}")
        if np.any(mags < 0) or not np.all(np.isfinite(mags)):
            raise ValueError("bin magnitudes must be finite and non-negative")
        object.__setattr__(self, "bin_magnitudes", mags)

    @classmethod
    def zeros(cls, fft_size: int) -> "NoiseProfile":
        return cls(fft_size, np.zeros(fft_size // 2 + 1), 0.0)


def stft(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Hann-windowed STFT with ``fft_size - hop`` zeros of padding on both ends.

    The padding makes every real sample covered by the full set of
    overlapping frames, so :func:`istft` reconstructs all of them.
    """
    pad = fft_size - hop
    total = x.shape[0] + 2 * pad
    total += (-(total - fft_size)) % hop
    padded = np.zeros(max(total, fft_size))
    padded[pad : pad + x.shape[0]] = x
    frames = sliding_window_view(padded, fft_size)[::hop]
    return np.fft.rfft(frames * hann(fft_size), axis=1)


def istft(spec: np.ndarray, fft_size: int, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, truncated to ``length`` samples."""
    window = hann(fft_size)
    frames = np.fft.irfft(spec, n=fft_size, axis=1) * window
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * hop + fft_size)
    norm = np.zeros_like(out)
    sq = window * window
    for i in range(n_frames):
        out[i * hop : i * hop + fft_size] += frames[i]
        norm[i * hop : i * hop + fft_size] += sq
    pad = fft_size - hop
    out = out[pad : pad + length]
    norm = norm[pad : pad + length]
    return out / np.where(norm > 1e-12, norm, 1.0)


def estimate_noise_profile(
    clip: AudioClip, tail_s: float = 0.5, params: SubtractParams | None = None
) -> NoiseProfile:
    """Mean STFT magnitude per bin over the last ``tail_s`` seconds of ``clip``.

    Only whole frames inside the tail contribute, so whatever precedes the
    tail does not influence the profile. A clip shorter than ``tail_s`` is used
    in full with a logged warning and ``truncated=True``.
    """
    params = params or SubtractParams()
    n = params.fft_size
    if clip.num_samples == 0:
        raise ProfileError("cannot estimate a noise profile from an empty clip")
    tail_len = int(round(tail_s * clip.sample_rate))
    truncated = clip.num_samples < tail_len
    if truncated:
        log.warning(
            "clip is %.3fs, shorter than the %.3fs noise tail; using the whole clip",
            clip.duration_s,
            tail_s,
        )
    tail = clip.samples[-tail_len:] if not truncated else clip.samples
    if tail.shape[0] < n:
        raise ProfileError(f"noise segment has {tail.shape[0]} samples, fewer than one {n}-sample FFT window")
    frames = sliding_window_view(tail, n)[:: params.hop]
    mags = np.abs(np.fft.rfft(frames * hann(n), axis=1)).mean(axis=0)
    return NoiseProfile(n, mags, tail.shape[0] / clip.sample_rate, truncated)


def subtraction_gain(mag: np.ndarray, noise: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Real gain turning magnitude ``M`` into ``max(M - alpha*N, beta*M)``; 1 where ``M`` is 0."""
    cleaned = np.maximum(mag - alpha * noise, beta * mag)
    return np.divide(cleaned, mag, out=np.ones_like(mag), where=mag > 0)


def spectral_subtract(clip: AudioClip, profile: NoiseProfile, params: SubtractParams | None = None) -> AudioClip:
    """Subtract the profile magnitude from every STFT frame, keeping the noisy phase.

    Per bin ``M' = max(M - alpha * N, beta * M)``. Output has exactly the input length.
    """
    params = params or SubtractParams()
    if profile.fft_size != params.fft_size:
        raise ValueError(f"profile fft_size {profile.fft_size} != params fft_size {params.fft_size}")
    if clip.num_samples == 0:
        return clip
    spec = stft(clip.samples, params.fft_size, params.hop)
    gain = subtraction_gain(np.abs(spec), profile.bin_magnitudes, params.over_subtraction, params.spectral_floor)
    out = istft(spec * gain, params.fft_size, params.hop, clip.num_samples)
    return AudioClip(clip.sample_rate, out)


def _window_energies(x: np.ndarray, flen: int) -> tuple[np.ndarray, np.ndarray]:
    """Energy of the ``flen`` window ending at / starting at every sample (zeros outside the clip)."""
    c = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(x.shape[0])
    ending = c[idx + 1] - c[np.maximum(0, idx - flen + 1)]
    starting = c[np.minimum(x.shape[0], idx + flen)] - c[idx]
    return ending, starting


def silence_edges(clip: AudioClip, params: TrimParams | None = None) -> tuple[int, int]:
    """Sample range ``[start, end)`` kept after removing long leading/trailing silence.

    A sample belongs to the leading silent run while every ``frame_s`` RMS
    window ending at it is below the threshold (mirrored for the trailing run),
    so run lengths are measured to the sample rather than to the frame grid.

    Raises:
        AllSilentError: no window reaches the threshold.
    """
    params = params or TrimParams()
    flen = frame_length(clip.sample_rate, params.frame_s)
    n = clip.num_samples
    ending, starting = _window_energies(clip.samples, flen)
    limit = flen * 10.0 ** (params.silence_threshold_db / 10.0)
    loud_end = ending >= limit
    if n == 0 or not loud_end.any():
        raise AllSilentError("clip is entirely below the silence threshold")
    loud_start = starting >= limit
    first = int(np.argmax(loud_end))
    last = int(n - 1 - np.argmax(loud_start[::-1]))
    lead, tail_begin = first, last + 1
    if tail_begin <= lead:
        # a burst too weak sample-by-sample: keep the span both scans agree is loud
        lead, tail_begin = last, first + 1
    min_run = int(round(params.min_silence_s * clip.sample_rate))
    start = lead if lead > min_run else 0
    end = tail_begin if n - tail_begin > min_run else n
    return start, end


def trim_and_pad(clip: AudioClip, params: TrimParams | None = None) -> AudioClip:
    """Drop leading/trailing silent runs longer than ``min_silence_s``, then pad both ends.

    Interior silence is untouched. The padding is ``pad_s`` of digital zeros.
    """
    params = params or TrimParams()
    if clip.num_samples == 0:
        raise AllSilentError("empty clip")
    start, end = silence_edges(clip, params)
    pad = np.zeros(int(round(params.pad_s * clip.sample_rate)))
    return AudioClip(clip.sample_rate, np.concatenate([pad, clip.samples[start:end], pad]))


@dataclass
class EnhancerResult:
    status: str
    reason: str = ""
    returncode: int | None = None
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "enhanced"


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def enhance_external(
    input_path: str | os.PathLike,
    output_path: str | os.PathLike,
    command_template: str,
    timeout: float = 120.0,
    log_path: str | os.PathLike | None = None,
) -> EnhancerResult:
    """Run an external enhancer command on one file.

    The template receives ``{input}`` and ``{output}`` placeholders. Failures
    are reported in the returned status, never raised, so one bad clip cannot
    stop a batch.
    """
    argv = render_command(command_template, input=input_path, output=output_path)
    out = Path(output_path)
    if out.exists():
        out.unlink()
    stderr_sink = open(log_path, "wb") if log_path is not None else subprocess.DEVNULL
    t0 = time.perf_counter()
    try:
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.DEVNULL,
                stderr=stderr_sink,
                start_new_session=True,
            )
        except OSError as exc:
            return EnhancerResult("enhancement_failed", f"cannot start enhancer: {exc}")
        try:
            code = proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            proc.wait()
            return EnhancerResult(
                "enhancement_timeout", f"enhancer exceeded {timeout}s", seconds=time.perf_counter() - t0
            )
    finally:
        if log_path is not None:
            stderr_sink.close()
    elapsed = time.perf_counter() - t0
    if code != 0:
        return EnhancerResult("enhancement_failed", f"enhancer exited with code {code}", code, elapsed)
    if not out.exists():
        return EnhancerResult("enhancement_failed", "enhancer produced no output file", code, elapsed)
    try:
        read_wav(out)
    except AudioError as exc:
        return EnhancerResult("enhancement_failed", f"enhancer output does not decode: {exc}", code, elapsed)
    return EnhancerResult("enhanced", "", code, elapsed)

