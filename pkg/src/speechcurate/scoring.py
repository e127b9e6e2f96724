"""Quality scores: an external scorer line protocol and a deterministic DSP proxy.

External scorer protocol, version 1
-----------------------------------
The scorer is a long-lived subprocess. It receives one absolute WAV path per
line on stdin (UTF-8, ``\\n`` terminated); stdin is closed after the last
path. For every path it writes one JSON object per line to stdout::

    {"path": "/abs/clip.wav", "mos": 3.9, "noi": 4.1, "col": 3.7, "dis": 4.4, "loud": 3.8, "utmos": 2.7}

Only ``path`` and ``mos`` are required; lines may arrive in any order and are
matched back by ``path``. An optional ``"protocol": 1`` field is checked when
present. The environment variable ``SPEECHCURATE_SCORER_PROTOCOL`` is set to the
protocol version for the child. Anything written to stderr is ignored.

Proxy scores are labelled ``scorer_id="proxy-v1"`` and are not comparable to
NISQA or UTMOS values.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import subprocess
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip, frame_length, frame_rms_db

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
SCORE_MIN, SCORE_MAX = 1.0, 5.0

# protocol key -> QualityScore attribute
WIRE_FIELDS = {
    "mos": "mos",
    "noi": "noisiness",
    "col": "coloration",
    "dis": "discontinuity",
    "loud": "loudness",
    "utmos": "utmos",
}


class ScoreRangeError(ValueError):
    pass


@dataclass(frozen=True)
class QualityScore:
    mos: float
    scorer_id: str
    noisiness: float | None = None
    coloration: float | None = None
    discontinuity: float | None = None
    loudness: float | None = None
    utmos: float | None = None

    def __post_init__(self) -> None:
        if not self.scorer_id:
            raise ValueError("scorer_id must be non-empty")
        for name in WIRE_FIELDS.values():
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScoreRangeError(f"{name} is not a number: {value!r}")
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise ScoreRangeError(f"{name}={value} out of range [{SCORE_MIN}, {SCORE_MAX}]")
            object.__setattr__(self, name, float(value))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "QualityScore":
        known = {"mos", "scorer_id", *WIRE_FIELDS.values()}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class ProxyConstants:
    """Fixed mapping constants of the proxy scorer; serialized with the run config."""

    fft_size: int = 1024
    hop: int = 256
    tail_s: float = 0.5
    frame_s: float = 0.01
    activity_threshold_db: float = -55.0
    snr_floor_db: float = -20.0
    snr_cap_db: float = 60.0
    snr_mid_db: float = 15.0
    snr_scale_db: float = 6.0
    clip_level: float = 0.999
    clip_weight: float = 50.0
    silence_weight: float = 1.0
    loudness_mid_db: float = -30.0
    loudness_scale_db: float = 6.0


PROXY_ID = "proxy-v1"


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def _to_scale(u: float) -> float:
    return min(SCORE_MAX, max(SCORE_MIN, 1.0 + 4.0 * u))


def estimate_snr_db(clip: AudioClip, consts: ProxyConstants = ProxyConstants()) -> float | None:
    """SNR of active frames against the noise floor of the clip's tail.

    The per-frame noise floor is the median bin power (rescaled by ``1/ln 2``,
    the median-to-mean ratio of a chi-square-2 variable) times the bin count,
    which tracks broadband noise but ignores tonal or harmonic energy.
    Returns ``None`` when no frame is active.
    """
    x = clip.samples
    n = consts.fft_size
    if x.shape[0] < n:
        x = np.pad(x, (0, n - x.shape[0]))
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    frames = sliding_window_view(x, n)[:: consts.hop]
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    energy = power.sum(axis=1)
    floor = np.median(power, axis=1) / math.log(2.0) * power.shape[1]

    starts = np.arange(frames.shape[0]) * consts.hop
    tail = starts >= x.shape[0] - int(round(consts.tail_s * clip.sample_rate))
    if not tail.any():
        tail[-1] = True
    noise = float(floor[tail].mean())

    rms = np.sqrt(np.mean(frames * frames, axis=1))
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(rms)
    active = level >= consts.activity_threshold_db
    if not active.any():
        return None
    speech = float(energy[active].mean())
    if noise <= 0.0:
        return consts.snr_cap_db
    snr = 10.0 * math.log10(max(speech - noise, 1e-12 * speech) / noise)
    return min(consts.snr_cap_db, max(consts.snr_floor_db, snr))


def proxy_score(clip: AudioClip, consts: ProxyConstants = ProxyConstants()) -> QualityScore:
    """Deterministic pseudo-MOS from estimated SNR, clipping ratio and silence fraction.

    ``mos = 1 + 4 * sigmoid(z)`` with
    ``z = (snr - snr_mid) / snr_scale - clip_weight * clip_ratio - silence_weight * silence_fraction``.
    An all-silent clip scores 1.0 everywhere.
    """
    if clip.num_samples == 0:
        raise ValueError("cannot score an empty clip")
    levels = frame_rms_db(clip.samples, frame_length(clip.sample_rate, consts.frame_s))
    silent = levels < consts.activity_threshold_db
    snr = estimate_snr_db(clip, consts)
    if snr is None or silent.all():
        return QualityScore(1.0, PROXY_ID, noisiness=1.0, discontinuity=1.0, loudness=1.0)

    clip_ratio = float(np.count_nonzero(np.abs(clip.samples) >= consts.clip_level)) / clip.num_samples
    silence_fraction = float(silent.mean())
    snr_term = (snr - consts.snr_mid_db) / consts.snr_scale_db
    z = snr_term - consts.clip_weight * clip_ratio - consts.silence_weight * silence_fraction
    active_level = float(np.mean(levels[~silent]))
    return QualityScore(
        mos=_to_scale(_sigmoid(z)),
        scorer_id=PROXY_ID,
        noisiness=_to_scale(_sigmoid(snr_term)),
        discontinuity=_to_scale(1.0 - min(1.0, consts.clip_weight * clip_ratio)),
        loudness=_to_scale(_sigmoid((active_level - consts.loudness_mid_db) / consts.loudness_scale_db)),
    )


@dataclass
class ScorerBatchResult:
    scores: dict[str, QualityScore] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    attempts: int = 0


def parse_score_line(line: str, scorer_id: str) -> tuple[str, QualityScore]:
    """Parse one protocol result line into ``(path, score)``.

    Raises ValueError (or its subclass ScoreRangeError) on malformed content.
    """
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed result line: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("path"), str):
        raise ValueError("result line lacks a string 'path'")
    path = data["path"]
    if "protocol" in data and data["protocol"] != PROTOCOL_VERSION:
        raise ValueError(f"scorer speaks protocol {data['protocol']!r}, expected {PROTOCOL_VERSION}")
    if data.get("mos") is None:
        raise ValueError("result line lacks 'mos'")
    kwargs = {attr: data[key] for key, attr in WIRE_FIELDS.items() if data.get(key) is not None}
    return path, QualityScore(scorer_id=scorer_id, **kwargs)


def _extract_path(line: str) -> str | None:
    try:
        data = json.loads(line)
    except json.JSONDecodeError:
        return None
    if isinstance(data, dict) and isinstance(data.get("path"), str):
        return data["path"]
    return None


def _run_once(
    paths: list[str], argv: list[str], timeout: float, scorer_id: str, result: ScorerBatchResult
) -> tuple[list[str], str | None]:
    """Feed ``paths`` to one scorer process; return unanswered paths and a crash reason."""
    env = dict(os.environ, SPEECHCURATE_SCORER_PROTOCOL=str(PROTOCOL_VERSION))
    payload = "".join(p + "\n" for p in paths)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            env=env,
        )
    except OSError as exc:
        return list(paths), f"cannot start scorer: {exc}"
    crash = None
    try:
        stdout, _ = proc.communicate(payload, timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        stdout, _ = proc.communicate()
        crash = f"scorer timed out after {timeout}s"
    if crash is None and proc.returncode != 0:
        crash = f"scorer exited with code {proc.returncode}"

    wanted = set(paths)
    answered: set[str] = set()
    for line in (stdout or "").splitlines():
        if not line.strip():
            continue
        try:
            path, score = parse_score_line(line, scorer_id)
        except ValueError as exc:
            path = _extract_path(line)
            if path in wanted and path not in answered:
                answered.add(path)
                reason = f"out of range: {exc}" if isinstance(exc, ScoreRangeError) else str(exc)
                result.failures[path] = reason
            else:
                log.warning("unattributable scorer output line: %.120s", line)
            continue
        if path not in wanted:
            log.warning("scorer returned a path it was not given: %s", path)
            continue
        if path in answered:
            continue
        answered.add(path)
        result.scores[path] = score
    return [p for p in paths if p not in answered], crash


def run_external_scorer(
    paths: Iterable[str | os.PathLike],
    command: str,
    scorer_id: str = "external",
    timeout: float = 600.0,
) -> ScorerBatchResult:
    """Score a batch of files through an external scorer subprocess.

    Malformed or out-of-range results fail only their clip. If the process
    crashes or times out, the unanswered remainder is retried once in a fresh
    process before being marked failed.
    """
    todo = [os.fspath(p) for p in paths]
    result = ScorerBatchResult()
    if not todo:
        return result
    argv = shlex.split(command)
    crash = None
    for attempt in range(2):
        result.attempts = attempt + 1
        todo, crash = _run_once(todo, argv, timeout, scorer_id, result)
        if not todo or crash is None:
            break
        log.warning("%s; retrying %d unscored paths", crash, len(todo))
    for path in todo:
        result.failures[path] = crash or "scorer returned no result"
    return result
