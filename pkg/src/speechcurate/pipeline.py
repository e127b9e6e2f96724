"""Parallel per-clip executor: decode, enhance, subtract, trim, encode, score.

One work unit is one clip carried through every enabled stage by a single
worker. Terminal clip records are appended to a checkpoint log as they
complete; the final manifest is written once, ordered by ``clip_id``, so its
bytes do not depend on scheduling or worker count.

Run config
----------
A JSON object. Paths are resolved relative to the config file. Keys::

    manifest                 input: Commonvoice TSV (.tsv) or run manifest (.jsonl)   [required]
    output_dir               where enhanced/, manifest.jsonl, report.json go          [required]
    audio_dir                root for relative clip paths (default: <manifest dir>/clips if present,
                             else the manifest's directory)
    durations                optional sidecar durations TSV
    worker_count             default 1 (env SPEECHCURATE_WORKERS overrides the default)
    enable_external_enhancer, enable_subtraction, enable_trim, enable_scoring   booleans
    score_original           also score the input audio (default true)
    tail_s                   noise tail length in seconds (0.5)
    subtract                 {fft_size, hop, over_subtraction, spectral_floor}
    trim                     {silence_threshold_db, min_silence_s, pad_s, frame_s}
    proxy                    ProxyConstants overrides
    enhancer_command         template with {input} and {output}
    converter_command        template with {input} and {output}, used for non-WAV inputs
    scorer_command           external scorer command line (default: built-in proxy)
    scorer_id                label stored with external scores
    clip_timeout_s           per-clip enhancer/converter timeout (120)
    scorer_timeout_s         per-batch scorer timeout (600)
    scorer_batch_size        paths per scorer batch (256)
    min_speaker_s            drop speakers with total duration <= this (off by default)
    output_encoding          "pcm16" or "float32"
    checkpoint_path          default <output_dir>/checkpoint.jsonl
    checkpoint_interval      fsync the checkpoint every N clips (50)
    progress_every           progress line to stderr every N clips (100; 0 = off)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import multiprocessing
import os
import sys
import tempfile
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .audio import AudioClip, AudioError, convert_external, read_wav, write_wav
from .curation import (
    ClipRecord,
    Status,
    fill_durations,
    filter_speakers,
    load_manifest,
    read_manifest,
    records_to_jsonl,
    write_manifest,
)
from .enhance import (
    AllSilentError,
    ProfileError,
    SubtractParams,
    TrimParams,
    enhance_external,
    estimate_noise_profile,
    spectral_subtract,
    trim_and_pad,
)
from .scoring import ProxyConstants, proxy_score, run_external_scorer

log = logging.getLogger(__name__)

WORKERS_ENV = "SPEECHCURATE_WORKERS"
CHECKPOINT_VERSION = 1

# Fields that change output bytes; everything else (workers, checkpointing,
# progress) is excluded from the config hash.
_OUTPUT_KEYS = (
    "enable_external_enhancer",
    "enable_subtraction",
    "enable_trim",
    "enable_scoring",
    "score_original",
    "tail_s",
    "subtract",
    "trim",
    "proxy",
    "enhancer_command",
    "converter_command",
    "scorer_command",
    "scorer_id",
    "min_speaker_s",
    "output_encoding",
)


class ConfigError(ValueError):
    pass


class CheckpointMismatchError(RuntimeError):
    pass


def default_worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    audio_dir: Path | None = None
    durations: Path | None = None
    worker_count: int = field(default_factory=default_worker_count)
    enable_external_enhancer: bool = False
    enable_subtraction: bool = True
    enable_trim: bool = True
    enable_scoring: bool = True
    score_original: bool = True
    tail_s: float = 0.5
    subtract: SubtractParams = field(default_factory=SubtractParams)
    trim: TrimParams = field(default_factory=TrimParams)
    proxy: ProxyConstants = field(default_factory=ProxyConstants)
    enhancer_command: str | None = None
    converter_command: str | None = None
    scorer_command: str | None = None
    scorer_id: str = "external"
    clip_timeout_s: float = 120.0
    scorer_timeout_s: float = 600.0
    scorer_batch_size: int = 256
    min_speaker_s: float | None = None
    output_encoding: str = "pcm16"
    checkpoint_path: Path | None = None
    checkpoint_interval: int = 50
    progress_every: int = 100

    def __post_init__(self) -> None:
        self.manifest = Path(self.manifest)
        self.output_dir = Path(self.output_dir)
        if self.audio_dir is None:
            # Commonvoice layout: validated.tsv next to clips/ holding bare file names
            clips = self.manifest.parent / "clips"
            self.audio_dir = clips if clips.is_dir() else self.manifest.parent
        self.audio_dir = Path(self.audio_dir)
        if self.durations is not None:
            self.durations = Path(self.durations)
        if self.checkpoint_path is None:
            self.checkpoint_path = self.output_dir / "checkpoint.jsonl"
        self.checkpoint_path = Path(self.checkpoint_path)
        if isinstance(self.subtract, dict):
            self.subtract = SubtractParams(**self.subtract)
        if isinstance(self.trim, dict):
            self.trim = TrimParams(**self.trim)
        if isinstance(self.proxy, dict):
            self.proxy = ProxyConstants(**self.proxy)

    def validate(self) -> None:
        problems = []
        if not isinstance(self.worker_count, int) or self.worker_count < 1:
            problems.append(f"worker_count must be a positive integer, got {self.worker_count!r}")
        if self.enable_external_enhancer and not self.enhancer_command:
            problems.append("enable_external_enhancer is set but enhancer_command is empty")
        if self.tail_s <= 0:
            problems.append("tail_s must be > 0")
        if self.output_encoding not in ("pcm16", "float32"):
            problems.append(f"output_encoding must be pcm16 or float32, got {self.output_encoding!r}")
        if self.clip_timeout_s <= 0 or self.scorer_timeout_s <= 0:
            problems.append("timeouts must be > 0")
        if self.scorer_batch_size < 1 or self.checkpoint_interval < 1:
            problems.append("scorer_batch_size and checkpoint_interval must be >= 1")
        if not self.manifest.is_file():
            problems.append(f"manifest not found: {self.manifest}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
            elif isinstance(v, Path):
                v = str(v)
            out[f.name] = v
        return out

    def output_hash(self) -> str:
        full = self.to_dict()
        body = json.dumps({k: full[k] for k in _OUTPUT_KEYS}, sort_keys=True)
        return hashlib.sha256(body.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | os.PathLike | None = None) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("manifest", "output_dir"):
            if key not in data:
                raise ConfigError(f"config is missing required key: {key}")
        d = dict(data)
        if base_dir is not None:
            for key in ("manifest", "output_dir", "audio_dir", "durations", "checkpoint_path"):
                if d.get(key) is not None:
                    d[key] = Path(base_dir) / d[key]
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent)


@dataclass
class RunReport:
    clips_total: int = 0
    clips_succeeded: int = 0
    clips_failed_by_reason: dict[str, int] = field(default_factory=dict)
    clips_processed: int = 0
    wall_seconds: float = 0.0
    throughput_files_per_s: float = 0.0
    stage_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def clips_failed(self) -> int:
        return sum(self.clips_failed_by_reason.values())

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["clips_failed"] = self.clips_failed
        return d

    def to_text(self) -> str:
        lines = [
            f"clips total      {self.clips_total}",
            f"succeeded        {self.clips_succeeded}",
            f"failed           {self.clips_failed}",
        ]
        lines += [f"  {k:<22} {v}" for k, v in sorted(self.clips_failed_by_reason.items())]
        lines += [
            f"processed now    {self.clips_processed}",
            f"wall seconds     {self.wall_seconds:.3f}",
            f"throughput       {self.throughput_files_per_s:.2f} files/s",
        ]
        lines += [f"  stage {k:<16} {v:.3f}s" for k, v in sorted(self.stage_seconds.items())]
        return "\n".join(lines) + "\n"


# --- per-clip work ---------------------------------------------------------


def enhance_chain(
    clip: AudioClip,
    *,
    subtraction: bool = True,
    trim: bool = True,
    tail_s: float = 0.5,
    subtract_params: SubtractParams | None = None,
    trim_params: TrimParams | None = None,
    timings: dict[str, float] | None = None,
) -> AudioClip:
    """In-process DSP stages: noise profile + spectral subtraction, then trim/pad."""
    timings = {} if timings is None else timings
    subtract_params = subtract_params or SubtractParams()
    if subtraction:
        t0 = time.perf_counter()
        profile = estimate_noise_profile(clip, tail_s, subtract_params)
        t1 = time.perf_counter()
        clip = spectral_subtract(clip, profile, subtract_params)
        t2 = time.perf_counter()
        timings["noise_profile"] = timings.get("noise_profile", 0.0) + t1 - t0
        timings["subtract"] = timings.get("subtract", 0.0) + t2 - t1
    if trim:
        t0 = time.perf_counter()
        clip = trim_and_pad(clip, trim_params)
        timings["trim"] = timings.get("trim", 0.0) + time.perf_counter() - t0
    return clip


def _resolve(cfg: PipelineConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else cfg.audio_dir / p


def enhanced_relpath(clip_id: str) -> str:
    return f"enhanced/{clip_id}.wav"


def _atomic_write_wav(clip: AudioClip, dest: Path, encoding: str) -> None:
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".wav", dir=dest.parent)
    os.close(fd)
    try:
        write_wav(clip, tmp, encoding)
        os.replace(tmp, dest)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _fail(record: ClipRecord, status: Status, reason: str) -> ClipRecord:
    record.advance(status, reason)
    return record


def process_clip(record: ClipRecord, cfg: PipelineConfig) -> tuple[ClipRecord, dict[str, float]]:
    """Carry one clip through every enabled stage; never raises for per-clip failures.

    The returned record is terminal unless an external scorer still has to
    score it (status ``enhanced``).
    """
    timings: dict[str, float] = defaultdict(float)
    out_dir = cfg.output_dir
    source = _resolve(cfg, record.original_path)

    t0 = time.perf_counter()
    if source.suffix.lower() != ".wav":
        if not cfg.converter_command:
            return _fail(record, Status.ENHANCEMENT_FAILED, f"{source.name}: not WAV and no converter configured"), timings
        converted = out_dir / "converted" / f"{record.clip_id}.wav"
        try:
            convert_external(source, converted, cfg.converter_command, cfg.clip_timeout_s)
        except (AudioError, ValueError) as exc:
            return _fail(record, Status.ENHANCEMENT_FAILED, str(exc)), timings
        source = converted
        timings["convert"] += time.perf_counter() - t0

    stage_input = source
    if cfg.enable_external_enhancer:
        t0 = time.perf_counter()
        ext_out = out_dir / "work" / f"{record.clip_id}.wav"
        res = enhance_external(
            source,
            ext_out,
            cfg.enhancer_command,
            cfg.clip_timeout_s,
            log_path=out_dir / "logs" / f"{record.clip_id}.enhancer.log",
        )
        timings["external_enhancer"] += time.perf_counter() - t0
        if not res.ok:
            return _fail(record, Status(res.status), res.reason), timings
        stage_input = ext_out

    t0 = time.perf_counter()
    try:
        original = read_wav(source)
        clip = original if stage_input == source else read_wav(stage_input)
    except AudioError as exc:
        return _fail(record, Status.ENHANCEMENT_FAILED, str(exc)), timings
    if record.duration_s is None:
        record.duration_s = original.duration_s
    timings["decode"] += time.perf_counter() - t0

    try:
        clip = enhance_chain(
            clip,
            subtraction=cfg.enable_subtraction,
            trim=cfg.enable_trim,
            tail_s=cfg.tail_s,
            subtract_params=cfg.subtract,
            trim_params=cfg.trim,
            timings=timings,
        )
    except AllSilentError as exc:
        return _fail(record, Status.ALL_SILENT, str(exc)), timings
    except ProfileError as exc:
        return _fail(record, Status.ENHANCEMENT_FAILED, str(exc)), timings
    if cfg.enable_external_enhancer:
        (out_dir / "work" / f"{record.clip_id}.wav").unlink(missing_ok=True)

    t0 = time.perf_counter()
    rel = enhanced_relpath(record.clip_id)
    try:
        _atomic_write_wav(clip, out_dir / rel, cfg.output_encoding)
    except AudioError as exc:
        return _fail(record, Status.ENHANCEMENT_FAILED, str(exc)), timings
    timings["encode"] += time.perf_counter() - t0
    record.enhanced_path = rel
    record.enhanced_duration_s = clip.duration_s
    record.advance(Status.ENHANCED)

    if cfg.enable_scoring and not cfg.scorer_command:
        t0 = time.perf_counter()
        # score what was written, so the manifest reflects the stored bytes
        written = read_wav(out_dir / rel)
        try:
            record.score_enhanced = proxy_score(written, cfg.proxy)
            if cfg.score_original:
                record.score_original = proxy_score(original, cfg.proxy)
        except ValueError as exc:
            return _fail(record, Status.SCORE_FAILED, str(exc)), timings
        record.advance(Status.SCORED)
        timings["score"] += time.perf_counter() - t0
    return record, timings


def _is_terminal(record: ClipRecord, cfg: PipelineConfig) -> bool:
    if record.status.is_failure or record.status == Status.SCORED:
        return True
    return record.status == Status.ENHANCED and not cfg.enable_scoring


# worker-process globals, set once per process by the pool initializer
_WORKER_CFG: PipelineConfig | None = None


def _init_worker(cfg: PipelineConfig) -> None:
    global _WORKER_CFG
    _WORKER_CFG = cfg
    logging.getLogger("speechcurate").setLevel(logging.ERROR)


def _work(record: ClipRecord) -> tuple[ClipRecord, dict[str, float]]:
    assert _WORKER_CFG is not None
    return process_clip(record, _WORKER_CFG)


# --- checkpoint ------------------------------------------------------------


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Checkpoint:
    """Append-only log: a header line, then one JSON record per terminal clip."""

    def __init__(self, path: Path, manifest_hash: str, config_hash: str, fsync_every: int = 50):
        self.path = path
        self.header = {"version": CHECKPOINT_VERSION, "manifest_sha256": manifest_hash, "config_sha256": config_hash}
        self.fsync_every = fsync_every
        self._fh = None
        self._since_sync = 0

    def load(self) -> dict[str, ClipRecord]:
        """Read completed records, tolerating a torn final line."""
        lines = self.path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise CheckpointMismatchError(f"{self.path}: empty checkpoint")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CheckpointMismatchError(f"{self.path}: unreadable checkpoint header") from exc
        if header.get("manifest_sha256") != self.header["manifest_sha256"]:
            raise CheckpointMismatchError(
                f"checkpoint {self.path} was written for a different manifest "
                f"({header.get('manifest_sha256', '?')[:12]} != {self.header['manifest_sha256'][:12]})"
            )
        if header.get("config_sha256") != self.header["config_sha256"]:
            raise CheckpointMismatchError(f"checkpoint {self.path} was written with different processing settings")
        done: dict[str, ClipRecord] = {}
        for i, line in enumerate(lines[1:], 2):
            try:
                rec = ClipRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, TypeError, ValueError):
                if i == len(lines):
                    log.warning("dropping torn final checkpoint line")
                    break
                raise CheckpointMismatchError(f"{self.path}:{i}: corrupt checkpoint record") from None
            done[rec.clip_id] = rec
        return done

    def start(self, done: Iterable[ClipRecord] = ()) -> None:
        """Rewrite the log (header plus ``done``) atomically, then open it for appending."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        body = json.dumps(self.header) + "\n" + records_to_jsonl(done)
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(body)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: ClipRecord) -> None:
        assert self._fh is not None
        self._fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        self._fh.flush()
        self._since_sync += 1
        if self._since_sync >= self.fsync_every:
            os.fsync(self._fh.fileno())
            self._since_sync = 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None


# --- driver ----------------------------------------------------------------


def load_input_records(cfg: PipelineConfig) -> list[ClipRecord]:
    if cfg.manifest.suffix.lower() in (".jsonl", ".ndjson"):
        records = read_manifest(cfg.manifest)
        for r in records:
            r.status = Status.PENDING
            r.failure_reason = ""
            r.enhanced_path = None
            r.enhanced_duration_s = None
            r.score_original = r.score_enhanced = None
    else:
        records = load_manifest(cfg.manifest, cfg.durations)
    if cfg.min_speaker_s is not None:
        fill_durations(records, cfg.audio_dir)
        records = filter_speakers(records, cfg.min_speaker_s)
    return sorted(records, key=lambda r: r.clip_id)


def _score_external(pending: list[ClipRecord], cfg: PipelineConfig) -> list[ClipRecord]:
    """Score enhanced (and original) audio through the external scorer, one subprocess per worker."""
    jobs: list[tuple[ClipRecord, str, str]] = []
    for r in pending:
        jobs.append((r, "enhanced", str((cfg.output_dir / r.enhanced_path).resolve())))
        if cfg.score_original:
            src = _resolve(cfg, r.original_path)
            if src.suffix.lower() != ".wav":
                src = cfg.output_dir / "converted" / f"{r.clip_id}.wav"
            jobs.append((r, "original", str(src.resolve())))
    paths = sorted({p for _, _, p in jobs})
    batches = [paths[i : i + cfg.scorer_batch_size] for i in range(0, len(paths), cfg.scorer_batch_size)]
    scores, failures = {}, {}
    with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
        for res in pool.map(
            lambda b: run_external_scorer(b, cfg.scorer_command, cfg.scorer_id, cfg.scorer_timeout_s), batches
        ):
            scores.update(res.scores)
            failures.update(res.failures)
    for r, which, p in jobs:
        if p in scores:
            setattr(r, f"score_{which}", scores[p])
        elif r.status != Status.SCORE_FAILED:
            r.advance(Status.SCORE_FAILED, f"{which}: {failures.get(p, 'no result')}")
    for r in pending:
        if r.status == Status.ENHANCED:
            r.advance(Status.SCORED)
    return pending


def _build_report(records: list[ClipRecord], processed: int, wall: float, stages: dict[str, float]) -> RunReport:
    failed = Counter(r.status.value for r in records if r.status.is_failure)
    ok = sum(1 for r in records if not r.status.is_failure)
    return RunReport(
        clips_total=len(records),
        clips_succeeded=ok,
        clips_failed_by_reason=dict(sorted(failed.items())),
        clips_processed=processed,
        wall_seconds=wall,
        throughput_files_per_s=processed / wall if wall > 0 and processed else 0.0,
        stage_seconds={k: round(v, 6) for k, v in sorted(stages.items())},
    )


def _execute(cfg: PipelineConfig, resume_from: bool) -> RunReport:
    cfg.validate()
    start = time.perf_counter()
    records = load_input_records(cfg)
    manifest_hash = file_sha256(cfg.manifest)
    ckpt = Checkpoint(cfg.checkpoint_path, manifest_hash, cfg.output_hash(), cfg.checkpoint_interval)

    done: dict[str, ClipRecord] = {}
    if resume_from:
        if not cfg.checkpoint_path.exists():
            raise CheckpointMismatchError(f"no checkpoint at {cfg.checkpoint_path}")
        done = ckpt.load()
        unknown = set(done) - {r.clip_id for r in records}
        if unknown:
            raise CheckpointMismatchError(f"checkpoint holds {len(unknown)} clips absent from the manifest")

    (cfg.output_dir / "enhanced").mkdir(parents=True, exist_ok=True)
    if cfg.enable_external_enhancer:
        (cfg.output_dir / "work").mkdir(exist_ok=True)
        (cfg.output_dir / "logs").mkdir(exist_ok=True)
    if cfg.converter_command:
        (cfg.output_dir / "converted").mkdir(exist_ok=True)
    for stale in (cfg.output_dir / "enhanced").glob(".tmp-*"):
        stale.unlink()

    pending = [r for r in records if r.clip_id not in done]
    ckpt.start(done.values())
    stages: dict[str, float] = defaultdict(float)
    awaiting_scores: list[ClipRecord] = []
    processed = 0

    def collect(result: tuple[ClipRecord, dict[str, float]]) -> None:
        nonlocal processed
        rec, timings = result
        for k, v in timings.items():
            stages[k] += v
        if _is_terminal(rec, cfg):
            done[rec.clip_id] = rec
            ckpt.append(rec)
        else:
            awaiting_scores.append(rec)
        processed += 1
        if cfg.progress_every and processed % cfg.progress_every == 0:
            elapsed = time.perf_counter() - start
            print(
                f"[speechcurate] {processed}/{len(pending)} clips, {processed / elapsed:.1f} files/s",
                file=sys.stderr,
                flush=True,
            )

    try:
        if cfg.worker_count == 1 or len(pending) <= 1:
            for r in pending:
                collect(process_clip(r, cfg))
        else:
            ctx = multiprocessing.get_context("fork" if sys.platform.startswith("linux") else "spawn")
            chunk = max(1, min(32, math.ceil(len(pending) / (cfg.worker_count * 8))))
            with ctx.Pool(cfg.worker_count, initializer=_init_worker, initargs=(cfg,)) as pool:
                for result in pool.imap_unordered(_work, pending, chunksize=chunk):
                    collect(result)

        if awaiting_scores:
            t0 = time.perf_counter()
            for r in _score_external(awaiting_scores, cfg):
                done[r.clip_id] = r
                ckpt.append(r)
            stages["score"] += time.perf_counter() - t0
    finally:
        ckpt.close()

    final = [done[r.clip_id] for r in records]
    write_manifest(final, cfg.output_dir / "manifest.jsonl")
    wall = time.perf_counter() - start
    report = _build_report(final, processed, wall, stages)
    (cfg.output_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (cfg.output_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report


def run(cfg: PipelineConfig) -> RunReport:
    """Process every clip of the manifest from scratch."""
    return _execute(cfg, resume_from=False)


def resume(cfg: PipelineConfig, checkpoint: str | os.PathLike | None = None) -> RunReport:
    """Continue an interrupted run from its checkpoint, skipping terminal clips.

    Raises:
        CheckpointMismatchError: the checkpoint belongs to another manifest or settings.
    """
    if checkpoint is not None:
        cfg = dataclasses.replace(cfg, checkpoint_path=Path(checkpoint))
    return _execute(cfg, resume_from=True)
