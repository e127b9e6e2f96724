"""Corpus manifests, speaker filtering, threshold curves, subset selection and score statistics.

All selections are deterministic: ties are broken by ``clip_id`` ascending and
hours are summed with :func:`math.fsum`, so results do not depend on record
order.
"""

from __future__ import annotations

import bisect
import csv
import enum
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .audio import wav_duration
from .scoring import QualityScore

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


class MetricMissingError(ValueError):
    pass


class InsufficientHoursError(ValueError):
    pass


class Status(str, enum.Enum):
    PENDING = "pending"
    ENHANCED = "enhanced"
    ENHANCEMENT_FAILED = "enhancement_failed"
    ENHANCEMENT_TIMEOUT = "enhancement_timeout"
    ALL_SILENT = "all_silent"
    SCORED = "scored"
    SCORE_FAILED = "score_failed"

    @property
    def stage(self) -> int:
        return _STAGE[self]

    @property
    def is_failure(self) -> bool:
        return self in FAILURE_STATUSES


_STAGE = {
    Status.PENDING: 0,
    Status.ENHANCEMENT_FAILED: 1,
    Status.ENHANCEMENT_TIMEOUT: 1,
    Status.ALL_SILENT: 1,
    Status.ENHANCED: 1,
    Status.SCORED: 2,
    Status.SCORE_FAILED: 2,
}
FAILURE_STATUSES = frozenset(
    {Status.ENHANCEMENT_FAILED, Status.ENHANCEMENT_TIMEOUT, Status.ALL_SILENT, Status.SCORE_FAILED}
)

SEXES = ("female", "male", "unknown")
AGE_BANDS = (
    "teens",
    "twenties",
    "thirties",
    "fourties",
    "fifties",
    "sixties",
    "seventies",
    "eighties",
    "nineties",
    "unknown",
)


def normalize_sex(value: str | None) -> str:
    v = (value or "").strip().lower()
    if v.startswith("female") or v == "f":
        return "female"
    if v.startswith("male") or v == "m":
        return "male"
    return "unknown"


def normalize_age(value: str | None) -> str:
    v = (value or "").strip().lower()
    if v == "forties":
        v = "fourties"
    return v if v in AGE_BANDS else "unknown"


@dataclass
class ClipRecord:
    clip_id: str
    speaker_id: str
    original_path: str
    duration_s: float | None = None
    enhanced_path: str | None = None
    sex: str = "unknown"
    age_band: str = "unknown"
    sentence: str = ""
    score_original: QualityScore | None = None
    score_enhanced: QualityScore | None = None
    status: Status = Status.PENDING
    failure_reason: str = ""
    enhanced_duration_s: float | None = None

    def __post_init__(self) -> None:
        self.status = Status(self.status)
        if self.duration_s is not None and not self.duration_s > 0:
            raise ManifestError(f"{self.clip_id}: duration_s must be > 0, got {self.duration_s}")

    def advance(self, status: Status | str, reason: str = "") -> None:
        """Move to a later pipeline status; going backwards is an error."""
        status = Status(status)
        if status.stage < self.status.stage or (self.status.is_failure and status != self.status):
            raise ValueError(f"{self.clip_id}: illegal status transition {self.status.value} -> {status.value}")
        self.status = status
        self.failure_reason = reason

    @property
    def active_path(self) -> str:
        return self.enhanced_path or self.original_path

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "speaker_id": self.speaker_id,
            "original_path": self.original_path,
            "enhanced_path": self.enhanced_path,
            "duration_s": self.duration_s,
            "enhanced_duration_s": self.enhanced_duration_s,
            "sex": self.sex,
            "age_band": self.age_band,
            "sentence": self.sentence,
            "score_original": self.score_original.to_dict() if self.score_original else None,
            "score_enhanced": self.score_enhanced.to_dict() if self.score_enhanced else None,
            "status": self.status.value,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClipRecord":
        d = dict(data)
        for key in ("score_original", "score_enhanced"):
            if d.get(key) is not None:
                d[key] = QualityScore.from_dict(d[key])
        return cls(**d)


def records_to_jsonl(records: Iterable[ClipRecord]) -> str:
    ordered = sorted(records, key=lambda r: r.clip_id)
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in ordered)


def write_manifest(records: Iterable[ClipRecord], path: str | os.PathLike) -> Path:
    """Write records as JSON lines ordered by ``clip_id``, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(records_to_jsonl(records), encoding="utf-8")
    os.replace(tmp, path)
    return path


def read_manifest(path: str | os.PathLike) -> list[ClipRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ClipRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad record: {exc}") from exc
    _check_unique(records)
    return records


def _check_unique(records: Sequence[ClipRecord]) -> None:
    seen: set[str] = set()
    for r in records:
        if r.clip_id in seen:
            raise ManifestError(f"duplicate clip_id {r.clip_id!r}")
        seen.add(r.clip_id)


def load_durations(path: str | os.PathLike) -> dict[str, float]:
    """Read a sidecar durations TSV.

    Accepts Commonvoice ``clip_durations.tsv`` (``clip``, ``duration[ms]``) or
    a ``clip``/``duration_s`` pair. Keys are clip ids without extension.
    """
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        cols = reader.fieldnames or []
        if "clip" not in cols:
            raise ManifestError(f"{path}: missing column: clip")
        if "duration[ms]" in cols:
            key, scale = "duration[ms]", 1e-3
        elif "duration_s" in cols:
            key, scale = "duration_s", 1.0
        else:
            raise ManifestError(f"{path}: missing column: duration[ms] or duration_s")
        for row in reader:
            out[Path(row["clip"]).stem] = float(row[key]) * scale
    return out


REQUIRED_TSV_COLUMNS = ("client_id", "path", "sentence")


def load_manifest(
    tsv_path: str | os.PathLike,
    durations: Mapping[str, float] | str | os.PathLike | None = None,
) -> list[ClipRecord]:
    """Read a Commonvoice-style TSV into pending records.

    ``clip_id`` is the file stem of ``path``. Unknown ``gender``/``age`` values
    map to ``"unknown"``. Durations come from ``durations`` (mapping or sidecar
    file) when given; otherwise they stay unset until :func:`fill_durations`.
    """
    if durations is not None and not isinstance(durations, Mapping):
        durations = load_durations(durations)
    records: list[ClipRecord] = []
    seen_paths: set[str] = set()
    with open(tsv_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for col in REQUIRED_TSV_COLUMNS:
            if col not in (reader.fieldnames or []):
                raise ManifestError(f"missing column: {col}")
        for row in reader:
            path = row["path"]
            if path in seen_paths:
                raise ManifestError(f"duplicate clip path: {path}")
            seen_paths.add(path)
            clip_id = Path(path).stem
            dur = durations.get(clip_id) if durations else None
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    speaker_id=row["client_id"],
                    original_path=path,
                    duration_s=dur,
                    sex=normalize_sex(row.get("gender")),
                    age_band=normalize_age(row.get("age")),
                    sentence=row["sentence"] or "",
                )
            )
    _check_unique(records)
    return records


def fill_durations(records: Iterable[ClipRecord], audio_dir: str | os.PathLike) -> None:
    """Set missing durations from WAV headers under ``audio_dir``."""
    root = Path(audio_dir)
    for r in records:
        if r.duration_s is None:
            path = Path(r.original_path)
            r.duration_s = wav_duration(path if path.is_absolute() else root / path)


def filter_speakers(records: Sequence[ClipRecord], min_total_s: float = 1400.0) -> list[ClipRecord]:
    """Keep the clips of speakers whose summed duration is strictly above ``min_total_s``."""
    totals: dict[str, list[float]] = defaultdict(list)
    for r in records:
        if r.duration_s is None:
            raise MetricMissingError(f"{r.clip_id}: duration unknown; fill durations first")
        totals[r.speaker_id].append(r.duration_s)
    keep = {spk for spk, durs in totals.items() if math.fsum(durs) > min_total_s}
    return [r for r in records if r.speaker_id in keep]


# --- metrics ---------------------------------------------------------------

METRIC_ALIASES = {
    "mos": "mos",
    "nisqa_mos": "mos",
    "noisiness": "noisiness",
    "nisqa_noi": "noisiness",
    "coloration": "coloration",
    "nisqa_col": "coloration",
    "discontinuity": "discontinuity",
    "nisqa_dis": "discontinuity",
    "loudness": "loudness",
    "nisqa_loud": "loudness",
    "utmos": "utmos",
}
SOURCES = ("enhanced", "original")


def resolve_metric(metric: str) -> str:
    try:
        return METRIC_ALIASES[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRIC_ALIASES)}") from None


def metric_value(record: ClipRecord, metric: str, source: str = "enhanced") -> float | None:
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    score = record.score_enhanced if source == "enhanced" else record.score_original
    if score is None:
        return None
    return getattr(score, resolve_metric(metric))


def _scored(records: Sequence[ClipRecord], metric: str, source: str) -> list[tuple[float, ClipRecord]]:
    pairs, missing = [], 0
    for r in records:
        v = metric_value(r, metric, source)
        if v is None or r.duration_s is None:
            missing += 1
        else:
            pairs.append((v, r))
    if missing:
        raise MetricMissingError(f"{missing} records lack a {source} {metric} score or duration")
    return pairs


def _hours(records: Iterable[ClipRecord]) -> float:
    return math.fsum(r.duration_s for r in records) / 3600.0


@dataclass
class ThresholdCurve:
    metric: str
    points: list[tuple[float, float]]
    source: str = "enhanced"

    def __post_init__(self) -> None:
        ts = [t for t, _ in self.points]
        hs = [h for _, h in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("curve thresholds must be strictly increasing")
        if any(b > a for a, b in zip(hs, hs[1:])):
            raise ValueError("curve hours must be non-increasing")

    def hours_at(self, threshold: float) -> float:
        for t, h in self.points:
            if t == threshold:
                return h
        raise KeyError(threshold)


def threshold_curve(
    records: Sequence[ClipRecord], metric: str = "mos", grid: Sequence[float] = (), source: str = "enhanced"
) -> ThresholdCurve:
    """Hours of audio with ``metric >= t`` for every ``t`` in ``grid``."""
    grid = [float(t) for t in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    pairs = sorted(_scored(records, metric, source), key=lambda p: p[0])
    values = [v for v, _ in pairs]
    durations = [r.duration_s for _, r in pairs]
    points = []
    for t in grid:
        k = bisect.bisect_left(values, t)
        points.append((t, math.fsum(durations[k:]) / 3600.0))
    return ThresholdCurve(resolve_metric(metric), points, source)


@dataclass
class SubsetSpec:
    mode: str
    metric: str
    threshold: float | None = None
    target_hours: float | None = None
    source: str = "enhanced"
    realized_hours: float = 0.0
    realized_threshold: float | None = None
    clip_count: int = 0
    clip_ids: list[str] = field(default_factory=list)
    name: str = ""

    def summary(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "clip_ids"}
        return d

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubsetSpec":
        return cls(**data)


def select_by_threshold(
    records: Sequence[ClipRecord], metric: str = "mos", threshold: float = 1.0, source: str = "enhanced"
) -> tuple[SubsetSpec, list[ClipRecord]]:
    """Select every record whose ``metric >= threshold``; output ordered by ``clip_id``."""
    chosen = sorted(
        (r for v, r in _scored(records, metric, source) if v >= threshold), key=lambda r: r.clip_id
    )
    spec = SubsetSpec(
        mode="by_threshold",
        metric=resolve_metric(metric),
        threshold=float(threshold),
        source=source,
        realized_hours=_hours(chosen),
        realized_threshold=min((metric_value(r, metric, source) for r in chosen), default=None),
        clip_count=len(chosen),
        clip_ids=[r.clip_id for r in chosen],
    )
    return spec, chosen


def select_by_hours(
    records: Sequence[ClipRecord], metric: str = "mos", target_hours: float = 1.0, source: str = "enhanced"
) -> tuple[SubsetSpec, list[ClipRecord]]:
    """Take the best-scored clips until their total reaches ``target_hours``.

    Records are ranked by metric descending, then ``clip_id`` ascending; the
    shortest prefix whose hours are at least the target is selected.
    """
    if not target_hours > 0:
        raise ValueError("target_hours must be > 0")
    ranked = sorted(_scored(records, metric, source), key=lambda p: (-p[0], p[1].clip_id))
    durations = [r.duration_s for _, r in ranked]
    available = math.fsum(durations) / 3600.0
    if available < target_hours:
        raise InsufficientHoursError(f"corpus has {available:.3f} h, fewer than the {target_hours} h requested")
    # prefix hours are monotone in length, so bisect on the same fsum used for realized_hours
    lo, hi = 1, len(ranked)
    while lo < hi:
        mid = (lo + hi) // 2
        if math.fsum(durations[:mid]) / 3600.0 >= target_hours:
            hi = mid
        else:
            lo = mid + 1
    prefix = ranked[:lo]
    chosen = sorted((r for _, r in prefix), key=lambda r: r.clip_id)
    spec = SubsetSpec(
        mode="by_hours",
        metric=resolve_metric(metric),
        target_hours=float(target_hours),
        source=source,
        realized_hours=_hours(chosen),
        realized_threshold=prefix[-1][0] if prefix else None,
        clip_count=len(chosen),
        clip_ids=[r.clip_id for r in chosen],
    )
    return spec, chosen


def control_subset(
    enhanced_selection: Sequence[ClipRecord] | Sequence[str],
    records: Sequence[ClipRecord],
    audio_dir: str | os.PathLike | None = None,
) -> list[ClipRecord]:
    """Non-enhanced counterparts of an enhanced selection.

    Returned records keep their ids and durations but have ``enhanced_path``
    cleared, so :attr:`ClipRecord.active_path` points at the original audio.
    With ``audio_dir`` the original files must also exist on disk.
    """
    ids = [s if isinstance(s, str) else s.clip_id for s in enhanced_selection]
    by_id = {r.clip_id: r for r in records}
    missing = []
    for cid in ids:
        r = by_id.get(cid)
        if r is None or not r.original_path:
            missing.append(cid)
        elif audio_dir is not None:
            p = Path(r.original_path)
            if not (p if p.is_absolute() else Path(audio_dir) / p).exists():
                missing.append(cid)
    if missing:
        raise ManifestError(f"missing original audio for clip_ids: {', '.join(missing)}")
    return [replace(by_id[cid], enhanced_path=None) for cid in sorted(ids)]


# --- statistics ------------------------------------------------------------

BIN_EDGES = (1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass
class StatsRow:
    label: str
    count: int
    mean_original: float
    mean_enhanced: float

    @property
    def diff(self) -> float:
        return self.mean_enhanced - self.mean_original


@dataclass
class StatsTable:
    key: str
    rows: list[StatsRow]
    excluded: int = 0


def _paired(records: Iterable[ClipRecord], metric: str) -> tuple[list[tuple[ClipRecord, float, float]], int]:
    out, excluded = [], 0
    for r in records:
        o = metric_value(r, metric, "original")
        e = metric_value(r, metric, "enhanced")
        if o is None or e is None:
            excluded += 1
        else:
            out.append((r, o, e))
    if excluded:
        log.warning("%d records lack an original or enhanced %s score and were excluded", excluded, metric)
    return out, excluded


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan


def _row(label: str, pairs: Sequence[tuple[ClipRecord, float, float]]) -> StatsRow:
    return StatsRow(label, len(pairs), _mean([o for _, o, _ in pairs]), _mean([e for _, _, e in pairs]))


def mos_bin(score: float) -> int:
    """Index of the unit bin ``[k, k+1)`` holding ``score``; 5.0 falls in the last bin."""
    return min(max(int(math.floor(score)) - 1, 0), 3)


def bin_stats(records: Iterable[ClipRecord], metric: str = "mos") -> StatsTable:
    """Mean original/enhanced score per unit bin of the ORIGINAL score."""
    pairs, excluded = _paired(records, metric)
    groups: list[list] = [[] for _ in range(4)]
    for p in pairs:
        groups[mos_bin(p[1])].append(p)
    rows = [_row(f"{k + 1}-{k + 2}", g) for k, g in enumerate(groups)]
    return StatsTable("mos_bin", rows, excluded)


def group_stats(records: Iterable[ClipRecord], key: str = "sex", metric: str = "mos") -> StatsTable:
    """Mean original/enhanced score per demographic group (``sex`` or ``age_band``)."""
    if key not in ("sex", "age_band"):
        raise ValueError(f"key must be 'sex' or 'age_band', got {key!r}")
    pairs, excluded = _paired(records, metric)
    groups: dict[str, list] = defaultdict(list)
    for p in pairs:
        groups[getattr(p[0], key)].append(p)
    rows = [_row(label, groups[label]) for label in sorted(groups)]
    return StatsTable(key, rows, excluded)


@dataclass
class MeanDelta:
    mean_original: float
    mean_enhanced: float
    count: int
    excluded: int = 0

    @property
    def diff(self) -> float:
        return self.mean_enhanced - self.mean_original


def mean_delta(records: Iterable[ClipRecord], metric: str = "mos") -> MeanDelta:
    pairs, excluded = _paired(records, metric)
    row = _row("all", pairs)
    return MeanDelta(row.mean_original, row.mean_enhanced, row.count, excluded)


@dataclass
class Histogram:
    edges: list[float]
    counts: list[int]
    source: str
    metric: str

    def rows(self) -> list[tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], c) for i, c in enumerate(self.counts)]


def histogram_edges(bin_width: float) -> list[float]:
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    span = 4.0 / bin_width
    n = int(round(span)) if abs(span - round(span)) < 1e-9 else int(math.ceil(span))
    # rounded so decimal widths give decimal edges (1 + 3 * 0.1 is not 1.3)
    edges = [round(1.0 + i * bin_width, 12) for i in range(n)]
    return edges + [5.0]


def score_histogram(
    records: Iterable[ClipRecord], which: str = "enhanced", bin_width: float = 0.1, metric: str = "mos"
) -> Histogram:
    """Counts per bin ``[lo, hi)`` over ``[1, 5]``; the last bin is closed. Unscored records are skipped."""
    edges = histogram_edges(bin_width)
    counts = [0] * (len(edges) - 1)
    for r in records:
        v = metric_value(r, metric, which)
        if v is None:
            continue
        i = bisect.bisect_right(edges, v) - 1
        counts[min(max(i, 0), len(counts) - 1)] += 1
    return Histogram(edges, counts, which, resolve_metric(metric))


# --- writers ---------------------------------------------------------------


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_curve_csv(curve: ThresholdCurve, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "hours"])
        for t, h in curve.points:
            w.writerow([_fmt(t), _fmt(h)])


def write_stats_csv(table: StatsTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([table.key, "count", "mean_original", "mean_enhanced", "diff"])
        for row in table.rows:
            diff = row.diff if row.count else None
            w.writerow([row.label, row.count, _fmt(row.mean_original), _fmt(row.mean_enhanced), _fmt(diff)])


def write_histogram_csv(hist: Histogram, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in hist.rows():
            w.writerow([_fmt(lo), _fmt(hi), c])


def write_subset_tsv(records: Iterable[ClipRecord], path: str | os.PathLike) -> None:
    """Headerless ``path<TAB>speaker<TAB>sentence`` rows, ordered by ``clip_id``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for r in sorted(records, key=lambda r: r.clip_id):
            sentence = r.sentence.replace("\t", " ").replace("\n", " ")
            fh.write(f"{r.active_path}\t{r.speaker_id}\t{sentence}\n")
