"""``speechcurate`` command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from . import curation as cur
from .audio import AudioError, read_wav, write_wav
from .enhance import AllSilentError, EnhanceError, SubtractParams, TrimParams, enhance_external
from .pipeline import CheckpointMismatchError, ConfigError, PipelineConfig, enhance_chain, resume, run
from .scoring import ProxyConstants, proxy_score, run_external_scorer

log = logging.getLogger("speechcurate")

PRESET_THRESHOLDS = (2.0, 4.0, 4.4, 4.6)
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        print(f"hint: run '{self.prog} --help' for the list of flags", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _score_value(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid score value: {text!r}") from None
    if not 1.0 <= v <= 5.0:
        raise argparse.ArgumentTypeError(f"score {v} outside [1, 5]")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}") from None
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _grid(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("grid must be non-empty and strictly increasing")
    return values


def _metric(text: str) -> str:
    if text not in cur.METRIC_ALIASES:
        raise argparse.ArgumentTypeError(f"unknown metric {text!r}; choose from {', '.join(sorted(cur.METRIC_ALIASES))}")
    return text


def _tag(x: float) -> str:
    return f"{x:g}".replace(".", "p")


def scored_records(records: Sequence[cur.ClipRecord], metric: str, source: str) -> list[cur.ClipRecord]:
    """Records carrying ``metric`` for ``source`` and a duration; the CLI's input to curation calls."""
    return [r for r in records if cur.metric_value(r, metric, source) is not None and r.duration_s is not None]


def _load_scored(args: argparse.Namespace, source: str | None = None) -> list[cur.ClipRecord]:
    records = cur.read_manifest(args.manifest)
    usable = scored_records(records, args.metric, source or args.source)
    skipped = len(records) - len(usable)
    if skipped:
        print(f"note: {skipped} of {len(records)} records lack a {source or args.source} {args.metric} score and are ignored", file=sys.stderr)
    return usable


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# --- subcommands -------------------------------------------------------------


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config)
    if args.manifest:
        cfg.manifest = Path(args.manifest)
    if args.out:
        cfg.output_dir = Path(args.out)
        cfg.checkpoint_path = cfg.output_dir / "checkpoint.jsonl"
    if args.workers is not None:
        cfg.worker_count = args.workers
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    report = run(_pipeline_config(args))
    sys.stdout.write(report.to_text())
    return 0


def cmd_resume(args: argparse.Namespace) -> int:
    report = resume(_pipeline_config(args), args.checkpoint)
    sys.stdout.write(report.to_text())
    return 0


def cmd_enhance_one(args: argparse.Namespace) -> int:
    out = _out(args)
    src = Path(args.input)
    dest = out / f"{src.stem}.wav"
    if args.enhancer_cmd:
        work = out / f"{src.stem}.external.wav"
        res = enhance_external(src, work, args.enhancer_cmd, args.timeout, log_path=out / f"{src.stem}.enhancer.log")
        if not res.ok:
            print(f"error: {src}: {res.status}: {res.reason}", file=sys.stderr)
            return EXIT_RUNTIME
        src = work
    clip = read_wav(src)
    sub = SubtractParams(args.fft_size, args.hop, args.alpha, args.beta)
    trim = TrimParams(args.threshold_db, args.min_silence_s, args.pad_s)
    try:
        clip = enhance_chain(
            clip,
            subtraction=not args.no_subtraction,
            trim=not args.no_trim,
            tail_s=args.tail_s,
            subtract_params=sub,
            trim_params=trim,
        )
    except AllSilentError as exc:
        print(f"error: {args.input}: all_silent: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_wav(clip, dest, args.encoding)
    summary = {"input": str(args.input), "output": str(dest), "duration_s": clip.duration_s}
    if args.score:
        summary["proxy_score"] = proxy_score(read_wav(dest)).to_dict()
    _emit(summary)
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    out = _out(args)
    paths = [str(Path(p).resolve()) for p in args.paths]
    rows = []
    if args.scorer_cmd:
        res = run_external_scorer(paths, args.scorer_cmd, args.scorer_id, args.timeout)
        for p in paths:
            if p in res.scores:
                rows.append({"path": p, "status": "scored", **res.scores[p].to_dict()})
            else:
                rows.append({"path": p, "status": "score_failed", "reason": res.failures.get(p, "no result")})
    else:
        consts = ProxyConstants()
        for p in paths:
            try:
                rows.append({"path": p, "status": "scored", **proxy_score(read_wav(p), consts).to_dict()})
            except (AudioError, ValueError) as exc:
                rows.append({"path": p, "status": "score_failed", "reason": str(exc)})
    with open(out / "scores.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    failed = sum(1 for r in rows if r["status"] != "scored")
    _emit({"scored": len(rows) - failed, "score_failed": failed, "output": str(out / "scores.jsonl")})
    return 0


def cmd_curve(args: argparse.Namespace) -> int:
    out = _out(args)
    records = _load_scored(args)
    curve = cur.threshold_curve(records, args.metric, args.grid, args.source)
    dest = out / f"curve_{curve.metric}_{args.source}.csv"
    cur.write_curve_csv(curve, dest)
    if args.svg:
        from .plots import save_curves_svg

        save_curves_svg([curve], dest.with_suffix(".svg"))
    _emit({"output": str(dest), "points": curve.points})
    return 0


def _write_subset(out: Path, name: str, spec: cur.SubsetSpec, chosen: list[cur.ClipRecord]) -> None:
    spec.name = name
    cur.write_subset_tsv(chosen, out / f"{name}.tsv")
    (out / f"{name}.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n", encoding="utf-8")


def cmd_select(args: argparse.Namespace) -> int:
    out = _out(args)
    records = _load_scored(args)
    if args.min_speaker_seconds is not None:
        records = cur.filter_speakers(records, args.min_speaker_seconds)
    metric = cur.resolve_metric(args.metric)
    results: list[cur.SubsetSpec] = []
    if args.paper_subsets:
        for t in PRESET_THRESHOLDS:
            spec, chosen = cur.select_by_threshold(records, args.metric, t, args.source)
            _write_subset(out, f"subset_{metric}_ge_{_tag(t)}", spec, chosen)
            results.append(spec)
        with open(out / "preset_subsets.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "clips", "hours"])
            for spec in results:
                w.writerow([repr(spec.threshold), spec.clip_count, repr(spec.realized_hours)])
    elif args.threshold is not None:
        spec, chosen = cur.select_by_threshold(records, args.metric, args.threshold, args.source)
        _write_subset(out, f"subset_{metric}_ge_{_tag(args.threshold)}", spec, chosen)
        results.append(spec)
    else:
        spec, chosen = cur.select_by_hours(records, args.metric, args.hours, args.source)
        _write_subset(out, f"subset_{metric}_{_tag(args.hours)}h", spec, chosen)
        results.append(spec)
    for spec in results:
        _emit(spec.summary())
    return 0


def cmd_control(args: argparse.Namespace) -> int:
    out = _out(args)
    records = cur.read_manifest(args.manifest)
    spec = cur.SubsetSpec.from_dict(json.loads(Path(args.selection).read_text(encoding="utf-8")))
    control = cur.control_subset(spec.clip_ids, records, args.audio_dir)
    name = f"control_{spec.name or Path(args.selection).stem}"
    cur.write_subset_tsv(control, out / f"{name}.tsv")
    summary = {
        "name": name,
        "clip_count": len(control),
        "hours": math.fsum(r.duration_s or 0.0 for r in control) / 3600.0,
        "clip_ids": [r.clip_id for r in control],
    }
    (out / f"{name}.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    _emit({k: v for k, v in summary.items() if k != "clip_ids"})
    return 0


def _write_all_stats(records: list[cur.ClipRecord], metric: str, out: Path) -> dict:
    bins = cur.bin_stats(records, metric)
    cur.write_stats_csv(bins, out / "stats_bins.csv")
    for key in ("sex", "age_band"):
        cur.write_stats_csv(cur.group_stats(records, key, metric), out / f"stats_{key}.csv")
    md = cur.mean_delta(records, metric)
    with open(out / "mean_delta.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["count", "mean_original", "mean_enhanced", "diff"])
        w.writerow([md.count, repr(md.mean_original), repr(md.mean_enhanced), repr(md.diff)])
    return {"count": md.count, "excluded": md.excluded, "mean_original": md.mean_original, "mean_enhanced": md.mean_enhanced, "diff": md.diff}


def cmd_stats(args: argparse.Namespace) -> int:
    out = _out(args)
    records = cur.read_manifest(args.manifest)
    _emit(_write_all_stats(records, args.metric, out))
    return 0


def cmd_histogram(args: argparse.Namespace) -> int:
    out = _out(args)
    records = cur.read_manifest(args.manifest)
    sources = cur.SOURCES if args.which == "both" else (args.which,)
    hists = []
    for src in sources:
        hist = cur.score_histogram(records, src, args.bin_width, args.metric)
        cur.write_histogram_csv(hist, out / f"histogram_{src}_{hist.metric}.csv")
        hists.append(hist)
    if args.svg:
        from .plots import save_histograms_svg

        save_histograms_svg(hists, out / f"histogram_{hists[0].metric}.svg")
    _emit({"outputs": [str(out / f"histogram_{h.source}_{h.metric}.csv") for h in hists]})
    return 0


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def _num(x: float, digits: int = 3) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def format_tts_scores(path: str | Path) -> str:
    """Render an externally produced TTS evaluation CSV as a markdown table.

    Expected columns: ``system`` plus any metric columns; a ``<metric>_ci``
    column is shown as ``value ± ci`` next to its metric.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = reader.fieldnames or []
    if "system" not in cols:
        raise ValueError(f"{path}: missing column: system")
    metrics = [c for c in cols if c != "system" and not c.endswith("_ci")]
    body = []
    for row in rows:
        cells = [row["system"]]
        for m in metrics:
            ci = row.get(f"{m}_ci")
            cells.append(f"{row[m]} ± {ci}" if ci else row[m])
        body.append(cells)
    return _md_table(["system", *metrics], body)


def cmd_report(args: argparse.Namespace) -> int:
    out = _out(args)
    records = cur.read_manifest(args.manifest)
    stats = _write_all_stats(records, args.metric, out)
    parts = ["# Corpus quality report", ""]
    status_counts: dict[str, int] = {}
    for r in records:
        status_counts[r.status.value] = status_counts.get(r.status.value, 0) + 1
    parts += ["## Clip status", "", _md_table(["status", "clips"], [[k, str(v)] for k, v in sorted(status_counts.items())]), ""]
    parts += [
        "## Mean score",
        "",
        f"{args.metric}: {_num(stats['mean_original'])} (original) -> {_num(stats['mean_enhanced'])} (enhanced), "
        f"diff {_num(stats['diff'])} over {stats['count']} clips",
        "",
    ]
    bins = cur.bin_stats(records, args.metric)
    parts += ["## By original score bin", "", _md_table(
        ["bin", "clips", "original", "enhanced", "diff"],
        [[r.label, str(r.count), _num(r.mean_original, 2), _num(r.mean_enhanced, 2), _num(r.diff if r.count else None, 2)] for r in bins.rows],
    ), ""]
    for key in ("sex", "age_band"):
        table = cur.group_stats(records, key, args.metric)
        parts += [f"## By {key}", "", _md_table(
            [key, "clips", "original", "enhanced", "diff"],
            [[r.label, str(r.count), _num(r.mean_original), _num(r.mean_enhanced), _num(r.diff)] for r in table.rows],
        ), ""]
    scored = scored_records(records, args.metric, "enhanced")
    curve = cur.threshold_curve(scored, args.metric, args.grid, "enhanced")
    cur.write_curve_csv(curve, out / f"curve_{curve.metric}_enhanced.csv")
    parts += ["## Hours above threshold (enhanced)", "", _md_table(
        ["threshold", "hours"], [[f"{t:g}", _num(h)] for t, h in curve.points]
    ), ""]
    if args.tts_scores:
        parts += ["## TTS evaluation (external scores)", "", format_tts_scores(args.tts_scores), ""]
    parts.append("Scores labelled proxy-v1 come from the built-in DSP proxy and are not NISQA/UTMOS values.")
    (out / "report.md").write_text("\n".join(parts) + "\n", encoding="utf-8")
    _emit({"output": str(out / "report.md")})
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="speechcurate", description="Enhance, score and curate crowdsourced speech corpora.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_, description=help_)

    for name, help_ in (("run", "run the enhancement pipeline"), ("resume", "resume an interrupted pipeline run")):
        p = add(name, help_)
        p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--manifest", help="override the config's input manifest")
        p.add_argument("--out", help="override the config's output directory")
        p.add_argument("--workers", type=int, help="worker processes (default: config, then $SPEECHCURATE_WORKERS, then 1)")
        if name == "resume":
            p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.jsonl)")

    p = add("enhance-one", "enhance a single WAV file")
    p.add_argument("input", help="input WAV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--enhancer-cmd", help="external enhancer template with {input} and {output}")
    p.add_argument("--timeout", type=_positive, default=120.0, help="enhancer timeout in seconds")
    p.add_argument("--no-subtraction", action="store_true", help="skip noise-profile spectral subtraction")
    p.add_argument("--no-trim", action="store_true", help="skip silence trimming and padding")
    p.add_argument("--tail-s", type=_positive, default=0.5, help="noise tail length in seconds")
    p.add_argument("--fft-size", type=int, default=2048, help="STFT size")
    p.add_argument("--hop", type=int, default=None, help="STFT hop (default fft-size/4)")
    p.add_argument("--alpha", type=float, default=1.0, help="over-subtraction factor")
    p.add_argument("--beta", type=float, default=0.02, help="spectral floor")
    p.add_argument("--threshold-db", type=float, default=-55.0, help="silence threshold in dBFS")
    p.add_argument("--min-silence-s", type=_positive, default=0.1, help="trim edge silences longer than this")
    p.add_argument("--pad-s", type=float, default=0.1, help="padding added at both ends")
    p.add_argument("--encoding", choices=("pcm16", "float32"), default="pcm16", help="output sample format")
    p.add_argument("--score", action="store_true", help="also print the proxy score of the output")

    p = add("score", "score WAV files with the proxy or an external scorer")
    p.add_argument("paths", nargs="+", help="WAV files")
    p.add_argument("--out", required=True, help="output directory (scores.jsonl)")
    p.add_argument("--scorer-cmd", help="external scorer command (line protocol v1)")
    p.add_argument("--scorer-id", default="external", help="label stored with external scores")
    p.add_argument("--timeout", type=_positive, default=600.0, help="scorer timeout in seconds")

    def manifest_args(p: argparse.ArgumentParser, source: bool = True) -> None:
        p.add_argument("--manifest", required=True, help="run manifest (JSON lines)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--metric", type=_metric, default="nisqa_mos", help="score field (default nisqa_mos)")
        if source:
            p.add_argument("--source", choices=cur.SOURCES, default="enhanced", help="which score column to use")

    p = add("curve", "hours available above each quality threshold")
    manifest_args(p)
    p.add_argument("--grid", type=_grid, default=[round(1.0 + 0.1 * i, 1) for i in range(41)], help="comma-separated thresholds")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = add("select", "select a subset by threshold or hour budget")
    manifest_args(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--threshold", type=_score_value, help="minimum score (inclusive)")
    mode.add_argument("--hours", type=_positive, help="hour budget, best scores first")
    mode.add_argument("--paper-subsets", action="store_true", help="thresholds 2.0, 4.0, 4.4 and 4.6")
    p.add_argument("--min-speaker-seconds", type=float, help="first keep only speakers with more audio than this")

    p = add("control", "non-enhanced counterparts of a selected subset")
    p.add_argument("--manifest", required=True, help="run manifest (JSON lines)")
    p.add_argument("--selection", required=True, help="subset JSON written by `select`")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--audio-dir", help="verify original files exist under this directory")

    p = add("stats", "original vs enhanced score tables")
    manifest_args(p, source=False)

    p = add("histogram", "score distribution as CSV")
    manifest_args(p, source=False)
    p.add_argument("--which", choices=(*cur.SOURCES, "both"), default="both", help="score column")
    p.add_argument("--bin-width", type=_positive, default=0.1, help="bin width on the 1-5 scale")
    p.add_argument("--svg", action="store_true", help="also write an SVG chart")

    p = add("report", "markdown report with all tables")
    manifest_args(p, source=False)
    p.add_argument("--grid", type=_grid, default=list(PRESET_THRESHOLDS), help="thresholds for the hours table")
    p.add_argument("--tts-scores", help="externally produced TTS evaluation CSV to format")

    return parser


COMMANDS = {
    "run": cmd_run,
    "resume": cmd_resume,
    "enhance-one": cmd_enhance_one,
    "score": cmd_score,
    "curve": cmd_curve,
    "select": cmd_select,
    "control": cmd_control,
    "stats": cmd_stats,
    "histogram": cmd_histogram,
    "report": cmd_report,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointMismatchError, cur.ManifestError, cur.MetricMissingError,
            cur.InsufficientHoursError, AudioError, EnhanceError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
