import math
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechcurate.curation import (
    ClipRecord,
    InsufficientHoursError,
    ManifestError,
    MetricMissingError,
    Status,
    bin_stats,
    control_subset,
    filter_speakers,
    group_stats,
    histogram_edges,
    load_manifest,
    mean_delta,
    read_manifest,
    score_histogram,
    select_by_hours,
    select_by_threshold,
    threshold_curve,
    write_manifest,
    write_subset_tsv,
)
from speechcurate.scoring import QualityScore

from conftest import synthetic_records

HEADER = "client_id\tpath\tsentence\tup_votes\tdown_votes\tage\tgender\n"


def rec(cid, score=None, hours=1.0, original=None, speaker="s", sex="unknown", **kw):
    return ClipRecord(
        clip_id=cid,
        speaker_id=speaker,
        original_path=f"clips/{cid}.wav",
        duration_s=hours * 3600,
        sex=sex,
        score_enhanced=QualityScore(score, "t") if score is not None else None,
        score_original=QualityScore(original, "t") if original is not None else None,
        **kw,
    )


def exact_hours(records):
    return float(sum((Fraction(r.duration_s) for r in records), Fraction(0)) / 3600)


# --- ingestion ----------------------------------------------------------------


def test_load_three_row_tsv(tmp_path):
    tsv = tmp_path / "validated.tsv"
    tsv.write_text(
        HEADER
        + "spkA\tcommon_voice_es_1.mp3\thola mundo\t2\t0\ttwenties\tmale_masculine\n"
        + "spkB\tcommon_voice_es_2.mp3\tbuenos días\t3\t1\tforties\tfemale_feminine\n"
        + "spkA\tcommon_voice_es_3.mp3\t\"comillas\" sueltas\t2\t0\t\t\n",
        encoding="utf-8",
    )
    recs = load_manifest(tsv)
    assert [r.clip_id for r in recs] == ["common_voice_es_1", "common_voice_es_2", "common_voice_es_3"]
    assert [r.speaker_id for r in recs] == ["spkA", "spkB", "spkA"]
    assert [r.sex for r in recs] == ["male", "female", "unknown"]
    assert [r.age_band for r in recs] == ["twenties", "fourties", "unknown"]
    assert recs[2].sentence == '"comillas" sueltas'
    assert recs[0].original_path == "common_voice_es_1.mp3"
    assert all(r.status is Status.PENDING and r.duration_s is None for r in recs)


def test_missing_path_column(tmp_path):
    tsv = tmp_path / "v.tsv"
    tsv.write_text("client_id\tsentence\nx\thola\n")
    with pytest.raises(ManifestError, match="missing column: path"):
        load_manifest(tsv)


def test_unknown_gender_is_retained(tmp_path):
    tsv = tmp_path / "v.tsv"
    tsv.write_text(HEADER + "a\tc1.wav\ttext\t1\t0\tthirties\tother\n")
    (r,) = load_manifest(tsv)
    assert r.sex == "unknown"


def test_duplicate_path(tmp_path):
    tsv = tmp_path / "v.tsv"
    tsv.write_text("client_id\tpath\tsentence\na\tc1.wav\tx\nb\tc1.wav\ty\n")
    with pytest.raises(ManifestError, match="duplicate clip path"):
        load_manifest(tsv)


def test_durations_sidecar(tmp_path):
    tsv = tmp_path / "v.tsv"
    tsv.write_text("client_id\tpath\tsentence\na\tc1.mp3\tx\nb\tc2.mp3\ty\n")
    side = tmp_path / "clip_durations.tsv"
    side.write_text("clip\tduration[ms]\nc1.mp3\t4250\nc2.mp3\t1000\n")
    assert [r.duration_s for r in load_manifest(tsv, side)] == [4.25, 1.0]


def test_manifest_round_trip(tmp_path):
    recs = synthetic_records(30, seed=4)
    recs[0].advance(Status.SCORED)
    path = write_manifest(recs, tmp_path / "m.jsonl")
    back = read_manifest(path)
    assert back == sorted(recs, key=lambda r: r.clip_id)
    assert [r.clip_id for r in back] == sorted(r.clip_id for r in recs)


def test_status_transitions_monotone():
    r = rec("a")
    r.advance(Status.ENHANCED)
    r.advance(Status.SCORED)
    with pytest.raises(ValueError):
        r.advance(Status.PENDING)
    f = rec("b")
    f.advance(Status.ALL_SILENT, "silent")
    with pytest.raises(ValueError):
        f.advance(Status.SCORED)


def test_nonpositive_duration_rejected():
    with pytest.raises(ManifestError):
        ClipRecord("a", "s", "a.wav", duration_s=0.0)


# --- speaker filter -----------------------------------------------------------


def _speaker(spk, seconds):
    return [ClipRecord(f"{spk}_{i}", spk, f"{spk}_{i}.wav", duration_s=d) for i, d in enumerate(seconds)]


def test_speaker_just_above_threshold_kept():
    recs = _speaker("a", [700.5, 700.5])
    assert filter_speakers(recs) == recs


def test_speaker_exactly_at_threshold_dropped():
    assert filter_speakers(_speaker("a", [0.1] * 14000)) == []
    assert filter_speakers(_speaker("b", [1000.0, 400.0])) == []


def test_mixed_speakers():
    keep = _speaker("a", [1000.0, 500.0])
    recs = keep + _speaker("b", [100.0])
    assert filter_speakers(recs) == keep


def test_filter_needs_durations():
    with pytest.raises(MetricMissingError):
        filter_speakers([ClipRecord("a", "s", "a.wav")])


# --- curves -------------------------------------------------------------------


def test_curve_three_clips():
    recs = [rec("a", 3.0), rec("b", 4.0), rec("c", 5.0)]
    curve = threshold_curve(recs, "mos", [2, 4, 4.5])
    assert curve.points == [(2.0, 3.0), (4.0, 2.0), (4.5, 1.0)]


def test_curve_empty():
    assert [h for _, h in threshold_curve([], "mos", [1, 2, 3]).points] == [0.0, 0.0, 0.0]


def test_curve_unscored_counted():
    with pytest.raises(MetricMissingError, match="2 records"):
        threshold_curve([rec("a", 3.0), rec("b"), rec("c")], "mos", [2])


def test_curve_grid_must_increase():
    with pytest.raises(ValueError):
        threshold_curve([], "mos", [2, 2])


def test_curve_matches_brute_force():
    recs = synthetic_records(1000, seed=8)
    grid = [1 + i * 0.05 for i in range(81)]
    curve = threshold_curve(recs, "nisqa_mos", grid)
    for t, h in curve.points:
        chosen = [r for r in recs if r.score_enhanced.mos >= t]
        assert h == pytest.approx(exact_hours(chosen), rel=0, abs=1e-12)


def test_curve_on_original_and_utmos():
    recs = synthetic_records(200, seed=2)
    for source in ("original", "enhanced"):
        c = threshold_curve(recs, "mos", [3.0], source)
        score = (lambda r: r.score_original) if source == "original" else (lambda r: r.score_enhanced)
        assert c.points[0][1] == pytest.approx(exact_hours([r for r in recs if score(r).mos >= 3.0]), abs=1e-12)
    u = threshold_curve(recs, "utmos", [2.0])
    assert u.points[0][1] == pytest.approx(exact_hours([r for r in recs if r.score_enhanced.utmos >= 2.0]), abs=1e-12)


# --- threshold selection ------------------------------------------------------


def test_threshold_one_selects_all():
    recs = synthetic_records(50, seed=1)
    spec, chosen = select_by_threshold(recs, "mos", 1.0)
    assert spec.clip_count == 50
    assert [r.clip_id for r in chosen] == sorted(r.clip_id for r in recs)


def test_threshold_five_selects_only_perfect():
    recs = [rec("a", 5.0), rec("b", 4.999), rec("c", 5.0)]
    spec, chosen = select_by_threshold(recs, "mos", 5.0)
    assert spec.clip_ids == ["a", "c"]
    assert select_by_threshold(recs, "mos", 5.0 + 1e-9)[0].clip_count == 0


def test_threshold_is_inclusive():
    assert select_by_threshold([rec("a", 4.4), rec("b", 4.39)], "mos", 4.4)[0].clip_ids == ["a"]


def test_threshold_matches_filter():
    recs = synthetic_records(500, seed=3, quantize=True)
    for t in (2.0, 3.3, 4.0, 4.4, 4.6):
        spec, chosen = select_by_threshold(recs, "mos", t)
        expect = sorted(r.clip_id for r in recs if r.score_enhanced.mos >= t)
        assert spec.clip_ids == expect == [r.clip_id for r in chosen]
        assert spec.realized_hours == pytest.approx(exact_hours(chosen), abs=1e-12)
        assert all(r.score_enhanced.mos >= t for r in chosen)


# --- hour budget selection ----------------------------------------------------


def test_hours_top_three():
    recs = [rec(f"c{i}", 1.0 + 0.4 * i) for i in range(10)]
    spec, chosen = select_by_hours(recs, "mos", 3.0)
    assert spec.clip_ids == ["c7", "c8", "c9"]
    assert spec.realized_hours == 3.0
    assert spec.realized_threshold == pytest.approx(1.0 + 0.4 * 7)


def test_hours_tie_break_by_clip_id():
    recs = [rec("z", 4.0), rec("b", 4.0), rec("m", 4.0), rec("a", 3.0)]
    spec, _ = select_by_hours(recs, "mos", 2.0)
    assert spec.clip_ids == ["b", "m"]


def test_hours_insufficient():
    with pytest.raises(InsufficientHoursError, match="2.000 h"):
        select_by_hours([rec("a", 3.0), rec("b", 4.0)], "mos", 2.5)


def test_hours_matches_threshold_sweep():
    recs = synthetic_records(400, seed=5, quantize=True)
    total = exact_hours(recs)
    for target in (0.05, 0.1, total / 3, total / 2, total):
        spec, chosen = select_by_hours(recs, "mos", target)
        # oracle: smallest prefix of (score desc, id asc) with enough hours, found by trying every cut
        ranked = sorted(recs, key=lambda r: (-r.score_enhanced.mos, r.clip_id))
        cut = next(k for k in range(1, len(ranked) + 1) if exact_hours(ranked[:k]) >= target)
        assert spec.clip_ids == sorted(r.clip_id for r in ranked[:cut])
        last = ranked[cut - 1]
        assert spec.realized_threshold == last.score_enhanced.mos
        assert 0 <= spec.realized_hours - target <= last.duration_s / 3600 + 1e-12
        # everything strictly above the realized threshold is included
        threshold_ids = set(select_by_threshold(recs, "mos", math.nextafter(last.score_enhanced.mos, 6))[0].clip_ids)
        assert threshold_ids <= set(spec.clip_ids)


def test_hours_target_positive():
    with pytest.raises(ValueError):
        select_by_hours([rec("a", 3.0)], "mos", 0)


# --- control subsets ----------------------------------------------------------


def test_control_same_ids_and_duration():
    recs = synthetic_records(300, seed=6)
    spec, chosen = select_by_hours(recs, "mos", 100 * 8 / 3600)
    ctrl = control_subset(chosen, recs)
    assert [r.clip_id for r in ctrl] == [r.clip_id for r in chosen]
    assert math.fsum(r.duration_s for r in ctrl) == math.fsum(r.duration_s for r in chosen)
    assert all(r.active_path == r.original_path and r.enhanced_path is None for r in ctrl)
    assert all(r.enhanced_path for r in chosen)


def test_control_missing_original():
    recs = [rec("a", 4.0), replace(rec("b", 4.0), original_path="")]
    with pytest.raises(ManifestError, match="b"):
        control_subset(["a", "b"], recs)


def test_control_checks_files(tmp_path):
    recs = [rec("a", 4.0), rec("b", 4.0)]
    (tmp_path / "clips").mkdir()
    (tmp_path / "clips" / "a.wav").write_bytes(b"")
    with pytest.raises(ManifestError, match="clip_ids: b$"):
        control_subset(["a", "b"], recs, tmp_path)


def test_subset_tsv(tmp_path):
    recs = [rec("b", 4.0, speaker="x", sentence="dos"), rec("a", 4.0, speaker="y", sentence="uno\tmás")]
    recs[0].enhanced_path = "enhanced/b.wav"
    write_subset_tsv(recs, tmp_path / "s.tsv")
    assert (tmp_path / "s.tsv").read_text() == "clips/a.wav\ty\tuno más\nenhanced/b.wav\tx\tdos\n"


# --- statistics ---------------------------------------------------------------


def test_single_record_bin():
    table = bin_stats([rec("a", 2.6, original=2.5)])
    row = table.rows[1]
    assert row.label == "2-3" and row.count == 1
    assert (row.mean_original, row.mean_enhanced) == (2.5, 2.6)
    assert row.diff == pytest.approx(0.1)
    assert [r.count for r in table.rows] == [0, 1, 0, 0]
    assert math.isnan(table.rows[0].mean_original)


def test_bins_use_original_score():
    table = bin_stats([rec("a", 4.5, original=2.0), rec("b", 5.0, original=5.0), rec("c", 1.0, original=1.999)])
    assert [r.count for r in table.rows] == [1, 1, 0, 1]


def test_bin_stats_oracle_and_partition():
    recs = synthetic_records(200, seed=7, quantize=True) + [rec("x_unscored", 3.0)]
    table = bin_stats(recs)
    assert table.excluded == 1
    paired = [r for r in recs if r.score_original is not None]
    assert sum(r.count for r in table.rows) == len(paired)
    for k, row in enumerate(table.rows):
        lo = k + 1
        members = [r for r in paired if lo <= r.score_original.mos < lo + 1 or (lo == 4 and r.score_original.mos == 5.0)]
        assert row.count == len(members)
        if members:
            assert row.mean_original == pytest.approx(sum(Fraction(r.score_original.mos) for r in members) / len(members), abs=1e-12)
            assert row.mean_enhanced == pytest.approx(sum(Fraction(r.score_enhanced.mos) for r in members) / len(members), abs=1e-12)


def test_group_stats_only_unknown():
    table = group_stats([rec("a", 3.0, original=2.0), rec("b", 4.0, original=3.0)], "sex")
    assert [(r.label, r.count, r.mean_original, r.mean_enhanced) for r in table.rows] == [("unknown", 2, 2.5, 3.5)]


def test_group_stats_oracle():
    recs = synthetic_records(300, seed=9)
    for key in ("sex", "age_band"):
        table = group_stats(recs, key)
        labels = sorted({getattr(r, key) for r in recs})
        assert [r.label for r in table.rows] == labels
        for row in table.rows:
            members = [r for r in recs if getattr(r, key) == row.label]
            assert row.count == len(members)
            assert row.mean_enhanced == pytest.approx(sum(Fraction(r.score_enhanced.mos) for r in members) / len(members), abs=1e-12)
            assert row.diff == pytest.approx(row.mean_enhanced - row.mean_original)


def test_group_key_validated():
    with pytest.raises(ValueError):
        group_stats([], "speaker_id")


def test_mean_delta_identical_columns():
    recs = [rec(f"c{i}", 1 + i / 10, original=1 + i / 10) for i in range(30)]
    assert mean_delta(recs).diff == 0.0


def test_mean_delta_oracle():
    recs = synthetic_records(250, seed=10)
    md = mean_delta(recs)
    o = sum(Fraction(r.score_original.mos) for r in recs) / len(recs)
    e = sum(Fraction(r.score_enhanced.mos) for r in recs) / len(recs)
    assert (md.mean_original, md.mean_enhanced, md.count) == (pytest.approx(float(o), abs=1e-12), pytest.approx(float(e), abs=1e-12), 250)


def test_histogram_empty():
    h = score_histogram([], "enhanced", 0.5)
    assert h.counts == [0] * 8


def test_histogram_single():
    h = score_histogram([rec("a", 3.25)], "enhanced", 0.5)
    assert h.rows()[4] == (3.0, 3.5, 1)
    assert sum(h.counts) == 1


def test_histogram_edges_decimal():
    assert histogram_edges(0.1)[3] == 1.3
    assert histogram_edges(0.3)[-2:] == [4.9, 5.0]
    h = score_histogram([rec("a", 1.3), rec("b", 5.0), rec("c", 1.0)], "enhanced", 0.1)
    assert h.counts[3] == 1 and h.counts[-1] == 1 and h.counts[0] == 1


def test_histogram_oracle():
    recs = synthetic_records(400, seed=11, quantize=True)
    for which in ("original", "enhanced"):
        h = score_histogram(recs, which, 0.25)
        scores = [(r.score_original if which == "original" else r.score_enhanced).mos for r in recs]
        expect = [0] * 16
        for s in scores:
            expect[min(math.floor((Fraction(str(s)) - 1) * 4), 15)] += 1
        assert h.counts == expect


# --- properties ---------------------------------------------------------------

scores_st = st.floats(1.0, 5.0)


@st.composite
def record_sets(draw):
    n = draw(st.integers(0, 40))
    out = []
    for i in range(n):
        out.append(rec(f"c{i:03d}", draw(scores_st), hours=draw(st.floats(0.001, 2.0)), original=draw(scores_st)))
    return out


@settings(max_examples=80, deadline=None)
@given(record_sets(), st.lists(st.floats(1.0, 5.0), min_size=1, max_size=10, unique=True))
def test_curve_monotone_nested_consistent(recs, grid):
    grid = sorted(grid)
    curve = threshold_curve(recs, "mos", grid)
    hours = [h for _, h in curve.points]
    assert all(a >= b for a, b in zip(hours, hours[1:]))
    prev = None
    for t, h in curve.points:
        spec, _ = select_by_threshold(recs, "mos", t)
        assert spec.realized_hours == h
        ids = set(spec.clip_ids)
        if prev is not None:
            assert ids <= prev
        prev = ids


@settings(max_examples=80, deadline=None)
@given(record_sets(), st.floats(0.001, 1.0))
def test_hours_overshoot_bounded(recs, frac):
    total = sum(r.duration_s for r in recs) / 3600
    if total <= 0:
        return
    target = total * frac
    spec, chosen = select_by_hours(recs, "mos", target)
    last = max(chosen, key=lambda r: (-r.score_enhanced.mos, r.clip_id))
    assert spec.realized_hours >= target - 1e-12
    assert spec.realized_hours - target <= last.duration_s / 3600 + 1e-12


@settings(max_examples=60, deadline=None)
@given(record_sets())
def test_bins_partition(recs):
    table = bin_stats(recs)
    assert sum(r.count for r in table.rows) == len(recs)
    assert sum(score_histogram(recs, "original", 0.1).counts) == len(recs)
