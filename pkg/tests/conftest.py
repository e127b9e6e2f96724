from __future__ import annotations

import csv
import sys
from pathlib import Path

import numpy as np
import pytest

from speechcurate.audio import AudioClip, write_wav
from speechcurate.curation import ClipRecord, Status
from speechcurate.scoring import QualityScore

FAKES = Path(__file__).parent / "fakes"


def fake_cmd(name: str, *args: str) -> str:
    """Command line running one of the fake external tools with this interpreter."""
    return " ".join([sys.executable, str(FAKES / name), *args])


def tone(freq: float, seconds: float, sr: int, amp: float = 0.3, phase: float = 0.0) -> np.ndarray:
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def snr_db(clean: np.ndarray, test: np.ndarray) -> float:
    return 10 * np.log10(np.sum(clean**2) / np.sum((test - clean) ** 2))


def db_noise(rng: np.random.Generator, seconds: float, sr: int, level_db: float) -> np.ndarray:
    """White noise with the given RMS level in dBFS."""
    return rng.normal(0.0, 10 ** (level_db / 20), int(round(seconds * sr)))


def make_corpus(root: Path, n: int, sr: int = 16000, seed: int = 0, silent_ids: tuple[int, ...] = ()) -> Path:
    """Write ``n`` synthetic noisy clips plus a Commonvoice-style TSV; return the TSV path."""
    rng = np.random.default_rng(seed)
    clips = root / "clips"
    clips.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        cid = f"clip_{i:05d}"
        if i in silent_ids:
            x = np.zeros(sr)
        else:
            speech = tone(rng.uniform(150, 600), rng.uniform(0.4, 1.2), sr, amp=rng.uniform(0.1, 0.5))
            lead = np.zeros(int(rng.uniform(0.0, 0.4) * sr))
            x = np.concatenate([lead, speech, np.zeros(int(0.5 * sr))])
            x = x + rng.normal(0, rng.uniform(0.0005, 0.02), x.shape[0])
        write_wav(AudioClip(sr, x), clips / f"{cid}.wav")
        rows.append(
            {
                "client_id": f"spk{i % 7}",
                "path": f"{cid}.wav",
                "sentence": f"sentence number {i}",
                "up_votes": "2",
                "down_votes": "0",
                "age": ["twenties", "thirties", "fifties", ""][i % 4],
                "gender": ["male_masculine", "female_feminine", "", "male"][i % 4],
            }
        )
    tsv = root / "validated.tsv"
    with open(tsv, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["client_id", "path", "sentence"], delimiter="\t")
        w.writeheader()
        w.writerows(rows)
    return tsv


def synthetic_records(n: int, seed: int = 0, quantize: bool = False) -> list[ClipRecord]:
    """Random doubly-scored records; ``quantize`` rounds scores to 0.1 to force ties and bin edges."""
    rng = np.random.default_rng(seed)
    out = []
    for i in rng.permutation(n):
        o = float(rng.uniform(1, 5))
        e = float(min(5.0, max(1.0, o + rng.normal(0.2, 0.3))))
        if quantize:
            o, e = round(o, 1), round(e, 1)
        out.append(
            ClipRecord(
                clip_id=f"c{i:05d}",
                speaker_id=f"s{int(rng.integers(0, 20))}",
                original_path=f"clips/c{i:05d}.wav",
                enhanced_path=f"enhanced/c{i:05d}.wav",
                duration_s=float(rng.uniform(1.0, 12.0)),
                sex=["female", "male", "unknown"][int(rng.integers(0, 3))],
                age_band=["twenties", "thirties", "unknown"][int(rng.integers(0, 3))],
                sentence=f"text {i}",
                score_original=QualityScore(o, "syn"),
                score_enhanced=QualityScore(e, "syn", utmos=float(rng.uniform(1, 3.5))),
                status=Status.SCORED,
            )
        )
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def output_bytes(out: Path) -> dict[str, bytes]:
    """Manifest plus enhanced WAV bytes of a run, keyed by relative path."""
    files = {"manifest.jsonl": (out / "manifest.jsonl").read_bytes()}
    for p in sorted((out / "enhanced").glob("*.wav")):
        files[f"enhanced/{p.name}"] = p.read_bytes()
    return files


def truncate_checkpoint(out: Path, keep: int, torn: bool = True) -> None:
    """Simulate a killed run: keep ``keep`` checkpoint records, add a torn line and a stale temp WAV."""
    ckpt = out / "checkpoint.jsonl"
    lines = ckpt.read_text(encoding="utf-8").splitlines(keepends=True)
    body = "".join(lines[: 1 + keep])
    if torn and len(lines) > keep + 1:
        body += lines[keep + 1][: len(lines[keep + 1]) // 2]
    ckpt.write_text(body, encoding="utf-8")
    (out / "manifest.jsonl").unlink()
    (out / "enhanced" / ".tmp-dead.wav").write_bytes(b"RIFF")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
