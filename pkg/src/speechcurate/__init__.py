"""Enhancement, quality scoring and curation of crowdsourced speech corpora for TTS."""

from .audio import AudioClip, FrameLevel, amplitude_to_db, db_to_amplitude, frame_levels, read_wav, write_wav
from .curation import (
    ClipRecord,
    Status,
    SubsetSpec,
    ThresholdCurve,
    bin_stats,
    control_subset,
    filter_speakers,
    group_stats,
    load_manifest,
    mean_delta,
    read_manifest,
    score_histogram,
    select_by_hours,
    select_by_threshold,
    threshold_curve,
    write_manifest,
)
from .enhance import (
    NoiseProfile,
    SubtractParams,
    TrimParams,
    enhance_external,
    estimate_noise_profile,
    spectral_subtract,
    trim_and_pad,
)
from .pipeline import PipelineConfig, RunReport, resume, run
from .scoring import QualityScore, proxy_score, run_external_scorer

__version__ = "0.1.0"
