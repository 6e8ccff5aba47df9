"""Singing voice synthesis data pipeline: corpus handling, score parsing,
acoustic features, augmentation, objective metrics and a staged recipe."""

from .augment import AugmentSpec, mixup_features, pitch_shift_score, sample_lambda
from .corpus import Corpus, TokenList, Utterance, build_token_list, load_corpus, token_to_id
from .dsp import (
    AudioBuffer,
    F0Track,
    FrameParams,
    MelSpectrogram,
    estimate_f0,
    griffin_lim,
    istft,
    logmel,
    mel_filterbank,
    resample,
    stft,
)
from .errors import SvsError
from .featurize import (
    frame_level_features,
    length_regulate,
    rule_based_durations,
    split_syllable_evenly,
    syllable_level_features,
)
from .metrics import MetricsReport, dtw_align, evaluate, mcd, vuv_error
from .pipeline import PipelineConfig, run
from .pitch import REST, hz_to_midi, midi_to_hz
from .score import (
    LabelSequence,
    NoteEvent,
    NoteSequence,
    normalize_score,
    parse_label,
    parse_smf,
    segment_by_silence,
    transcribe_rule_based,
)

__all__ = [
    "AugmentSpec",
    "mixup_features",
    "pitch_shift_score",
    "sample_lambda",
    "Corpus",
    "TokenList",
    "Utterance",
    "build_token_list",
    "load_corpus",
    "token_to_id",
    "AudioBuffer",
    "F0Track",
    "FrameParams",
    "MelSpectrogram",
    "estimate_f0",
    "griffin_lim",
    "istft",
    "logmel",
    "mel_filterbank",
    "resample",
    "stft",
    "SvsError",
    "frame_level_features",
    "length_regulate",
    "rule_based_durations",
    "split_syllable_evenly",
    "syllable_level_features",
    "MetricsReport",
    "dtw_align",
    "evaluate",
    "mcd",
    "vuv_error",
    "PipelineConfig",
    "run",
    "REST",
    "hz_to_midi",
    "midi_to_hz",
    "LabelSequence",
    "NoteEvent",
    "NoteSequence",
    "normalize_score",
    "parse_label",
    "parse_smf",
    "segment_by_silence",
    "transcribe_rule_based",
]

__version__ = "0.1.0"
