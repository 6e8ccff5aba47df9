"""Score-level pitch augmentation and feature-space mixup."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .score import NoteEvent, NoteSequence

MAX_SHIFT = 12


@dataclass(frozen=True)
class AugmentSpec:
    pitch_shift_semitones: int = 0
    mixup_alpha: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if int(self.pitch_shift_semitones) != self.pitch_shift_semitones or \
                abs(self.pitch_shift_semitones) > MAX_SHIFT:
            raise ValueError(f"pitch shift must be an integer in [-{MAX_SHIFT}, {MAX_SHIFT}]")
        if not self.mixup_alpha > 0:
            raise ValueError("mixup alpha must be positive")

    def rng(self):
        return np.random.default_rng(self.seed)


def pitch_shift_score(notes, semitones):
    """Transpose pitched events, clamping to [0, 127]; rests and timing untouched."""
    if abs(semitones) > MAX_SHIFT:
        raise ValueError(f"|semitones| must be <= {MAX_SHIFT}")
    if semitones == 0:
        return notes
    shifted = [
        e if e.is_rest else NoteEvent(min(max(e.pitch + semitones, 0), 127),
                                      e.onset_s, e.offset_s, e.tempo_bpm, e.beat_pos)
        for e in notes.events
    ]
    return NoteSequence(shifted, notes.total_s, notes.beats_per_measure)


def mixup_features(a, b, lam):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot mix {a.shape} with {b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return lam * a + (1.0 - lam) * b


def sample_lambda(alpha, rng):
    """Beta(alpha, alpha) draw built from two Gamma draws of ``rng``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = rng.gamma(alpha)
    y = rng.gamma(alpha)
    if x + y == 0.0:
        return 0.5
    return float(x / (x + y))
