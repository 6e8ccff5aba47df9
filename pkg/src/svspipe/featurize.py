"""Frame-level and syllable-level score features, and duration utilities."""

import math
from dataclasses import dataclass

import numpy as np

from .corpus import token_to_id
from .errors import EmptyLabels, NoOverlappingNote, NoteTooShort, SvsError
from .pitch import REST, hz_to_midi, midi_to_hz
from .score import LabelEntry, LabelSequence

__all__ = [
    "REST",
    "FrameFeatures",
    "SyllableFeatures",
    "midi_to_hz",
    "hz_to_midi",
    "frame_level_features",
    "syllable_level_features",
    "length_regulate",
    "rule_based_durations",
    "split_syllable_evenly",
]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(eq=False)
class FrameFeatures:
    phoneme_ids: np.ndarray
    note_ids: np.ndarray

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.int64)
        self.note_ids = np.asarray(self.note_ids, dtype=np.int64)
        if self.phoneme_ids.shape != self.note_ids.shape:
            raise ValueError("phoneme and note id sequences differ in length")

    @property
    def length(self):
        return len(self.phoneme_ids)

    def __len__(self):
        return self.length

    def as_matrix(self):
        """(frames, 2) float32 matrix for ``MSKF`` dumps."""
        return np.stack([self.phoneme_ids, self.note_ids], axis=1).astype(np.float32)


@dataclass(eq=False)
class SyllableFeatures:
    """Column-wise unit records: one row per label entry."""

    phoneme_ids: np.ndarray
    note_ids: np.ndarray
    tempo_bpm: np.ndarray
    beat_pos: np.ndarray
    duration_frames: np.ndarray

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.int64)
        self.note_ids = np.asarray(self.note_ids, dtype=np.int64)
        self.tempo_bpm = np.asarray(self.tempo_bpm, dtype=np.float64)
        self.beat_pos = np.asarray(self.beat_pos, dtype=np.float64)
        self.duration_frames = np.asarray(self.duration_frames, dtype=np.int64)
        n = len(self.phoneme_ids)
        for col in (self.note_ids, self.tempo_bpm, self.beat_pos, self.duration_frames):
            if len(col) != n:
                raise ValueError("syllable feature columns differ in length")
        if np.any((self.note_ids < 0) | (self.note_ids > REST)):
            raise ValueError("note ids must lie in [0, 128]")

    def __len__(self):
        return len(self.phoneme_ids)

    @property
    def total_frames(self):
        return int(self.duration_frames.sum())

    def records(self):
        for row in zip(self.phoneme_ids, self.note_ids, self.tempo_bpm, self.beat_pos,
                       self.duration_frames):
            yield tuple(v.item() for v in row)

    def as_matrix(self):
        return np.stack([self.phoneme_ids, self.note_ids, self.tempo_bpm, self.beat_pos,
                         self.duration_frames], axis=1).astype(np.float32)


def _per_sample_ids(starts, ids, n_samples, sr):
    """Id of the latest entry starting at or before each sample time."""
    t = np.arange(n_samples) / sr
    idx = np.searchsorted(np.asarray(starts, dtype=float), t, side="right") - 1
    return np.asarray(ids)[np.maximum(idx, 0)]


def _majority_frames(sample_ids, n_frames, p):
    """Majority id inside each centered window; earliest-starting id wins ties.

    A window covers the samples where the periodic Hann window is nonzero,
    i.e. ``|s - t * hop| < win_length / 2``.
    """
    n = len(sample_ids)
    change = np.flatnonzero(np.diff(sample_ids)) + 1
    run_start = np.concatenate([[0], change])
    run_end = np.concatenate([change, [n]])
    run_id = sample_ids[run_start]
    half = p.win_length / 2.0
    out = np.empty(n_frames, dtype=np.int64)
    for t in range(n_frames):
        c = t * p.hop_length
        lo = max(0, int(math.floor(c - half)) + 1)
        hi = min(n, int(math.ceil(c + half)))  # exclusive
        if hi <= lo:
            lo = min(c, n - 1)
            hi = lo + 1
        first = np.searchsorted(run_end, lo, side="right")
        last = np.searchsorted(run_start, hi, side="left")
        counts = {}
        order = []
        for r in range(first, last):
            overlap = min(run_end[r], hi) - max(run_start[r], lo)
            if overlap <= 0:
                continue
            key = run_id[r]
            if key not in counts:
                counts[key] = 0
                order.append(key)
            counts[key] += overlap
        best = max(counts.values())
        out[t] = next(k for k in order if counts[k] == best)
    return out


def frame_level_features(labels, notes, tl, audio_len, p):
    """Phoneme and note ids per acoustic frame.

    Both sequences are expanded to one id per audio sample, then reduced to
    the ``1 + audio_len // hop`` centered frames by majority vote.
    """
    if len(labels) == 0:
        raise EmptyLabels("frame-level features need at least one label")
    if audio_len < 1:
        raise ValueError("audio_len must be positive")
    sr = p.sample_rate_hz
    n_frames = p.n_frames(audio_len)
    ph = _per_sample_ids([e.start_s for e in labels],
                         [token_to_id(tl, e.phoneme) for e in labels], audio_len, sr)
    events = notes.events
    if events:
        nt = _per_sample_ids([e.onset_s for e in events], [e.pitch for e in events],
                             audio_len, sr)
    else:
        nt = np.full(audio_len, REST)
    return FrameFeatures(_majority_frames(ph, n_frames, p), _majority_frames(nt, n_frames, p))


def _best_note(entry, events):
    best, best_overlap = None, 0.0
    for e in events:
        overlap = min(entry.end_s, e.offset_s) - max(entry.start_s, e.onset_s)
        if overlap > best_overlap:
            best, best_overlap = e, overlap
    return best


def _enforce_min_one(durations):
    d = list(durations)
    if sum(d) < len(d):
        raise SvsError(f"{sum(d)} frames cannot hold {len(d)} units of at least one frame")
    while True:
        short = [i for i, v in enumerate(d) if v < 1]
        if not short:
            return d
        i = short[0]
        neighbours = [j for j in (i - 1, i + 1) if 0 <= j < len(d)]
        donor = max(neighbours, key=lambda j: (d[j], -j))
        if d[donor] <= 1:
            # neighbours have nothing to spare; take from the largest unit overall
            donor = max(range(len(d)), key=lambda j: (d[j], -j))
        d[donor] -= 1
        d[i] += 1


def syllable_level_features(labels, notes, tl, audio_len, p):
    """One record per label entry with note, tempo, beat and frame duration.

    Durations come from rounded boundaries ``round(start * sr / hop)``; the
    first unit starts at frame 0 and the last one absorbs the remainder up to
    the mel frame count, so the total is exact. Units that round to zero
    frames take one from their larger neighbour.
    """
    if len(labels) == 0:
        raise EmptyLabels("syllable-level features need at least one label")
    n_frames = p.n_frames(audio_len)
    frames_per_s = p.sample_rate_hz / p.hop_length
    bounds = [0] + [_round_half_up(e.start_s * frames_per_s) for e in labels.entries[1:]]
    bounds.append(n_frames)
    durations = _enforce_min_one(b - a for a, b in zip(bounds, bounds[1:]))

    rows = []
    for i, entry in enumerate(labels):
        note = _best_note(entry, notes.events)
        if note is None:
            raise NoOverlappingNote(i)
        rows.append((token_to_id(tl, entry.phoneme), note.pitch, note.tempo_bpm, note.beat_pos))
    ph, nt, tempo, beat = zip(*rows)
    return SyllableFeatures(ph, nt, tempo, beat, durations)


def length_regulate(units):
    """Repeat each unit's ids ``duration_frames`` times."""
    d = np.asarray(units.duration_frames)
    if np.any(d < 1):
        raise ValueError("durations must be >= 1")
    return FrameFeatures(np.repeat(units.phoneme_ids, d), np.repeat(units.note_ids, d))


def rule_based_durations(groups, consonant_frames):
    """Split each note's frames among its phonemes.

    ``groups`` holds ``(phonemes, note_duration_frames)`` pairs. Every phoneme
    but the last gets ``min(consonant_frames, note_frames // n)``; the last
    (the nucleus) gets the remainder.
    """
    if consonant_frames < 1:
        raise ValueError("consonant_frames must be >= 1")
    out = []
    for phonemes, total in groups:
        n = len(phonemes)
        if n < 1:
            raise ValueError("each note needs at least one phoneme")
        if total < n:
            raise NoteTooShort(f"{total} frames cannot hold {n} phonemes")
        head = min(consonant_frames, total // n)
        out.append([head] * (n - 1) + [total - head * (n - 1)])
    return out


def split_syllable_evenly(entry, phonemes):
    """Partition ``entry``'s span into equal parts, one per phoneme."""
    n = len(phonemes)
    if n < 1:
        raise ValueError("need at least one phoneme")
    span = entry.end_s - entry.start_s
    bounds = [entry.start_s + k * span / n for k in range(n)] + [entry.end_s]
    return LabelSequence(LabelEntry(ph, a, b) for ph, a, b in zip(phonemes, bounds, bounds[1:]))
