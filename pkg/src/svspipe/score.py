"""Music-score and phoneme-alignment handling.

Standard MIDI File reading/writing, the ``label`` alignment format, score
normalization, silence-based segmentation and a rule-based transcriber that
turns an F0 track plus phoneme alignment into a note sequence.
"""

import bisect
import math
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyF0Track,
    MalformedTriplet,
    NonpositiveDuration,
    NotSmf,
    OverlappingEntries,
    SmfError,
    TruncatedChunk,
    UnmatchedNoteOn,
    UnsupportedFormat,
)
from .pitch import REST, hz_to_midi

DEFAULT_TEMPO_US = 500000
DEFAULT_TEMPO_BPM = 120.0
SILENCE_TOKENS = frozenset({"sil", "pau", "SP", "AP"})
PERCUSSION_CHANNEL = 9
# gaps shorter than this are treated as contiguous
TIME_EPS = 1e-9


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset_s: float
    offset_s: float
    tempo_bpm: float = DEFAULT_TEMPO_BPM
    beat_pos: float = 0.0

    def __post_init__(self):
        if not (self.pitch == REST or 0 <= self.pitch <= 127):
            raise ValueError(f"pitch {self.pitch} is neither REST nor in [0, 127]")
        if not self.onset_s >= 0:
            raise ValueError("onset must be >= 0")
        if not self.offset_s > self.onset_s:
            raise ValueError("offset must be greater than onset")
        if not self.tempo_bpm > 0:
            raise ValueError("tempo must be positive")

    @property
    def is_rest(self):
        return self.pitch == REST

    @property
    def duration_s(self):
        return self.offset_s - self.onset_s


@dataclass(frozen=True)
class NoteSequence:
    events: tuple = ()
    total_s: float = None
    beats_per_measure: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.total_s is None:
            total = max((e.offset_s for e in self.events), default=0.0)
            object.__setattr__(self, "total_s", total)
        onsets = [e.onset_s for e in self.events]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("note onsets must be nondecreasing")

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def pitches(self):
        return [e.pitch for e in self.events]


@dataclass(frozen=True)
class LabelEntry:
    phoneme: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.phoneme or any(c.isspace() for c in self.phoneme):
            raise ValueError(f"bad phoneme {self.phoneme!r}")
        if not self.start_s >= 0:
            raise ValueError("label start must be >= 0")
        if not self.end_s > self.start_s:
            raise NonpositiveDuration("", None)

    @property
    def duration_s(self):
        return self.end_s - self.start_s


@dataclass(frozen=True)
class LabelSequence:
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for a, b in zip(self.entries, self.entries[1:]):
            if a.end_s > b.start_s:
                raise OverlappingEntries("")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def phonemes(self):
        return [e.phoneme for e in self.entries]

    @property
    def span_s(self):
        if not self.entries:
            return 0.0
        return self.entries[-1].end_s - self.entries[0].start_s


# ---------------------------------------------------------------------------
# Standard MIDI Files


class _TrackReader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def byte(self):
        if self.pos >= len(self.data):
            raise TruncatedChunk("track data ended mid-event")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedChunk("track data ended mid-event")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self):
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise SmfError("variable-length quantity longer than 4 bytes")

    def data_byte(self):
        b = self.byte()
        if b & 0x80:
            raise SmfError(f"status byte 0x{b:02x} where data byte expected")
        return b


def _read_track(data):
    """Decode one MTrk body into (tick, kind, payload) tuples."""
    r = _TrackReader(data)
    events = []
    tick = 0
    status = None
    while r.pos < len(data):
        tick += r.varlen()
        b = r.byte()
        if b == 0xFF:
            mtype = r.byte()
            payload = r.take(r.varlen())
            if mtype == 0x2F:
                break
            if mtype == 0x51 and len(payload) == 3:
                us = int.from_bytes(payload, "big")
                if us == 0:
                    raise SmfError("zero tempo")
                events.append((tick, "tempo", us))
            elif mtype == 0x58 and len(payload) >= 2:
                num, denom_pow = payload[0], payload[1]
                if num == 0 or denom_pow > 6:
                    raise SmfError("invalid time signature")
                events.append((tick, "timesig", (num, 2 ** denom_pow)))
            status = None
            continue
        if b in (0xF0, 0xF7):
            r.take(r.varlen())
            status = None
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise SmfError(f"unexpected system message 0x{b:02x} in track")
            status = b
            first = r.data_byte()
        else:
            if status is None:
                raise SmfError("running status without a preceding status byte")
            first = b
        kind = status & 0xF0
        channel = status & 0x0F
        if kind in (0xC0, 0xD0):
            continue
        second = r.data_byte()
        if kind == 0x90 and second > 0:
            events.append((tick, "on", (channel, first)))
        elif kind == 0x80 or kind == 0x90:
            events.append((tick, "off", (channel, first)))
    return events


class _TempoMap:
    def __init__(self, changes, tpq):
        # changes: sorted (tick, us_per_quarter); always starts at tick 0
        self.tpq = tpq
        self.ticks = [t for t, _ in changes]
        self.tempos = [us for _, us in changes]
        self.seconds = [0.0]
        for i in range(1, len(changes)):
            dt = self.ticks[i] - self.ticks[i - 1]
            self.seconds.append(self.seconds[-1] + dt * self.tempos[i - 1] / (1e6 * tpq))

    def _index(self, tick):
        return bisect.bisect_right(self.ticks, tick) - 1

    def to_seconds(self, tick):
        i = self._index(tick)
        return self.seconds[i] + (tick - self.ticks[i]) * self.tempos[i] / (1e6 * self.tpq)

    def bpm_at(self, tick):
        return 60e6 / self.tempos[self._index(tick)]


def parse_smf(data, include_percussion=False):
    """Decode a format 0/1 Standard MIDI File into a merged :class:`NoteSequence`.

    All tracks (and channels, percussion excluded) are merged into one stream;
    note-on/note-off pairs are matched FIFO per (track, channel, pitch). Any
    malformed input raises an :class:`SmfError` subclass.
    """
    data = bytes(data)
    if len(data) < 4 or data[:4] != b"MThd":
        raise NotSmf("missing MThd header")
    if len(data) < 14:
        raise TruncatedChunk("header chunk truncated")
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise TruncatedChunk("header chunk truncated")
    fmt, _ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise UnsupportedFormat(fmt)
    if division & 0x8000:
        raise SmfError("SMPTE time division is not supported")
    if division == 0:
        raise SmfError("zero ticks per quarter note")
    tpq = division

    tracks = []
    pos = 8 + hlen
    while pos < len(data):
        if len(data) - pos < 8:
            raise TruncatedChunk("chunk header truncated")
        cid = data[pos:pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body_end = pos + 8 + clen
        if body_end > len(data):
            raise TruncatedChunk(f"chunk {cid!r} declares {clen} bytes past end of file")
        if cid == b"MTrk":
            tracks.append(_read_track(data[pos + 8:body_end]))
        pos = body_end

    tempo_changes = {0: DEFAULT_TEMPO_US}
    timesigs = {0: (4, 4)}
    for events in tracks:
        for tick, kind, payload in events:
            if kind == "tempo":
                tempo_changes[tick] = payload
            elif kind == "timesig":
                timesigs[tick] = payload
    tmap = _TempoMap(sorted(tempo_changes.items()), tpq)
    sig_ticks = sorted(timesigs)

    raw = []
    for track_no, events in enumerate(tracks):
        pending = defaultdict(deque)
        for tick, kind, payload in events:
            if kind not in ("on", "off"):
                continue
            channel, pitch = payload
            if channel == PERCUSSION_CHANNEL and not include_percussion:
                continue
            if kind == "on":
                pending[channel, pitch].append(tick)
            elif pending[channel, pitch]:
                on_tick = pending[channel, pitch].popleft()
                if tick > on_tick:
                    raw.append((on_tick, tick, pitch, track_no))
        leftovers = [(t, p) for (_, p), q in pending.items() for t in q]
        if leftovers:
            tick, pitch = min(leftovers)
            raise UnmatchedNoteOn(pitch, tick)

    raw.sort()
    notes = []
    for on_tick, off_tick, pitch, _ in raw:
        sig_tick = sig_ticks[bisect.bisect_right(sig_ticks, on_tick) - 1]
        num, denom = timesigs[sig_tick]
        beats = (on_tick - sig_tick) * denom / (4.0 * tpq)
        notes.append(NoteEvent(
            pitch=pitch,
            onset_s=tmap.to_seconds(on_tick),
            offset_s=tmap.to_seconds(off_tick),
            tempo_bpm=tmap.bpm_at(on_tick),
            beat_pos=math.fmod(beats, num),
        ))
    return NoteSequence(notes, beats_per_measure=float(timesigs[0][0]))


def _varlen_bytes(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_smf(notes, tpq=480, velocity=100, channel=0):
    """Encode pitched events of ``notes`` as a format-0 SMF.

    A set-tempo event is emitted at every onset where the tempo changes.
    Times are quantized to the tick grid; notes that collapse to zero ticks
    are skipped.
    """
    # tempo map in seconds: (start_s, us_per_quarter)
    changes = []
    for e in notes.events:
        us = int(round(60e6 / e.tempo_bpm))
        if not changes:
            changes.append((0.0, us))
        elif us != changes[-1][1]:
            changes.append((e.onset_s, us))
    if not changes:
        changes = [(0.0, DEFAULT_TEMPO_US)]
    change_ticks = [0.0]
    for (s0, us0), (s1, _) in zip(changes, changes[1:]):
        change_ticks.append(change_ticks[-1] + (s1 - s0) * 1e6 * tpq / us0)

    def to_tick(t):
        i = 0
        while i + 1 < len(changes) and changes[i + 1][0] <= t:
            i += 1
        s0, us = changes[i]
        return int(math.floor(change_ticks[i] + (t - s0) * 1e6 * tpq / us + 0.5))

    # (tick, order, bytes); order puts tempo first, then offs, then ons
    timed = []
    for (s, us), tk in zip(changes, change_ticks):
        timed.append((int(math.floor(tk + 0.5)), 0, b"\xff\x51\x03" + us.to_bytes(3, "big")))
    num = int(notes.beats_per_measure) if float(notes.beats_per_measure).is_integer() else 4
    timed.append((0, 0, bytes([0xFF, 0x58, 0x04, num, 2, 24, 8])))
    for e in notes.events:
        if e.is_rest:
            continue
        on, off = to_tick(e.onset_s), to_tick(e.offset_s)
        if off <= on:
            continue
        timed.append((on, 2, bytes([0x90 | channel, e.pitch, velocity])))
        timed.append((off, 1, bytes([0x80 | channel, e.pitch, 0])))
    timed.sort(key=lambda x: (x[0], x[1]))

    body = bytearray()
    last = 0
    for tick, _, msg in timed:
        body += _varlen_bytes(tick - last) + msg
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, tpq)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


# ---------------------------------------------------------------------------
# label files


def parse_label(text):
    """Parse ``utt_id start end phoneme [start end phoneme ...]`` lines."""
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        utt_id, rest = fields[0], fields[1:]
        if len(rest) % 3:
            raise MalformedTriplet(line_no)
        entries = []
        for k in range(0, len(rest), 3):
            try:
                start, end = float(rest[k]), float(rest[k + 1])
            except ValueError:
                raise MalformedTriplet(line_no) from None
            if not (math.isfinite(start) and math.isfinite(end)) or start < 0:
                raise MalformedTriplet(line_no)
            if end <= start:
                raise NonpositiveDuration(utt_id, k // 3)
            entries.append(LabelEntry(rest[k + 2], start, end))
        for a, b in zip(entries, entries[1:]):
            if a.end_s > b.start_s:
                raise OverlappingEntries(utt_id)
        if utt_id in out:
            raise DuplicateKey(utt_id)
        out[utt_id] = LabelSequence(entries)
    return out


def format_label(labels):
    """Inverse of :func:`parse_label`; lines sorted by utt_id."""
    lines = []
    for utt_id in sorted(labels):
        parts = [utt_id]
        for e in labels[utt_id]:
            parts += [repr(float(e.start_s)), repr(float(e.end_s)), e.phoneme]
        lines.append(" ".join(parts) + "\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# normalization and segmentation


def _rest_after(prev, onset, offset, beats_per_measure):
    if prev is None:
        return NoteEvent(REST, onset, offset)
    beats = prev.beat_pos + (onset - prev.onset_s) * prev.tempo_bpm / 60.0
    return NoteEvent(REST, onset, offset, prev.tempo_bpm, math.fmod(beats, beats_per_measure))


def normalize_score(notes, total_s=None):
    """Make ``notes`` monophonic and gap-free.

    Overlapping notes are cut at the next onset, gaps (including a leading one)
    become REST events. Existing rests are regenerated, so the operation is
    idempotent. When ``total_s`` extends past the last offset a trailing rest
    is appended.
    """
    bpm = notes.beats_per_measure
    pitched = sorted((e for e in notes.events if not e.is_rest),
                     key=lambda e: (e.onset_s, e.offset_s))
    out = []
    cursor = 0.0
    prev = None
    for i, e in enumerate(pitched):
        off = e.offset_s
        if i + 1 < len(pitched):
            off = min(off, pitched[i + 1].onset_s)
        if off <= e.onset_s:
            continue
        onset = e.onset_s
        if onset - cursor > TIME_EPS:
            out.append(_rest_after(prev, cursor, onset, bpm))
        else:
            onset = cursor  # snap sub-epsilon gaps shut
        if off != e.offset_s or onset != e.onset_s:
            e = NoteEvent(e.pitch, onset, off, e.tempo_bpm, e.beat_pos)
        out.append(e)
        cursor = off
        prev = e
    if total_s is not None and total_s - cursor > TIME_EPS:
        out.append(_rest_after(prev, cursor, total_s, bpm))
    return NoteSequence(out, beats_per_measure=bpm)


@dataclass(frozen=True)
class Segment:
    notes: NoteSequence
    labels: LabelSequence
    start_s: float
    end_s: float


def _clip_notes(notes, start, end):
    clipped = []
    for e in notes.events:
        on, off = max(e.onset_s, start), min(e.offset_s, end)
        if off - on > TIME_EPS:
            clipped.append(NoteEvent(e.pitch, on - start, off - start, e.tempo_bpm, e.beat_pos))
    return NoteSequence(clipped, beats_per_measure=notes.beats_per_measure)


def segment_by_silence(notes, labels, min_sil_s, silence_tokens=SILENCE_TOKENS):
    """Cut an utterance at every silence label lasting at least ``min_sil_s``.

    Cut silences and silences at either end of a segment are dropped. Each
    segment is re-based to start at 0; its score is clipped to the segment and
    normalized to cover it exactly.
    """
    pieces, current = [], []
    for e in labels.entries:
        if e.phoneme in silence_tokens and e.duration_s >= min_sil_s - TIME_EPS:
            pieces.append(current)
            current = []
        else:
            current.append(e)
    pieces.append(current)

    segments = []
    for piece in pieces:
        while piece and piece[0].phoneme in silence_tokens:
            piece = piece[1:]
        while piece and piece[-1].phoneme in silence_tokens:
            piece = piece[:-1]
        if not piece:
            continue
        start, end = piece[0].start_s, piece[-1].end_s
        seg_labels = LabelSequence(
            LabelEntry(e.phoneme, e.start_s - start, e.end_s - start) for e in piece
        )
        seg_notes = normalize_score(_clip_notes(notes, start, end), total_s=end - start)
        segments.append(Segment(seg_notes, seg_labels, start, end))
    return segments


# ---------------------------------------------------------------------------
# rule-based transcription


def transcribe_rule_based(f0, labels, min_voiced_ratio=0.2, tempo_bpm=DEFAULT_TEMPO_BPM,
                          silence_tokens=SILENCE_TOKENS):
    """One note per label entry, pitched at the median voiced F0 inside it."""
    f0_hz = np.asarray(f0.f0_hz, dtype=float)
    if f0_hz.size == 0:
        raise EmptyF0Track("F0 track has no frames")
    voiced = np.asarray(f0.voiced, dtype=bool)
    times = f0.times
    frame_s = f0.params.hop_length / f0.params.sample_rate_hz
    events = []
    for e in labels.entries:
        mask = (times >= e.start_s) & (times < e.end_s)
        if not mask.any():
            centre = (e.start_s + e.end_s) / 2.0
            mask = np.zeros_like(voiced)
            mask[min(int(math.floor(centre / frame_s + 0.5)), len(mask) - 1)] = True
        pitch = REST
        if e.phoneme not in silence_tokens and voiced[mask].mean() >= min_voiced_ratio:
            m = hz_to_midi(float(np.median(f0_hz[mask & voiced])))
            pitch = int(min(max(math.floor(m + 0.5), 0), 127))
        beat = math.fmod(e.start_s * tempo_bpm / 60.0, 4.0)
        events.append(NoteEvent(pitch, e.start_s, e.end_s, tempo_bpm, beat))
    return NoteSequence(events)
