import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svspipe.dsp import F0Track, FrameParams
from svspipe.errors import (
    EmptyF0Track,
    MalformedTriplet,
    NonpositiveDuration,
    NotSmf,
    OverlappingEntries,
    SmfError,
    SvsError,
    TruncatedChunk,
    UnmatchedNoteOn,
    UnsupportedFormat,
)
from svspipe.pitch import REST, midi_to_hz
from svspipe.score import (
    LabelEntry,
    LabelSequence,
    NoteEvent,
    NoteSequence,
    format_label,
    normalize_score,
    parse_label,
    parse_smf,
    segment_by_silence,
    transcribe_rule_based,
    write_smf,
)


def _chunk(kind, body):
    return kind + struct.pack(">I", len(body)) + body


def _smf(tracks, fmt=0, tpq=480):
    head = _chunk(b"MThd", struct.pack(">HHH", fmt, len(tracks), tpq))
    return head + b"".join(_chunk(b"MTrk", t) for t in tracks)


END = b"\x00\xff\x2f\x00"


def L(*triples):
    return LabelSequence(LabelEntry(p, a, b) for p, a, b in triples)


def N(*triples, total=None):
    return NoteSequence([NoteEvent(p, a, b) for p, a, b in triples], total_s=total)


# --- SMF ---------------------------------------------------------------------


def test_single_note():
    # note 69 on at 0, off 480 ticks later (delta 480 = 0x83 0x60)
    notes = parse_smf(_smf([b"\x00\x90\x45\x64\x83\x60\x80\x45\x40" + END]))
    assert len(notes) == 1
    e = notes.events[0]
    assert (e.pitch, e.onset_s, e.offset_s, e.tempo_bpm) == (69, 0.0, 0.5, 120.0)


def test_running_status_and_velocity_zero_off():
    body = b"\x00\x90\x3c\x64\x83\x60\x3c\x00\x00\x3e\x64\x83\x60\x3e\x00" + END
    notes = parse_smf(_smf([body]))
    assert [(e.pitch, e.onset_s, e.offset_s) for e in notes] == [(60, 0, 0.5), (62, 0.5, 1.0)]


def test_tempo_change():
    # tempo 1 s per quarter from tick 480 onwards
    body = (b"\x00\x90\x3c\x64" + b"\x83\x60\xff\x51\x03\x0f\x42\x40" + b"\x83\x60\x80\x3c\x00"
            + END)
    e = parse_smf(_smf([body])).events[0]
    assert e.offset_s == pytest.approx(1.5)


def test_format1_merges_tracks():
    tempo = b"\x00\xff\x51\x03\x07\xa1\x20" + END
    notes = b"\x00\x90\x40\x64\x83\x60\x80\x40\x00" + END
    seq = parse_smf(_smf([tempo, notes], fmt=1))
    assert seq.pitches == [64]


def test_smf_errors():
    with pytest.raises(NotSmf):
        parse_smf(b"MThe" + b"\x00" * 20)
    with pytest.raises(UnsupportedFormat):
        parse_smf(_smf([END], fmt=2))
    with pytest.raises(TruncatedChunk):
        parse_smf(_smf([b"\x00\x90\x3c\x64" + END])[:-6])
    with pytest.raises(UnmatchedNoteOn):
        parse_smf(_smf([b"\x00\x90\x3c\x64" + END]))


def test_empty_track():
    seq = parse_smf(_smf([END]))
    assert len(seq) == 0 and seq.total_s == 0


def test_percussion_skipped():
    body = b"\x00\x99\x24\x64\x83\x60\x89\x24\x00" + END
    assert len(parse_smf(_smf([body]))) == 0
    assert len(parse_smf(_smf([body]), include_percussion=True)) == 1


_note_lists = st.lists(
    st.tuples(st.integers(0, 127), st.integers(1, 8)), min_size=0, max_size=12)


@given(_note_lists, st.sampled_from([60.0, 90.0, 120.0, 150.0]))
def test_write_parse_round_trip(spec, bpm):
    t, events = 0.0, []
    for pitch, quarters in spec:
        dur = quarters * 0.125 * 120 / bpm
        events.append(NoteEvent(pitch, t, t + dur, bpm))
        t += dur
    back = parse_smf(write_smf(NoteSequence(events)))
    assert back.pitches == [e.pitch for e in events]
    # SMF tempo is whole microseconds per quarter, so 90 bpm drifts slightly
    for a, b in zip(back, events):
        assert a.onset_s == pytest.approx(b.onset_s, abs=1e-5)
        assert a.offset_s == pytest.approx(b.offset_s, abs=1e-5)
        assert a.tempo_bpm == pytest.approx(bpm)


@given(st.binary(max_size=200))
def test_parse_smf_total(data):
    try:
        parse_smf(data)
    except SmfError:
        pass


@given(st.binary(max_size=120))
def test_parse_smf_total_with_valid_header(body):
    try:
        parse_smf(_smf([body]))
    except SmfError:
        pass


# --- labels ----------------------------------------------------------------


def test_parse_label():
    out = parse_label("u1 0.0 0.5 a 0.5 1.0 i\n")
    assert list(out) == ["u1"]
    assert [(e.phoneme, e.start_s, e.end_s) for e in out["u1"]] == [("a", 0, 0.5), ("i", 0.5, 1)]


def test_parse_label_errors():
    with pytest.raises(OverlappingEntries) as err:
        parse_label("u1 0.0 0.5 a 0.4 1.0 i\n")
    assert err.value.utt_id == "u1"
    with pytest.raises(MalformedTriplet) as err:
        parse_label("u1 0.0 0.5\n")
    assert err.value.line_no == 1
    with pytest.raises(NonpositiveDuration):
        parse_label("u1 0.5 0.5 a\n")
    with pytest.raises(MalformedTriplet):
        parse_label("u1 x 0.5 a\n")


@given(st.text(max_size=80))
def test_parse_label_total(text):
    try:
        parse_label(text)
    except SvsError:
        pass


@given(st.lists(st.tuples(st.sampled_from(["a", "i", "sil", "ky"]),
                          st.floats(0.001, 2.0), st.floats(0, 0.5)), max_size=8))
def test_label_format_round_trip(spec):
    t, entries = 0.0, []
    for ph, dur, gap in spec:
        t += gap
        entries.append(LabelEntry(ph, t, t + dur))
        t += dur
    labels = {"utt": LabelSequence(entries)} if entries else {}
    assert parse_label(format_label(labels)) == labels


# --- normalization ------------------------------------------------------------


def _triples(seq):
    return [(e.pitch, e.onset_s, e.offset_s) for e in seq]


def test_normalize_truncates_overlap():
    assert _triples(normalize_score(N((60, 0, 1.0), (62, 0.5, 1.5)))) == [
        (60, 0, 0.5), (62, 0.5, 1.5)]


def test_normalize_fills_gap():
    assert _triples(normalize_score(N((60, 0, 0.5), (62, 1.0, 1.5)))) == [
        (60, 0, 0.5), (REST, 0.5, 1.0), (62, 1.0, 1.5)]


def test_normalize_total_adds_trailing_rest():
    out = normalize_score(N((60, 0.5, 1.0)), total_s=2.0)
    assert _triples(out) == [(REST, 0, 0.5), (60, 0.5, 1.0), (REST, 1.0, 2.0)]


_raw_notes = st.lists(st.tuples(st.integers(0, 128), st.floats(0, 10), st.floats(0.01, 3)),
                      max_size=10)


@given(_raw_notes)
def test_normalize_idempotent_and_gap_free(raw):
    events = sorted((NoteEvent(p, on, on + d) for p, on, d in raw), key=lambda e: e.onset_s)
    out = normalize_score(NoteSequence(events))
    assert normalize_score(out) == out
    ev = out.events
    if ev:
        assert ev[0].onset_s == 0
    for a, b in zip(ev, ev[1:]):
        assert a.offset_s == b.onset_s


# --- segmentation -------------------------------------------------------------


def test_segment_example():
    labels = L(("a", 0, 1), ("sil", 1, 1.6), ("i", 1.6, 2.6))
    notes = normalize_score(N((60, 0, 1), (62, 1.6, 2.6)))
    segs = segment_by_silence(notes, labels, 0.5)
    assert [s.start_s for s in segs] == [0, 1.6]
    assert [[(e.phoneme, e.start_s, e.end_s) for e in s.labels] for s in segs] == [
        [("a", 0, 1)], [("i", 0, pytest.approx(1.0))]]
    assert segs[1].notes.pitches == [62]


def test_segment_short_silence_kept():
    labels = L(("a", 0, 1), ("sil", 1, 1.6), ("i", 1.6, 2.6))
    segs = segment_by_silence(normalize_score(N((60, 0, 2.6))), labels, 1.0)
    assert len(segs) == 1
    assert segs[0].labels.phonemes == ["a", "sil", "i"]
    assert (segs[0].start_s, segs[0].end_s) == (0, 2.6)


def test_segment_drops_boundary_silence():
    labels = L(("sil", 0, 0.2), ("a", 0.2, 1), ("pau", 1, 1.1))
    segs = segment_by_silence(normalize_score(N((60, 0.2, 1))), labels, 0.5)
    assert len(segs) == 1
    assert segs[0].start_s == 0.2 and segs[0].labels.phonemes == ["a"]


def test_segment_empty():
    assert segment_by_silence(NoteSequence(), LabelSequence(), 0.5) == []


_label_plans = st.lists(st.tuples(st.sampled_from(["a", "i", "k", "sil", "pau"]),
                                  st.integers(1, 20)), min_size=1, max_size=15)


@given(_label_plans, st.sampled_from([0.1, 0.3, 0.5, 1.0]))
def test_segment_reconstructs_timeline(plan, min_sil):
    t, entries = 0, []
    for ph, steps in plan:
        entries.append(LabelEntry(ph, t * 0.05, (t + steps) * 0.05))
        t += steps
    labels = LabelSequence(entries)
    notes = normalize_score(N((60, 0, t * 0.05)))
    segs = segment_by_silence(notes, labels, min_sil)
    kept = sum(s.end_s - s.start_s for s in segs)
    covered = sum(e.duration_s for s in segs for e in s.labels)
    removed = sum(e.duration_s for e in entries) - covered
    assert kept + removed == pytest.approx(labels.span_s, abs=1e-9)
    for a, b in zip(segs, segs[1:]):
        assert a.end_s <= b.start_s
    for s in segs:
        assert s.labels.entries[0].start_s == 0
        assert s.notes.events[-1].offset_s == pytest.approx(s.end_s - s.start_s)


# --- transcription ------------------------------------------------------------


def _track(f0, sr=24000, hop=256):
    p = FrameParams(sr, 1024, 1024, hop)
    f0 = np.asarray(f0, dtype=float)
    return F0Track(f0, f0 > 0, p)


def test_transcribe_voiced():
    track = _track([440.0] * 95)  # about 1 s of frames
    out = transcribe_rule_based(track, L(("a", 0, 1)))
    assert _triples(out) == [(69, 0, 1)]
    assert out.events[0].tempo_bpm == 120


def test_transcribe_silence_and_unvoiced():
    track = _track([440.0] * 95)
    assert transcribe_rule_based(track, L(("sil", 0, 1))).pitches == [REST]
    assert transcribe_rule_based(_track([0.0] * 95), L(("a", 0, 1))).pitches == [REST]


def test_transcribe_voicing_ratio():
    frames = [0.0] * 95
    frames[:10] = [440.0] * 10  # ~10% voiced
    assert transcribe_rule_based(_track(frames), L(("a", 0, 1))).pitches == [REST]
    frames[:30] = [440.0] * 30
    assert transcribe_rule_based(_track(frames), L(("a", 0, 1))).pitches == [69]


def test_transcribe_empty_track():
    with pytest.raises(EmptyF0Track):
        transcribe_rule_based(_track([]), L(("a", 0, 1)))


@given(st.lists(st.integers(30, 100), min_size=1, max_size=8))
def test_transcribe_recovers_pitches(pitches):
    frame_s = 256 / 24000
    f0, entries, t = [], [], 0.0
    for p in pitches:
        f0 += [float(midi_to_hz(p))] * 20
        entries.append(LabelEntry("a", t, t + 20 * frame_s))
        t += 20 * frame_s
    out = transcribe_rule_based(_track(f0), LabelSequence(entries))
    assert out.pitches == pitches
