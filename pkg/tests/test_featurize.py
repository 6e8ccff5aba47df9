import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svspipe.corpus import TokenList, token_to_id
from svspipe.dsp import FrameParams
from svspipe.errors import EmptyLabels, NoOverlappingNote, NoteTooShort, RestHasNoPitch
from svspipe.featurize import (
    REST,
    SyllableFeatures,
    frame_level_features,
    hz_to_midi,
    length_regulate,
    midi_to_hz,
    rule_based_durations,
    split_syllable_evenly,
    syllable_level_features,
)
from svspipe.score import LabelEntry, LabelSequence, NoteEvent, NoteSequence, normalize_score

TL = TokenList(["<blank>", "<unk>", "a", "i", "k", "sil", "<sos/eos>"])
A, I, K = 2, 3, 4
# sr = 16, hop = win = 4: four frames per second, as in the hand-worked cases
TINY = FrameParams(16, 4, 4, 4)


def L(*triples):
    return LabelSequence(LabelEntry(p, a, b) for p, a, b in triples)


def N(*triples, total=None):
    return normalize_score(NoteSequence([NoteEvent(p, a, b) for p, a, b in triples]), total)


# --- pitch -----------------------------------------------------------------------


def test_pitch_anchors():
    assert midi_to_hz(69) == 440.0
    assert midi_to_hz(81) == 880.0
    assert hz_to_midi(261.6256) == pytest.approx(60.0, abs=1e-3)


def test_rest_has_no_pitch():
    with pytest.raises(RestHasNoPitch):
        midi_to_hz(REST)


def test_pitch_round_trip_all():
    m = np.arange(128)
    back = hz_to_midi(midi_to_hz(m))
    assert np.max(np.abs(back - m)) <= 1e-9 * 127
    for k in range(128):
        assert round(float(hz_to_midi(midi_to_hz(k)))) == k


# --- frame level -----------------------------------------------------------------------


def _oracle_frames(starts, ids, audio_len, p):
    """Brute force: per-sample ids, then vote over the nonzero Hann support."""
    sr = p.sample_rate_hz
    sample_ids = []
    for s in range(audio_len):
        k = max([j for j, st_ in enumerate(starts) if st_ <= s / sr] or [0])
        sample_ids.append(ids[k])
    out = []
    for t in range(1 + audio_len // p.hop_length):
        c = t * p.hop_length
        window = [sample_ids[s] for s in range(audio_len) if abs(s - c) < p.win_length / 2]
        if not window:
            window = [sample_ids[min(c, audio_len - 1)]]
        counts = {}
        for v in window:
            counts[v] = counts.get(v, 0) + 1
        best = max(counts.values())
        out.append(next(v for v in window if counts[v] == best))
    return out


def test_frame_level_example():
    f = frame_level_features(L(("a", 0, 0.5), ("i", 0.5, 1.0)), N((60, 0, 1)), TL, 16, TINY)
    assert f.phoneme_ids.tolist() == [A, A, I, I, I]
    assert f.note_ids.tolist() == [60] * 5


def test_frame_level_constant():
    f = frame_level_features(L(("k", 0, 2)), N((64, 0, 2)), TL, 48000, FrameParams())
    assert set(f.phoneme_ids.tolist()) == {K}
    assert set(f.note_ids.tolist()) == {64}


def test_frame_level_all_rest():
    notes = NoteSequence([NoteEvent(REST, 0, 1)])
    f = frame_level_features(L(("a", 0, 1)), notes, TL, 16, TINY)
    assert f.note_ids.tolist() == [REST] * 5


def test_frame_level_empty_labels():
    with pytest.raises(EmptyLabels):
        frame_level_features(LabelSequence(), N((60, 0, 1)), TL, 16, TINY)


def _random_case(draw_ints, n_units, audio_len, sr):
    # contiguous labels over the audio on a grid of 1/sr
    cuts = sorted(set(draw_ints))
    bounds = [0] + [c for c in cuts if 0 < c < audio_len][: n_units - 1] + [audio_len]
    return [b / sr for b in bounds]


@given(st.integers(1, 300), st.lists(st.integers(1, 299), max_size=8),
       st.sampled_from([(64, 64, 16), (64, 32, 8), (128, 128, 32), (32, 32, 32)]),
       st.lists(st.sampled_from(["a", "i", "k", "zz"]), min_size=9, max_size=9))
def test_frame_level_matches_oracle(audio_len, cuts, geom, phs):
    n_fft, win, hop = geom
    p = FrameParams(100, n_fft, win, hop)
    bounds = _random_case(cuts, 9, audio_len, 100)
    labels = LabelSequence(LabelEntry(phs[k], a, b)
                           for k, (a, b) in enumerate(zip(bounds, bounds[1:])))
    got = frame_level_features(labels, N((60, 0, bounds[-1])), TL, audio_len, p)
    want = _oracle_frames([e.start_s for e in labels],
                          [token_to_id(TL, e.phoneme) for e in labels], audio_len, p)
    assert got.phoneme_ids.tolist() == want


# --- syllable level ---------------------------------------------------------------------


def test_syllable_example():
    labels = L(("a", 0, 0.5), ("i", 0.5, 1.0))
    s = syllable_level_features(labels, N((60, 0, 0.5), (62, 0.5, 1.0)), TL, 16, TINY)
    assert list(s.records()) == [(A, 60, 120.0, 0.0, 2), (I, 62, 120.0, 0.0, 3)]
    assert s.total_frames == 5


def test_syllable_single():
    s = syllable_level_features(L(("a", 0, 1)), N((60, 0, 1)), TL, 16, TINY)
    assert s.duration_frames.tolist() == [5]


def test_syllable_stealing():
    labels = L(("a", 0, 0.5), ("k", 0.5, 0.55), ("i", 0.55, 1.0))
    s = syllable_level_features(labels, N((60, 0, 1)), TL, 16, TINY)
    assert s.duration_frames.tolist() == [2, 1, 2]


def test_syllable_max_overlap_note():
    labels = L(("a", 0, 1.0))
    s = syllable_level_features(labels, N((60, 0, 0.3), (62, 0.3, 1.0)), TL, 16, TINY)
    assert s.note_ids.tolist() == [62]


def test_syllable_no_overlap():
    notes = NoteSequence([NoteEvent(60, 0, 0.5)])
    with pytest.raises(NoOverlappingNote) as err:
        syllable_level_features(L(("a", 0, 0.5), ("i", 0.5, 1.0)), notes, TL, 16, TINY)
    assert err.value.index == 1


def test_length_regulate():
    units = SyllableFeatures([A, I], [60, 62], [120, 120], [0, 1], [2, 3])
    out = length_regulate(units)
    assert out.phoneme_ids.tolist() == [A, A, I, I, I]
    assert out.note_ids.tolist() == [60, 60, 62, 62, 62]
    one = length_regulate(SyllableFeatures([A], [60], [120], [0], [1]))
    assert len(one) == 1


@given(st.integers(1, 4000), st.lists(st.integers(1, 3999), max_size=12),
       st.lists(st.integers(0, 128), min_size=13, max_size=13),
       st.sampled_from([(256, 256, 64), (512, 512, 128), (256, 128, 32)]))
def test_conservation(audio_len, cuts, pitches, geom):
    n_fft, win, hop = geom
    p = FrameParams(8000, n_fft, win, hop)
    bounds = _random_case(cuts, 13, audio_len, 8000)
    k = len(bounds) - 1
    if p.n_frames(audio_len) < k:
        bounds = [bounds[0], bounds[-1]]
        k = 1
    labels = LabelSequence(LabelEntry("a", a, b) for a, b in zip(bounds, bounds[1:]))
    notes = NoteSequence([NoteEvent(pitches[j], a, b)
                          for j, (a, b) in enumerate(zip(bounds, bounds[1:]))])
    syl = syllable_level_features(labels, notes, TL, audio_len, p)
    frame = frame_level_features(labels, notes, TL, audio_len, p)
    assert syl.total_frames == p.n_frames(audio_len)
    assert np.all(syl.duration_frames >= 1)
    assert len(length_regulate(syl)) == len(frame) == p.n_frames(audio_len)


# --- rule-based durations and even splits ------------------------------------------------


def test_rule_based_examples():
    assert rule_based_durations([(["k", "a"], 20)], 5) == [[5, 15]]
    assert rule_based_durations([(["a"], 7)], 5) == [[7]]
    assert rule_based_durations([(["k", "a"], 2)], 5) == [[1, 1]]
    with pytest.raises(NoteTooShort):
        rule_based_durations([(["k", "y", "a"], 2)], 5)


@given(st.lists(st.tuples(st.integers(1, 5), st.integers(0, 40)), min_size=1, max_size=8),
       st.integers(1, 10))
def test_rule_based_property(groups, consonant):
    plan = [(["x"] * n, n + extra) for n, extra in groups]
    out = rule_based_durations(plan, consonant)
    for (phs, total), durs in zip(plan, out):
        assert sum(durs) == total and len(durs) == len(phs)
        assert min(durs) >= 1


def test_split_evenly():
    out = split_syllable_evenly(LabelEntry("ka", 0.0, 0.9), ["k", "a", "t"])
    assert out.phonemes == ["k", "a", "t"]
    assert [e.start_s for e in out] == pytest.approx([0, 0.3, 0.6])
    assert out.entries[-1].end_s == 0.9
    single = split_syllable_evenly(LabelEntry("a", 0.2, 0.7), ["a"])
    assert (single[0].start_s, single[0].end_s) == (0.2, 0.7)
    assert split_syllable_evenly(LabelEntry("x", 0, 1.0), ["a", "b", "c"]).entries[-1].end_s == 1.0


@given(st.floats(0, 100), st.floats(1e-3, 10), st.integers(1, 7))
def test_split_evenly_property(start, span, n):
    entry = LabelEntry("s", start, start + span)
    out = split_syllable_evenly(entry, ["p"] * n)
    assert out.entries[0].start_s == entry.start_s
    assert out.entries[-1].end_s == entry.end_s
    for a, b in zip(out.entries, out.entries[1:]):
        assert a.end_s == b.start_s
    assert math.isclose(sum(e.duration_s for e in out), span, rel_tol=1e-9)
