"""Deterministic toy corpus of sine-sung songs with known scores.

Each song is three phrases separated by long silences, so stage 2 cuts it
into three segments. Vowels are harmonic tones at the note pitch, consonants
are short noise bursts. One training song has no score (``-`` in
``midi.scp``) and one is read through a shell pipe, to exercise both paths.

    python -m svspipe.synthetic OUT_DIR [--seed S]
"""

import argparse
from pathlib import Path

import numpy as np

from .corpus import Corpus, Utterance, save_corpus
from .dsp import AudioBuffer, save_wav
from .pitch import midi_to_hz
from .score import LabelEntry, LabelSequence, NoteEvent, NoteSequence, write_smf

SOURCE_RATE_HZ = 48000
STEP_S = 1 / 16  # every boundary falls on this grid, exact in samples and ticks
VOWELS = {
    "a": (1.0, 0.6, 0.4, 0.2),
    "i": (1.0, 0.2, 0.5, 0.1),
    "u": (1.0, 0.7, 0.1, 0.05),
    "e": (1.0, 0.4, 0.3, 0.3),
    "o": (1.0, 0.8, 0.2, 0.1),
}
CONSONANTS = ("k", "s", "t")
SPLIT_SIZES = (("train", 5), ("dev", 1), ("test", 1))
SINGERS = ("singerA", "singerB")
UNSCORED_SONG = "song03"
PIPED_SONG = "song02"
AMPLITUDE = 0.25
RAMP_S = 0.005


def _song(rng):
    """Labels and notes for one song: sil, phrase, sil, phrase, sil, phrase, sil."""
    labels, notes = [], []
    t = 4  # in grid steps
    labels.append(("sil", 0, t))
    pitch = int(rng.integers(57, 69))
    for phrase in range(3):
        for _ in range(int(rng.integers(3, 6))):
            n_steps = int(rng.choice([4, 6, 8]))
            pitch = int(np.clip(pitch + rng.integers(-3, 4), 55, 74))
            notes.append((pitch, t, t + n_steps))
            vowel = str(rng.choice(list(VOWELS)))
            if rng.random() < 0.6:
                labels.append((str(rng.choice(CONSONANTS)), t, t + 1))
                labels.append((vowel, t + 1, t + n_steps))
            else:
                labels.append((vowel, t, t + n_steps))
            t += n_steps
        gap = 4 if phrase == 2 else int(rng.choice([8, 10, 12]))
        labels.append(("sil", t, t + gap))
        t += gap
    label_seq = LabelSequence(LabelEntry(ph, a * STEP_S, b * STEP_S) for ph, a, b in labels)
    note_seq = NoteSequence([NoteEvent(p, a * STEP_S, b * STEP_S) for p, a, b in notes],
                            total_s=t * STEP_S)
    return label_seq, note_seq


def render(labels, notes, rng, sample_rate_hz=SOURCE_RATE_HZ):
    """Waveform for ``labels`` sung on ``notes``."""
    n = int(round(labels.entries[-1].end_s * sample_rate_hz))
    out = np.zeros(n)
    ramp = int(RAMP_S * sample_rate_hz)
    for entry in labels:
        lo = int(round(entry.start_s * sample_rate_hz))
        hi = int(round(entry.end_s * sample_rate_hz))
        if entry.phoneme == "sil":
            continue
        t = np.arange(hi - lo) / sample_rate_hz
        if entry.phoneme in VOWELS:
            note = next(e for e in notes.events if e.onset_s <= entry.start_s < e.offset_s)
            f0 = float(midi_to_hz(note.pitch))
            phase = rng.uniform(0, 2 * np.pi)
            seg = sum(w * np.sin(2 * np.pi * (h + 1) * f0 * t + phase * (h + 1))
                      for h, w in enumerate(VOWELS[entry.phoneme]))
            seg = seg / sum(VOWELS[entry.phoneme])
        else:
            seg = 0.15 * rng.standard_normal(hi - lo)
        env = np.ones(hi - lo)
        r = min(ramp, (hi - lo) // 2)
        env[:r] = np.linspace(0, 1, r, endpoint=False)
        env[hi - lo - r:] = np.linspace(1, 0, r, endpoint=False)
        out[lo:hi] = AMPLITUDE * seg * env
    return AudioBuffer(out, sample_rate_hz)


def make_corpus(out_dir, seed=0):
    """Write ``train``/``dev``/``test`` Kaldi-style directories under ``out_dir``."""
    out_dir = Path(out_dir)
    index = 0
    singer_table = {s: i for i, s in enumerate(SINGERS)}
    for split, size in SPLIT_SIZES:
        split_dir = out_dir / split
        (split_dir / "wav").mkdir(parents=True, exist_ok=True)
        (split_dir / "midi").mkdir(parents=True, exist_ok=True)
        utts = []
        for _ in range(size):
            index += 1
            utt_id = f"song{index:02d}"
            rng = np.random.default_rng([seed, index])
            labels, notes = _song(rng)
            save_wav(split_dir / "wav" / f"{utt_id}.wav", render(labels, notes, rng))
            audio_ref = f"wav/{utt_id}.wav"
            if utt_id == PIPED_SONG:
                audio_ref = f"cat {audio_ref} |"
            midi_ref = "-"
            if utt_id != UNSCORED_SONG:
                midi_ref = f"midi/{utt_id}.mid"
                (split_dir / midi_ref).write_bytes(write_smf(notes))
            utts.append(Utterance(utt_id, audio_ref, midi_ref, labels,
                                  SINGERS[index % len(SINGERS)], "jpn"))
        save_corpus(Corpus(split, utts, singer_table, {"jpn": 0}), split_dir)
    return out_dir


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    make_corpus(args.out_dir, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
