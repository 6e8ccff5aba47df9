"""Equal-temperament conversions between MIDI note ids and Hz."""

import numpy as np

from .errors import RestHasNoPitch

REST = 128
A4_HZ = 440.0
A4_MIDI = 69


def midi_to_hz(m):
    """Frequency of note id ``m`` (scalar or array). REST (128) has no pitch."""
    arr = np.asarray(m)
    if np.any(arr == REST):
        raise RestHasNoPitch("REST has no pitch")
    if np.any((arr < 0) | (arr > 127)):
        raise ValueError(f"note id out of range: {m!r}")
    hz = A4_HZ * np.exp2((arr - A4_MIDI) / 12.0)
    return float(hz) if hz.ndim == 0 else hz


def hz_to_midi(f):
    """Fractional note id for frequency ``f`` > 0."""
    arr = np.asarray(f, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("frequency must be positive")
    m = A4_MIDI + 12.0 * np.log2(arr / A4_HZ)
    return float(m) if m.ndim == 0 else m
