"""Audio I/O and signal processing.

WAV reading/writing, resampling, a centered STFT and its least-squares
inverse, Slaney-normalized mel filterbanks, log-mel features, a YIN-style F0
tracker, Griffin-Lim phase reconstruction and the ``MSKF`` feature dump format.
"""

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import nnls
from scipy.signal import resample_poly

from .errors import (
    BadDump,
    BadRange,
    EmptySignal,
    NotRiff,
    ShapeMismatch,
    UnsupportedCodec,
)

LOG_FLOOR = 1e-10
WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
DUMP_MAGIC = b"MSKF"


@dataclass(frozen=True)
class FrameParams:
    sample_rate_hz: int = 24000
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    window: str = "hann"

    def __post_init__(self):
        for name in ("sample_rate_hz", "n_fft", "win_length", "hop_length"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.n_fft & (self.n_fft - 1):
            raise ValueError("n_fft must be a power of two")
        if self.win_length > self.n_fft:
            raise ValueError("win_length must not exceed n_fft")
        if self.hop_length > self.win_length or self.win_length % self.hop_length:
            raise ValueError("hop_length must divide win_length")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def cola(self):
        """True when overlap-add inversion is well posed (win/hop >= 2)."""
        return self.win_length // self.hop_length >= 2

    def n_frames(self, n_samples):
        return 1 + n_samples // self.hop_length


@dataclass(eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be a positive integer")
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(eq=False)
class MelSpectrogram:
    frames: np.ndarray
    params: FrameParams
    n_mels: int = 80
    fmin_hz: float = 80.0
    fmax_hz: float = None

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass(eq=False)
class F0Track:
    f0_hz: np.ndarray
    voiced: np.ndarray
    params: FrameParams

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape:
            raise ShapeMismatch("f0 and voicing flags differ in length")
        if np.any(self.f0_hz < 0) or np.any(self.voiced != (self.f0_hz > 0)):
            raise ValueError("voiced[i] must hold exactly when f0[i] > 0")

    def __len__(self):
        return len(self.f0_hz)

    @property
    def times(self):
        return np.arange(len(self.f0_hz)) * self.params.hop_length / self.params.sample_rate_hz


def _samples(a):
    return a.samples if isinstance(a, AudioBuffer) else np.asarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# WAV


def read_wav(data):
    """Decode RIFF/WAVE PCM16 or float32; multichannel input is averaged."""
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotRiff("not a RIFF/WAVE stream")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise NotRiff("fmt chunk too short")
            code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
            if code == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise NotRiff("extensible fmt chunk too short")
                (code,) = struct.unpack("<H", body[24:26])
            fmt = (code, channels, rate, bits)
        elif cid == b"data":
            pcm = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None or pcm is None:
        raise NotRiff("missing fmt or data chunk")
    code, channels, rate, bits = fmt
    if channels < 1 or rate < 1:
        raise NotRiff("invalid channel count or sample rate")
    if code == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif code == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedCodec(code)
    frame_bytes = channels * bits // 8
    n = len(pcm) // frame_bytes
    x = np.frombuffer(pcm[:n * frame_bytes], dtype=dtype).astype(np.float64) * scale
    x = x.reshape(n, channels).mean(axis=1)
    return AudioBuffer(x, rate)


def write_wav(a):
    """Encode as mono PCM16 with round-half-away-from-zero quantization."""
    x = np.clip(_samples(a), -1.0, 1.0) * 32768.0
    q = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), -32768, 32767).astype("<i2")
    pcm = q.tobytes()
    rate = a.sample_rate_hz
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, WAVE_FORMAT_PCM, 1, rate, rate * 2, 2, 16)
    return header + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm


def load_wav(path):
    return read_wav(Path(path).read_bytes())


def save_wav(path, a):
    Path(path).write_bytes(write_wav(a))


# ---------------------------------------------------------------------------
# resampling


def resample(a, target_hz):
    """Polyphase windowed-sinc resampling to ``target_hz``.

    Output length is ``round(len * target / source)``.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_hz == a.sample_rate_hz:
        return AudioBuffer(a.samples.copy(), target_hz)
    g = math.gcd(target_hz, a.sample_rate_hz)
    up, down = target_hz // g, a.sample_rate_hz // g
    n_out = int(math.floor(len(a.samples) * target_hz / a.sample_rate_hz + 0.5))
    if len(a.samples) == 0:
        return AudioBuffer(np.zeros(0), target_hz)
    y = resample_poly(a.samples, up, down)
    if len(y) < n_out:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return AudioBuffer(y[:n_out], target_hz)


# ---------------------------------------------------------------------------
# STFT


@functools.lru_cache(maxsize=32)
def _window(n_fft, win_length):
    n = np.arange(win_length)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)
    left = (n_fft - win_length) // 2
    out = np.zeros(n_fft)
    out[left:left + win_length] = w
    out.flags.writeable = False
    return out


def analysis_window(p):
    """Periodic Hann over ``win_length``, zero-padded to ``n_fft`` (read-only)."""
    return _window(p.n_fft, p.win_length)


def _frame_spectra(padded, p):
    frames = sliding_window_view(padded, p.n_fft)[::p.hop_length]
    return np.fft.rfft(frames * analysis_window(p), axis=1)


def _overlap_add(spec, p):
    """Least-squares signal for ``spec`` on the padded (uncentered) time axis."""
    w = analysis_window(p)
    frames = np.fft.irfft(spec, n=p.n_fft, axis=1) * w
    n_frames = spec.shape[0]
    n = p.n_fft + p.hop_length * (n_frames - 1)
    y = np.zeros(n)
    wsum = np.zeros(n)
    w2 = w * w
    for t in range(n_frames):
        s = t * p.hop_length
        y[s:s + p.n_fft] += frames[t]
        wsum[s:s + p.n_fft] += w2
    nz = wsum > 1e-10
    y[nz] /= wsum[nz]
    y[~nz] = 0.0
    return y


def stft(a, p):
    """Centered STFT, reflect-padded by ``n_fft // 2``; shape (frames, n_fft//2 + 1)."""
    x = _samples(a)
    if x.size == 0:
        raise EmptySignal("cannot analyse an empty signal")
    pad = p.n_fft // 2
    return _frame_spectra(np.pad(x, pad, mode="reflect"), p)


def istft(spec, p, length=None):
    """Inverse of :func:`stft` by window-square normalized overlap-add.

    The default output length is ``hop * (frames - 1)``; pass ``length`` to
    trim or zero-extend to an exact sample count.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != p.n_fft // 2 + 1:
        raise ShapeMismatch(f"expected (frames, {p.n_fft // 2 + 1}) spectrogram, got {spec.shape}")
    if not p.cola:
        raise ValueError("istft needs win_length / hop_length >= 2")
    if length is None:
        length = p.hop_length * (spec.shape[0] - 1)
    if spec.shape[0] == 0:
        return AudioBuffer(np.zeros(length), p.sample_rate_hz)
    y = _overlap_add(spec, p)[p.n_fft // 2:]
    out = np.zeros(length)
    k = min(length, len(y))
    out[:k] = y[:k]
    return AudioBuffer(out, p.sample_rate_hz)


# ---------------------------------------------------------------------------
# mel features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=16)
def _mel_filterbank(sample_rate_hz, n_fft, n_mels, fmin, fmax):
    if n_mels < 1:
        raise BadRange("n_mels must be >= 1")
    if not 0 <= fmin < fmax <= sample_rate_hz / 2:
        raise BadRange(f"need 0 <= fmin < fmax <= {sample_rate_hz / 2}, got ({fmin}, {fmax})")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, centre, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (centre - lo)
        falling = (hi - freqs) / (hi - centre)
        row = np.maximum(0.0, np.minimum(rising, falling))
        if not row.any():
            # triangle narrower than the bin spacing
            row[np.argmin(np.abs(freqs - centre))] = 1.0
        fb[i] = row * 2.0 / (hi - lo)
    fb.flags.writeable = False
    return fb


def mel_filterbank(p, n_mels=80, fmin=80.0, fmax=None):
    """Slaney-normalized triangular filters, shape (n_mels, n_fft//2 + 1)."""
    if fmax is None:
        fmax = p.sample_rate_hz / 2
    return _mel_filterbank(p.sample_rate_hz, p.n_fft, int(n_mels), float(fmin), float(fmax))


def logmel(a, p, n_mels=80, fmin=80.0, fmax=None):
    """Natural-log mel magnitudes, floored at 1e-10; shape (frames, n_mels)."""
    if isinstance(a, AudioBuffer) and a.sample_rate_hz != p.sample_rate_hz:
        raise ValueError("audio and frame parameters disagree on the sample rate")
    fmax = p.sample_rate_hz / 2 if fmax is None else fmax
    fb = mel_filterbank(p, n_mels, fmin, fmax)
    mag = np.abs(stft(a, p))
    frames = np.log(np.maximum(mag @ fb.T, LOG_FLOOR))
    return MelSpectrogram(frames, p, int(n_mels), float(fmin), float(fmax))


# ---------------------------------------------------------------------------
# F0


def _yin_lags(p, fmin_hz, fmax_hz):
    tau_min = max(1, int(math.floor(p.sample_rate_hz / fmax_hz)))
    tau_max = int(math.ceil(p.sample_rate_hz / fmin_hz))
    return tau_min, tau_max


def estimate_f0(a, p, fmin_hz=50.0, fmax_hz=1000.0, threshold=0.15):
    """YIN-style F0 tracking on the same frame grid as :func:`stft`.

    Each frame integrates ``max(win_length // 2, tau_max)`` samples of squared
    difference. A frame is voiced when its cumulative-mean-normalized
    difference dips below ``threshold`` within the lag range; the first such
    dip is followed to its local minimum and refined by parabolic interpolation.
    """
    x = _samples(a)
    sr = p.sample_rate_hz
    if sr < 2 * fmax_hz:
        raise ValueError("sample rate must be at least twice fmax_hz")
    if not 0 < fmin_hz < fmax_hz:
        raise BadRange("need 0 < fmin_hz < fmax_hz")
    n_frames = p.n_frames(len(x))
    tau_min, tau_max = _yin_lags(p, fmin_hz, fmax_hz)
    width = max(p.win_length // 2, tau_max)
    seg_len = width + tau_max
    left = seg_len // 2
    mode = "reflect" if len(x) > 1 else "constant"
    padded = np.pad(x, (left, seg_len - left), mode=mode)
    segs = sliding_window_view(padded, seg_len)[::p.hop_length][:n_frames]

    nfft = 1 << int(math.ceil(math.log2(seg_len + width)))
    head = np.zeros((n_frames, nfft))
    head[:, :width] = segs[:, :width]
    corr = np.fft.irfft(np.conj(np.fft.rfft(head, axis=1)) * np.fft.rfft(segs, n=nfft, axis=1),
                        n=nfft, axis=1)[:, :tau_max + 1]
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(segs ** 2, axis=1)], axis=1)
    lags = np.arange(tau_max + 1)
    energy0 = csum[:, width:width + 1]
    energy_lag = csum[:, lags + width] - csum[:, lags]
    diff = np.maximum(energy0 + energy_lag - 2.0 * corr, 0.0)
    diff[:, 0] = 0.0

    running = np.cumsum(diff[:, 1:], axis=1)
    cmnd = np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = diff[:, 1:] * lags[1:] / running
    ok = running > 1e-12 * np.maximum(energy0, 1e-300)
    cmnd[:, 1:] = np.where(ok, ratio, 1.0)

    f0 = np.zeros(n_frames)
    band = cmnd[:, tau_min:tau_max + 1]
    below = band < threshold
    for t in np.flatnonzero(below.any(axis=1)):
        tau = tau_min + int(np.argmax(below[t]))
        row = cmnd[t]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        shift = 0.0
        if 1 <= tau - 1 and tau + 1 <= tau_max:
            a_, b_, c_ = row[tau - 1], row[tau], row[tau + 1]
            denom = a_ - 2.0 * b_ + c_
            if denom > 0:
                shift = 0.5 * (a_ - c_) / denom
        f0[t] = sr / (tau + shift)
    return F0Track(f0, f0 > 0, p)


# ---------------------------------------------------------------------------
# Griffin-Lim


def mel_to_linear(mel, method="nnls"):
    """Linear STFT magnitudes (frames, bins) from a log-mel spectrogram."""
    fb = mel_filterbank(mel.params, mel.n_mels, mel.fmin_hz, mel.fmax_hz)
    target = np.exp(np.asarray(mel.frames, dtype=np.float64))
    if method == "pinv":
        return np.maximum(target @ np.linalg.pinv(fb).T, 0.0)
    if method == "nnls":
        return np.stack([nnls(fb, row)[0] for row in target]) if len(target) else \
            np.zeros((0, fb.shape[1]))
    raise ValueError(f"unknown mel inversion method {method!r}")


def spectral_error(spec, magnitude):
    """Frobenius distance between |spec| and ``magnitude`` over the full two-sided spectrum.

    One-sided bins other than DC and Nyquist stand for two conjugate bins and
    are counted twice, which is the norm Griffin-Lim decreases.
    """
    d2 = (np.abs(spec) - magnitude) ** 2
    weights = np.full(d2.shape[1], 2.0)
    weights[0] = 1.0
    if d2.shape[1] > 1:
        weights[-1] = 1.0
    return float(np.sqrt(np.sum(d2 * weights)))


def griffin_lim(mel, iters=32, method="nnls", length=None, peak=0.95, history=None):
    """Reconstruct a waveform from a log-mel spectrogram.

    Phase starts at zero. If ``history`` is a list, the spectral error of every
    iterate is appended to it. The result is scaled down when its peak exceeds
    ``peak``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p = mel.params
    if not p.cola:
        raise ValueError("Griffin-Lim needs win_length / hop_length >= 2")
    magnitude = mel_to_linear(mel, method)
    n_frames = magnitude.shape[0]
    if length is None:
        length = p.hop_length * (n_frames - 1)
    if n_frames == 0:
        return AudioBuffer(np.zeros(length), p.sample_rate_hz)

    spec = magnitude.astype(np.complex128)
    for _ in range(iters):
        y = _overlap_add(spec, p)
        rebuilt = _frame_spectra(y, p)
        if history is not None:
            history.append(spectral_error(rebuilt, magnitude))
        spec = magnitude * np.exp(1j * np.angle(rebuilt))

    body = y[p.n_fft // 2:]
    out = np.zeros(length)
    k = min(length, len(body))
    out[:k] = body[:k]
    top = np.max(np.abs(out)) if out.size else 0.0
    if top > peak:
        out *= peak / top
    return AudioBuffer(out, p.sample_rate_hz)


# ---------------------------------------------------------------------------
# MSKF feature dumps


def dump_features(matrix):
    """Encode a 2-D matrix as ``MSKF`` + u32 rows + u32 cols + float32 row-major."""
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeMismatch("feature dumps hold 2-D matrices")
    rows, cols = m.shape
    return DUMP_MAGIC + struct.pack("<II", rows, cols) + np.ascontiguousarray(m).tobytes()


def load_features(data, name="<bytes>"):
    data = bytes(data)
    if len(data) < 12 or data[:4] != DUMP_MAGIC:
        raise BadDump(name, "bad header")
    rows, cols = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * rows * cols:
        raise BadDump(name, f"expected {rows}x{cols} float32 payload")
    return np.frombuffer(data[12:], dtype="<f4").reshape(rows, cols).copy()


def save_features(path, matrix):
    Path(path).write_bytes(dump_features(matrix))


def read_features(path):
    path = Path(path)
    return load_features(path.read_bytes(), name=path.name)
