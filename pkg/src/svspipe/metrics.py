"""DTW alignment and objective metrics (MCD, V/UV error, log-F0 RMSE)."""

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.fft import dct

from .dsp import estimate_f0, logmel, resample
from .errors import DimMismatch, EmptyInput

MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
N_MCEP = 25


@dataclass(eq=False)
class DtwPath:
    pairs: np.ndarray  # (K, 2) int64 rows of (ref_index, hyp_index)
    cost: float

    def __len__(self):
        return len(self.pairs)

    @property
    def ref_index(self):
        return self.pairs[:, 0]

    @property
    def hyp_index(self):
        return self.pairs[:, 1]


@dataclass(frozen=True)
class MetricsReport:
    mcd_db: float
    vuv_error_pct: float
    f0_rmse_log: float
    n_pairs: int
    n_voiced_pairs: int = 0

    def line(self, utt_id):
        return f"{utt_id} {self.mcd_db:.4f} {self.vuv_error_pct:.4f} {self.f0_rmse_log:.4f}"


def local_distances(ref, hyp):
    """Euclidean distance between every ref row and every hyp row, shape (M, N)."""
    diff = ref[:, None, :] - hyp[None, :, :]
    return np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))


@numba.njit(cache=True)
def _accumulate(dist, band):
    m, n = dist.shape
    acc = np.full((m, n), np.inf)
    for i in range(m):
        for j in range(n):
            if band >= 0 and abs(i * (n - 1) - j * (m - 1)) > band * max(m - 1, n - 1):
                continue
            if i == 0 and j == 0:
                acc[i, j] = dist[i, j]
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + dist[i, j]
    return acc


@numba.njit(cache=True)
def _backtrack(acc):
    m, n = acc.shape
    path = np.empty((m + n - 1, 2), dtype=np.int64)
    i, j = m - 1, n - 1
    k = 0
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        # prefer diagonal, then the (1, 0) step, then (0, 1)
        if i > 0 and j > 0:
            best_i, best_j = i - 1, j - 1
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best_i, best_j, best = i - 1, j, acc[i - 1, j]
            if acc[i, j - 1] < best:
                best_i, best_j = i, j - 1
        elif i > 0:
            best_i, best_j = i - 1, j
        else:
            best_i, best_j = i, j - 1
        i, j = best_i, best_j
        k += 1
        path[k, 0] = i
        path[k, 1] = j
    return path[:k + 1][::-1].copy()


def dtw_align(ref, hyp, band=None):
    """Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).

    ``band`` optionally restricts the search to a Sakoe-Chiba band expressed
    as a fraction of the longer sequence (``None`` searches the full grid).
    """
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    hyp = np.atleast_2d(np.asarray(hyp, dtype=np.float64))
    if ref.shape[0] < 1 or hyp.shape[0] < 1:
        raise EmptyInput("DTW needs at least one frame on each side")
    if ref.shape[1] != hyp.shape[1]:
        raise DimMismatch(f"feature dims differ: {ref.shape[1]} vs {hyp.shape[1]}")
    acc = _accumulate(local_distances(ref, hyp), -1.0 if band is None else float(band))
    if not np.isfinite(acc[-1, -1]):
        raise EmptyInput("band too narrow to connect the two sequences")
    return DtwPath(_backtrack(acc), float(acc[-1, -1]))


def mel_cepstrum(logmel_frames, n_coeffs=N_MCEP):
    """Orthonormal DCT-II of log-mel frames, first ``n_coeffs`` kept."""
    return dct(np.asarray(logmel_frames, dtype=np.float64), type=2, norm="ortho",
               axis=1)[:, :n_coeffs]


def mcd(ref_mcep, hyp_mcep, path):
    """Mean mel-cepstral distortion in dB over aligned pairs, c0 excluded."""
    ref_mcep = np.atleast_2d(ref_mcep)
    hyp_mcep = np.atleast_2d(hyp_mcep)
    if ref_mcep.shape[1] != hyp_mcep.shape[1]:
        raise DimMismatch("cepstra differ in dimension")
    diff = ref_mcep[path.ref_index, 1:] - hyp_mcep[path.hyp_index, 1:]
    return float(np.mean(MCD_CONST * np.sqrt(np.sum(diff * diff, axis=1))))


def _flags(track):
    return np.asarray(getattr(track, "voiced", track), dtype=bool)


def vuv_error(ref, hyp, path):
    """Percentage of aligned pairs whose voicing decisions disagree."""
    r = _flags(ref)[path.ref_index]
    h = _flags(hyp)[path.hyp_index]
    return 100.0 * float(np.count_nonzero(r != h)) / len(path)


def f0_rmse(ref, hyp, path, log=np.log):
    """RMSE of log F0 over co-voiced pairs; returns ``(rmse, n_pairs)``."""
    rf = ref.f0_hz[path.ref_index]
    hf = hyp.f0_hz[path.hyp_index]
    both = (rf > 0) & (hf > 0)
    n = int(np.count_nonzero(both))
    if n == 0:
        return 0.0, 0
    d = log(rf[both]) - log(hf[both])
    return float(np.sqrt(np.mean(d * d))), n


def evaluate(ref_wav, hyp_wav, p, n_mels=80, fmin=80.0, fmax=None, band=None):
    """MCD, V/UV error and log-F0 RMSE along one DTW path over mel-cepstra."""
    if hyp_wav.sample_rate_hz != ref_wav.sample_rate_hz:
        hyp_wav = resample(hyp_wav, ref_wav.sample_rate_hz)
    ref_c = mel_cepstrum(logmel(ref_wav, p, n_mels, fmin, fmax).frames)
    hyp_c = mel_cepstrum(logmel(hyp_wav, p, n_mels, fmin, fmax).frames)
    path = dtw_align(ref_c[:, 1:], hyp_c[:, 1:], band=band)
    ref_f0 = estimate_f0(ref_wav, p)
    hyp_f0 = estimate_f0(hyp_wav, p)
    rmse, n_voiced = f0_rmse(ref_f0, hyp_f0, path)
    return MetricsReport(
        mcd_db=mcd(ref_c, hyp_c, path),
        vuv_error_pct=vuv_error(ref_f0, hyp_f0, path),
        f0_rmse_log=rmse,
        n_pairs=len(path),
        n_voiced_pairs=n_voiced,
    )


def format_report(reports):
    """Report text: ``utt_id mcd vuv_e f0rmse`` per line, then a ``MEAN`` line."""
    ordered = [reports[u] for u in sorted(reports)]
    lines = [r.line(u) for u, r in zip(sorted(reports), ordered)]
    if ordered:
        mean = MetricsReport(
            float(np.mean([r.mcd_db for r in ordered])),
            float(np.mean([r.vuv_error_pct for r in ordered])),
            float(np.mean([r.f0_rmse_log for r in ordered])),
            sum(r.n_pairs for r in ordered),
        )
        lines.append(mean.line("MEAN"))
    return "".join(line + "\n" for line in lines)
