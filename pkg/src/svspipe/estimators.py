"""scikit-learn style wrappers around the feature extractors."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import dsp
from .featurize import frame_level_features, syllable_level_features
from .metrics import mel_cepstrum


class LogMel(TransformerMixin, BaseEstimator):
    """AudioBuffer list -> list of (frames, n_mels) log-mel matrices."""

    def __init__(self, sample_rate_hz=24000, n_fft=1024, win_length=1024, hop_length=256,
                 n_mels=80, fmin_hz=80.0, fmax_hz=None, griffin_lim_iters=32):
        self.sample_rate_hz = sample_rate_hz
        self.n_fft = n_fft
        self.win_length = win_length
        self.hop_length = hop_length
        self.n_mels = n_mels
        self.fmin_hz = fmin_hz
        self.fmax_hz = fmax_hz
        self.griffin_lim_iters = griffin_lim_iters

    @property
    def frame_params(self):
        return dsp.FrameParams(self.sample_rate_hz, self.n_fft, self.win_length, self.hop_length)

    def fit(self, X=None, y=None):
        self.frame_params_ = self.frame_params
        return self

    def transform(self, X):
        p = self.frame_params
        out = []
        for audio in X:
            audio = dsp.resample(audio, p.sample_rate_hz)
            out.append(dsp.logmel(audio, p, self.n_mels, self.fmin_hz, self.fmax_hz).frames)
        return out

    def inverse_transform(self, X):
        """Griffin-Lim reconstruction of each log-mel matrix."""
        p = self.frame_params
        fmax = self.fmax_hz or p.sample_rate_hz / 2
        return [dsp.griffin_lim(dsp.MelSpectrogram(np.asarray(m, dtype=np.float64), p,
                                                   self.n_mels, self.fmin_hz, fmax),
                                self.griffin_lim_iters)
                for m in X]


class MelCepstrum(TransformerMixin, BaseEstimator):
    def __init__(self, n_coeffs=25):
        self.n_coeffs = n_coeffs

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [mel_cepstrum(m, self.n_coeffs) for m in X]


class F0(TransformerMixin, BaseEstimator):
    """AudioBuffer list -> list of F0Track."""

    def __init__(self, n_fft=1024, win_length=1024, hop_length=256, fmin_hz=50.0,
                 fmax_hz=1000.0, threshold=0.15):
        self.n_fft = n_fft
        self.win_length = win_length
        self.hop_length = hop_length
        self.fmin_hz = fmin_hz
        self.fmax_hz = fmax_hz
        self.threshold = threshold

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        out = []
        for audio in X:
            p = dsp.FrameParams(audio.sample_rate_hz, self.n_fft, self.win_length,
                                self.hop_length)
            out.append(dsp.estimate_f0(audio, p, self.fmin_hz, self.fmax_hz, self.threshold))
        return out


class ScoreFeaturizer(TransformerMixin, BaseEstimator):
    """(labels, notes, audio_len) triples -> frame or syllable features."""

    def __init__(self, token_list=None, level="frame", sample_rate_hz=24000, n_fft=1024,
                 win_length=1024, hop_length=256):
        self.token_list = token_list
        self.level = level
        self.sample_rate_hz = sample_rate_hz
        self.n_fft = n_fft
        self.win_length = win_length
        self.hop_length = hop_length

    def fit(self, X=None, y=None):
        if self.token_list is None:
            raise ValueError("token_list is required")
        if self.level not in ("frame", "syllable"):
            raise ValueError("level must be 'frame' or 'syllable'")
        return self

    def transform(self, X):
        self.fit()
        p = dsp.FrameParams(self.sample_rate_hz, self.n_fft, self.win_length, self.hop_length)
        fn = frame_level_features if self.level == "frame" else syllable_level_features
        return [fn(labels, notes, self.token_list, audio_len, p)
                for labels, notes, audio_len in X]


class FeatureStats(BaseEstimator):
    """Single-pass per-dimension mean and variance; batches merge exactly.

    Batches are combined with the pairwise update of Chan et al., so the
    result does not depend on how the frames were chunked (up to rounding).
    """

    def fit(self, X, y=None):
        for attr in ("n_samples_seen_", "mean_", "m2_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            return self
        mean = X.mean(axis=0)
        d = X - mean
        return self.merge(X.shape[0], mean, np.einsum("ij,ij->j", d, d))

    def merge(self, n, mean, m2):
        """Fold in a batch summarized by its count, mean and sum of squared deviations."""
        if n == 0:
            return self
        if getattr(self, "n_samples_seen_", 0) == 0:
            self.n_samples_seen_ = int(n)
            self.mean_ = np.array(mean, dtype=np.float64)
            self.m2_ = np.array(m2, dtype=np.float64)
            return self
        na, nb = self.n_samples_seen_, int(n)
        total = na + nb
        delta = mean - self.mean_
        self.mean_ = self.mean_ + delta * (nb / total)
        self.m2_ = self.m2_ + m2 + delta * delta * (na * nb / total)
        self.n_samples_seen_ = total
        return self

    @property
    def var_(self):
        return self.m2_ / self.n_samples_seen_

    def transform(self, X):
        """Standardize with the accumulated statistics."""
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) / np.sqrt(np.maximum(self.var_, 1e-12))
