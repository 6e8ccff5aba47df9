import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import sine
from svspipe.dsp import AudioBuffer, F0Track, FrameParams
from svspipe.errors import DimMismatch, EmptyInput
from svspipe.metrics import (
    MCD_CONST,
    DtwPath,
    MetricsReport,
    dtw_align,
    evaluate,
    f0_rmse,
    format_report,
    local_distances,
    mcd,
    mel_cepstrum,
    vuv_error,
)

P = FrameParams()


def brute_force_dtw(ref, hyp):
    """Minimum cost over every monotone path, by explicit enumeration."""
    d = local_distances(np.atleast_2d(ref), np.atleast_2d(hyp))
    m, n = d.shape
    best = math.inf

    def walk(i, j, cost):
        nonlocal best
        cost += d[i, j]
        if (i, j) == (m - 1, n - 1):
            best = min(best, cost)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < m and j + dj < n:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best


def _diag(n):
    idx = np.arange(n)
    return DtwPath(np.stack([idx, idx], axis=1), 0.0)


def _track(f0):
    f0 = np.asarray(f0, dtype=float)
    return F0Track(f0, f0 > 0, P)


# --- DTW --------------------------------------------------------------------------------


def test_dtw_identity_is_diagonal():
    x = np.random.default_rng(0).standard_normal((6, 3))
    path = dtw_align(x, x)
    assert path.cost == 0.0
    assert path.pairs.tolist() == [[i, i] for i in range(6)]


def test_dtw_single_row():
    path = dtw_align(np.zeros((1, 2)), np.ones((4, 2)))
    assert path.pairs.tolist() == [[0, 0], [0, 1], [0, 2], [0, 3]]


def test_dtw_errors():
    with pytest.raises(DimMismatch):
        dtw_align(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(EmptyInput):
        dtw_align(np.zeros((0, 3)), np.zeros((2, 3)))


def test_dtw_5x3_vs_6x3():
    rng = np.random.default_rng(5)
    ref, hyp = rng.standard_normal((5, 3)), rng.standard_normal((6, 3))
    assert dtw_align(ref, hyp).cost == pytest.approx(brute_force_dtw(ref, hyp), abs=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_dtw_against_oracle(m, n, d, seed):
    rng = np.random.default_rng(seed)
    ref, hyp = rng.standard_normal((m, d)), rng.standard_normal((n, d))
    path = dtw_align(ref, hyp)
    dist = local_distances(ref, hyp)
    assert path.cost == pytest.approx(brute_force_dtw(ref, hyp), rel=1e-12)
    # path invariants and that its cost is what it claims
    p = path.pairs
    assert p[0].tolist() == [0, 0] and p[-1].tolist() == [m - 1, n - 1]
    steps = np.diff(p, axis=0)
    assert all(tuple(s) in {(1, 0), (0, 1), (1, 1)} for s in steps)
    assert dist[p[:, 0], p[:, 1]].sum() == pytest.approx(path.cost, rel=1e-12)


def test_dtw_band():
    x = np.random.default_rng(1).standard_normal((20, 3))
    assert dtw_align(x, x, band=0.1).cost == 0.0


# --- MCD ---------------------------------------------------------------------------------


def test_mcd_anchor():
    ref = np.zeros((1, 25))
    hyp = np.zeros((1, 25))
    hyp[0, 3] = 1.0
    assert mcd(ref, hyp, _diag(1)) == pytest.approx(10 / math.log(10) * math.sqrt(2), abs=1e-12)
    assert MCD_CONST == pytest.approx(6.14185, abs=1e-5)


def test_mcd_identity_and_c0():
    x = np.random.default_rng(2).standard_normal((4, 25))
    assert mcd(x, x, _diag(4)) == 0.0
    y = x.copy()
    y[:, 0] += 5
    assert mcd(x, y, _diag(4)) == 0.0


def test_mcd_dim_mismatch():
    with pytest.raises(DimMismatch):
        mcd(np.zeros((2, 25)), np.zeros((2, 24)), _diag(2))


@given(st.integers(0, 1000))
def test_mcd_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 5, 25))
    path = _diag(5)
    assert mcd(a, b, path) == mcd(b, a, path) >= 0


# --- V/UV and F0 --------------------------------------------------------------------------


def test_vuv_fixtures():
    on = _track([100.0] * 4)
    off = _track([0.0] * 4)
    half = _track([100.0, 0.0, 100.0, 0.0])
    assert vuv_error(on, on, _diag(4)) == 0.0
    assert vuv_error(on, off, _diag(4)) == 100.0
    assert vuv_error(on, half, _diag(4)) == 50.0


def test_f0_rmse_fixtures():
    a = _track([220.0] * 5)
    b = _track([440.0] * 5)
    assert f0_rmse(a, a, _diag(5)) == (0.0, 5)
    rmse, n = f0_rmse(a, b, _diag(5))
    assert rmse == pytest.approx(math.log(2), abs=1e-12) and n == 5
    assert f0_rmse(a, _track([0.0] * 5), _diag(5)) == (0.0, 0)


def test_metrics_absorb_time_shift():
    rng = np.random.default_rng(4)
    c = rng.standard_normal((30, 24))
    f0 = np.where(rng.random(30) > 0.3, rng.uniform(100, 400, 30), 0.0)
    k = 3
    c2 = np.concatenate([np.repeat(c[:1], k, axis=0), c])
    f2 = np.concatenate([np.repeat(f0[:1], k), f0])
    p1 = _diag(30)
    p2 = dtw_align(c, c2)
    assert p2.cost == 0.0
    assert vuv_error(_track(f0), _track(f2), p2) == vuv_error(_track(f0), _track(f0), p1)
    assert f0_rmse(_track(f0), _track(f2), p2)[0] == 0.0


# --- evaluate and report ------------------------------------------------------------------


def test_mel_cepstrum_orthonormal():
    x = np.random.default_rng(0).standard_normal((3, 80))
    c = mel_cepstrum(x, 80)
    assert np.allclose(np.linalg.norm(c, axis=1), np.linalg.norm(x, axis=1))
    assert c[:, 0] == pytest.approx(x.sum(axis=1) / math.sqrt(80))
    assert mel_cepstrum(x).shape == (3, 25)


def test_evaluate_identity():
    a = sine(220.0, seconds=0.5)
    r = evaluate(a, a, P)
    assert (r.mcd_db, r.vuv_error_pct, r.f0_rmse_log) == (0.0, 0.0, 0.0)


def test_evaluate_semitone():
    ref = sine(220.0, seconds=1.0)
    hyp = sine(220.0 * 2 ** (1 / 12), seconds=1.0)
    r = evaluate(ref, hyp, P)
    assert r.f0_rmse_log == pytest.approx(math.log(2) / 12, abs=2e-3)


def test_evaluate_silence_hyp():
    ref = sine(220.0, seconds=1.0)
    r = evaluate(ref, AudioBuffer(np.zeros(24000), 24000), P)
    assert r.vuv_error_pct > 90


def test_evaluate_deterministic():
    ref = sine(220.0, seconds=0.5)
    hyp = sine(230.0, seconds=0.5, amp=0.3)
    assert evaluate(ref, hyp, P) == evaluate(ref, hyp, P)


def test_format_report():
    reports = {"b": MetricsReport(2.0, 10.0, 0.5, 3), "a": MetricsReport(1.0, 0.0, 0.25, 2)}
    assert format_report(reports) == (
        "a 1.0000 0.0000 0.2500\n"
        "b 2.0000 10.0000 0.5000\n"
        "MEAN 1.5000 5.0000 0.3750\n"
    )
    assert format_report({}) == ""
