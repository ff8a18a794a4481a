import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simulst.errors import InvalidLog, InvalidProfile, InvalidReference
from simulst.metrics import DelayProfile, bleu_lite, delays_from_log, fit_r2, laal
from simulst.streaming import ReadEvent, SessionEventLog, WriteEvent


def profile(delays, T, ref_len=None, ca=None):
    return DelayProfile(list(delays), list(ca or delays), T, len(delays), ref_len or len(delays))


def average_lagging(delays, T, ref_len):
    # independent reference: tau over 0-based index, offsets by ref rate
    gamma = T / ref_len
    lags = []
    for i, d in enumerate(delays):
        lags.append(d - i * gamma)
        if d >= T:
            break
    return sum(lags) / len(lags)


class TestLaal:
    def test_three_words(self):
        assert laal(profile([1000, 2000, 3000], 3000)) == 1000

    def test_single_word_at_end(self):
        assert laal(profile([3000], 3000)) == 3000

    def test_longer_reference(self):
        assert laal(profile([1000, 2000, 3000], 3000, ref_len=6)) == 1500

    def test_invalid(self):
        with pytest.raises(InvalidProfile):
            laal(profile([1.0], 0))
        with pytest.raises(InvalidProfile):
            laal(DelayProfile([], [], 1000, 0, 1))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 10), min_size=1, max_size=12), st.integers(0, 20))
    def test_matches_average_lagging_when_hyp_short(self, steps, extra):
        delays = list(np.cumsum(steps) * 100.0)
        T = float(delays[-1])
        ref_len = len(delays) + extra
        assert laal(profile(delays, T, ref_len)) == pytest.approx(average_lagging(delays, T, ref_len))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 10), min_size=2, max_size=12), st.integers(1, 5))
    def test_length_adaptive(self, steps, short_ref):
        delays = list(np.cumsum(steps) * 100.0)
        T = float(delays[-1])
        ref_len = min(short_ref, len(delays) - 1)
        # a long hypothesis is not rewarded with a larger offset
        assert laal(profile(delays, T, ref_len)) >= average_lagging(delays, T, ref_len) - 1e-9


class TestDelays:
    def test_shared_write_delays(self):
        log = SessionEventLog([ReadEvent(0, 1000, 1000), WriteEvent((3, 4), 2, 1050, 1000)])
        p = delays_from_log(log)
        assert p.d_nca == [1000, 1000]
        assert p.d_ca == [1050, 1050]
        assert p.source_ms == 1000

    def test_zero_cost(self):
        log = SessionEventLog([ReadEvent(0, 1000, 1000), WriteEvent((3,), 1, 1000, 1000),
                               ReadEvent(1, 2000, 2000), WriteEvent((4, 5), 2, 2000, 2000)])
        p = delays_from_log(log)
        assert p.d_ca == p.d_nca
        assert laal(p, "ca") == laal(p, "nca")

    def test_write_first_is_invalid(self):
        log = SessionEventLog()
        log.events.append(WriteEvent((3,), 1, 0, 0))
        with pytest.raises(InvalidLog):
            delays_from_log(log)


class TestBleu:
    def test_identical(self):
        assert bleu_lite([3, 4, 5, 6, 7], [3, 4, 5, 6, 7]) == pytest.approx(1.0)

    def test_disjoint(self):
        assert bleu_lite(list(range(10)), list(range(10, 20))) < 0.05

    def test_empty_hypothesis(self):
        assert bleu_lite([], [1, 2]) == 0.0

    def test_empty_reference(self):
        with pytest.raises(InvalidReference):
            bleu_lite([1], [])

    def test_brevity_penalty(self):
        ref = list(range(8))
        assert bleu_lite(ref[:4], ref) == pytest.approx(math.exp(1 - 8 / 4) * 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 6), max_size=12), st.lists(st.integers(0, 6), min_size=1, max_size=12))
    def test_range(self, hyp, ref):
        assert 0.0 <= bleu_lite(hyp, ref) <= 1.0 + 1e-12


def test_fit_r2():
    x = np.arange(10)
    coeffs, r2 = fit_r2(x, 3 * x ** 2 + 1, 2)
    assert r2 == pytest.approx(1.0)
    assert coeffs[0] == pytest.approx(3.0)
