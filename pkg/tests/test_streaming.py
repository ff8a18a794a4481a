import numpy as np
import pytest

from simulst.errors import InvalidConfig, InvalidInput, InvalidLog, InvalidSegment
from simulst.streaming import (
    HOLD_N,
    Clock,
    PolicyConfig,
    ReadEvent,
    SessionEventLog,
    WriteEvent,
    clock_charge,
    hold_n_emission,
    prepare_stream,
    run_hold_n,
    run_policy,
    run_wait_k_stride_n,
)


def stream(model, n, seed=0, last_short=0):
    gen = np.random.default_rng(seed)
    segs = [gen.standard_normal(model.cfg.segment_samples) for _ in range(n)]
    if last_short:
        segs[-1] = segs[-1][:-last_short]
    return segs


def expected_pattern(k, segments):
    out = []
    for i in range(1, segments + 1):
        out.append("R")
        if i >= k or i == segments:
            out.append("W")
    return out


class TestWaitK:
    def test_wait_1_stride_2(self, model):
        model.force_token(5)
        res = run_wait_k_stride_n(model, stream(model, 3), PolicyConfig(k=1, n=2, max_tokens_per_write=6),
                                  Clock.simulated({"encode": 0, "adapt": 0, "decode": 0}))
        assert res.log.pattern() == ["R", "W", "R", "W", "R", "W"]
        assert [w.words for w in res.log.writes] == [2, 2, 6]
        assert res.truncated

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("n", [2, 3])
    def test_schedule_law(self, model, k, n):
        model.force_token(5)
        segments = 6
        res = run_wait_k_stride_n(model, stream(model, segments), PolicyConfig(k=k, n=n, max_tokens_per_write=8),
                                  Clock.uniform(1.0))
        assert res.log.pattern() == expected_pattern(k, segments)
        reads_before = []
        reads = 0
        for p in res.log.pattern():
            reads += p == "R"
            if p == "W":
                reads_before.append(reads)
        for j, r in enumerate(reads_before[:-1], 1):
            assert r == k + j - 1
        assert all(w.words == n for w in res.log.writes[:-1])

    def test_k_beyond_stream_is_offline(self, model):
        model.force_token(5)
        res = run_wait_k_stride_n(model, stream(model, 3), PolicyConfig(k=100, n=3, max_tokens_per_write=5),
                                  Clock.uniform(1.0))
        assert res.log.pattern() == ["R", "R", "R", "W"]

    def test_eos_first_stops(self, model):
        model.force_token(model.vocab.eos)
        res = run_wait_k_stride_n(model, stream(model, 4), PolicyConfig(k=1, n=3), Clock.uniform(1.0))
        assert res.log.pattern() == ["R", "W"]
        assert res.tokens == [model.vocab.eos]

    def test_read_conservation(self, model):
        model.suppress_token(model.vocab.eos)
        res = run_wait_k_stride_n(model, stream(model, 4, last_short=5),
                                  PolicyConfig(k=2, n=2, segment_ms=250, max_tokens_per_write=6),
                                  Clock.uniform(1.0))
        reads = res.log.reads
        assert len(reads) == 4
        assert res.log.source_ms == 1000.0
        assert [r.padded for r in reads] == [0, 0, 0, 5]

    def test_deterministic_log(self, model):
        runs = [run_wait_k_stride_n(model, stream(model, 4), PolicyConfig(k=2, n=2, max_tokens_per_write=6),
                                    Clock.uniform(3.0)).log.dumps() for _ in range(2)]
        assert runs[0] == runs[1]

    def test_commit_monotone(self, model):
        res = run_wait_k_stride_n(model, stream(model, 5), PolicyConfig(k=1, n=2, max_tokens_per_write=6),
                                  Clock.uniform(1.0))
        flat = [t for w in res.log.writes for t in w.tokens]
        assert flat == res.tokens

    def test_wrong_kind(self, model):
        with pytest.raises(InvalidConfig):
            run_wait_k_stride_n(model, stream(model, 2), PolicyConfig(kind=HOLD_N), Clock.uniform(1.0))


class TestHoldN:
    def test_emission_examples(self):
        a, b, c, d, e, f, g = range(3, 10)
        assert hold_n_emission([], [a, b, c, d], 2) == [a, b]
        assert hold_n_emission([a, b], [a, b, e, f, g], 2) == [e]
        assert hold_n_emission([], [a, b], 2) == []

    def test_session_rules(self, model):
        cfg = PolicyConfig(kind=HOLD_N, n=2, max_tokens_per_write=6)
        res = run_hold_n(model, stream(model, 4), cfg, Clock.uniform(1.0))
        committed = []
        writes = iter(res.log.writes)
        for i, hyp in enumerate(res.hypotheses):
            assert hyp[:len(committed)] == committed
            last = i == len(res.hypotheses) - 1
            emit = hyp[len(committed):] if last else hold_n_emission(committed, hyp, 2)
            if emit:
                assert list(next(writes).tokens) == emit
            committed += emit
        assert committed == res.tokens

    def test_dispatch(self, model):
        cfg = PolicyConfig(kind=HOLD_N, n=1, max_tokens_per_write=4)
        a = run_policy(model, stream(model, 3), cfg, Clock.uniform(1.0))
        b = run_hold_n(model, stream(model, 3), cfg, Clock.uniform(1.0))
        assert a.log.dumps() == b.log.dumps()


class TestClock:
    def test_charge(self):
        clock = Clock.simulated({"decode": 1.0})
        clock_charge(clock, "decode", 5)
        assert clock.elapsed_ms() == 5.0

    def test_missing_rate(self):
        with pytest.raises(InvalidConfig):
            Clock.simulated({"decode": 1.0}).charge("encode", 1)

    def test_real_clock_ignores_charges(self):
        clock = Clock.real()
        clock.charge("anything", 1e9)
        assert clock.elapsed_ms() < 1000

    def test_zero_cost_is_ideal(self, model):
        res = run_wait_k_stride_n(model, stream(model, 3), PolicyConfig(k=1, n=2, max_tokens_per_write=4),
                                  Clock.uniform(0.0))
        for w in res.log.writes:
            assert w.wall_ms == w.audio_ms

    def test_doubling_rates(self, model):
        def gaps(rate):
            res = run_wait_k_stride_n(model, stream(model, 3), PolicyConfig(k=1, n=2, max_tokens_per_write=4),
                                      Clock.simulated({"encode": rate, "adapt": 2 * rate, "decode": 3 * rate}))
            return [w.wall_ms - w.audio_ms for w in res.log.writes]

        np.testing.assert_allclose(gaps(2e-6), 2 * np.array(gaps(1e-6)), rtol=1e-12)


class TestEventLog:
    def test_round_trip(self, model, tmp_path):
        res = run_wait_k_stride_n(model, stream(model, 3, last_short=3), PolicyConfig(k=1, n=2, max_tokens_per_write=4),
                                  Clock.uniform(1.0))
        path = tmp_path / "log.jsonl"
        res.log.save(path)
        again = SessionEventLog.load(path)
        assert again.dumps() == res.log.dumps()
        assert '"format_version": 1' in path.read_text().splitlines()[0]

    def test_invariants(self):
        with pytest.raises(InvalidLog):
            SessionEventLog([WriteEvent((3,), 1, 0.0, 0.0)])
        with pytest.raises(InvalidLog):
            SessionEventLog([ReadEvent(0, 1000, 1000), ReadEvent(1, 1000, 1000)])
        with pytest.raises(InvalidLog):
            SessionEventLog([ReadEvent(0, 1000, 1000), WriteEvent((3,), 1, 999, 1000)])

    def test_bad_lines(self):
        with pytest.raises(InvalidLog):
            SessionEventLog.loads('{"type": "READ"}')
        with pytest.raises(InvalidLog):
            SessionEventLog.loads('{"type": "READ", "segment_index": 0, "audio_ms": 1, "t_wall_ms": 1, "format_version": 2}')


class TestStreamValidation:
    def test_empty(self, model):
        with pytest.raises(InvalidInput):
            prepare_stream([], model.cfg.segment_samples)

    def test_short_middle_segment(self, model):
        n = model.cfg.segment_samples
        with pytest.raises(InvalidSegment):
            prepare_stream([np.zeros(n - 1), np.zeros(n)], n)

    def test_oversize_segment(self, model):
        n = model.cfg.segment_samples
        with pytest.raises(InvalidConfig):
            prepare_stream([np.zeros(n + 1)], n)
