import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simulst.checks import decoder_equivalence, random_layout
from simulst.decoder import (
    SPEECH,
    TEXT,
    InterleavedLayout,
    Vocabulary,
    assign_positions,
    build_consistency_mask,
    consistency_rows,
    dump_logits_csv,
)
from simulst.errors import InvalidArgument, InvalidConfig
from simulst.tensor_core import attention_weights


def allowed(mask, row):
    return np.flatnonzero(mask[row]).tolist()


class TestLayout:
    def test_parse_round_trip(self):
        layout = InterleavedLayout.parse("S2,T1,S1")
        assert str(layout) == "S2,T1,S1"
        assert len(layout) == 4
        assert layout.modalities().tolist() == [SPEECH, SPEECH, TEXT, SPEECH]

    def test_from_modalities_merges_runs(self):
        layout = InterleavedLayout.from_modalities([0, 0, 1, 1, 1, 0])
        assert layout.spans == ((SPEECH, 2), (TEXT, 3), (SPEECH, 1))

    def test_empty_span_rejected(self):
        with pytest.raises(InvalidArgument):
            InterleavedLayout(((SPEECH, 0),))


class TestConsistencyMask:
    def test_speech_then_text(self):
        m = build_consistency_mask(InterleavedLayout.parse("S2,T1"))
        assert allowed(m, 2) == [0, 1, 2]
        assert allowed(m, 1) == [0, 1]

    def test_speech_skips_text(self):
        m = build_consistency_mask(InterleavedLayout.parse("S1,T1,S1"))
        assert allowed(m, 2) == [0, 2]

    def test_all_speech_is_causal(self):
        m = build_consistency_mask(InterleavedLayout.parse("S5"))
        np.testing.assert_array_equal(m, np.tri(5, dtype=bool))

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30), st.data())
    def test_rows_slice_full_mask(self, deltas, data):
        first = data.draw(st.integers(0, len(deltas) - 1))
        full = consistency_rows(deltas)
        np.testing.assert_array_equal(consistency_rows(deltas, first), full[first:])
        assert full.diagonal().all()


class TestPositions:
    def test_separate_counters(self):
        pos = assign_positions(InterleavedLayout.parse("S3,T2,S3"))
        assert pos.tolist() == [0, 1, 2, 0, 1, 3, 4, 5]

    def test_text_only(self):
        assert assign_positions(InterleavedLayout.parse("T4")).tolist() == [0, 1, 2, 3]

    def test_speech_positions_ignore_text(self):
        layout = InterleavedLayout.parse("T2,S2,T1,S3")
        pos = assign_positions(layout)
        speech = pos[layout.modalities() == SPEECH]
        assert speech.tolist() == assign_positions(layout.without_text()).tolist()


class TestVocabulary:
    def test_separator_words(self):
        v = Vocabulary(8)
        assert v.count_words([3, 4, 2, 5, 2]) == 2
        assert v.count_words([3, 4, 2, 5]) == 2
        assert v.count_words([3, 4, 2, 5], include_partial=False) == 1
        assert v.count_words([3, 1]) == 1

    def test_one_token_per_word(self):
        v = Vocabulary(8, one_token_per_word=True)
        assert v.count_words([3, 4, 1]) == 2

    def test_render(self):
        v = Vocabulary(5, tokens=("<s>", "</s>", "|", "a", "b"))
        assert v.words([3, 4, 2, 3, 1]) == ["ab", "a"]

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            Vocabulary(3)
        with pytest.raises(InvalidConfig):
            Vocabulary(8, bos=1, eos=1)

    def test_json_round_trip(self, tmp_path):
        import json
        v = Vocabulary(6, tokens=tuple("abcdef"), one_token_per_word=True)
        (tmp_path / "v.json").write_text(json.dumps(v.to_dict()))
        assert Vocabulary.from_json(tmp_path / "v.json") == v


class TestDecoderPasses:
    def test_single_text_token_shape(self, model):
        out = model.decoder.forward_full(model.decoder.embed_tokens([3]), InterleavedLayout.parse("T1"))
        assert out.logits.shape == (1, model.cfg.vocab_size)

    def test_append_replay_equals_full(self, model, rng):
        layout = InterleavedLayout.parse("S3,T2,S3,T1")
        assert decoder_equivalence(model, layout, rng) <= 1e-5

    def test_append_replay_equals_full_64(self, model64, rng):
        layout = InterleavedLayout.parse("S3,T2,S3,T1")
        assert decoder_equivalence(model64, layout, rng) <= 1e-10

    def test_counters(self, model, rng):
        cache = model.decoder.new_cache()
        for m, t in InterleavedLayout.parse("S3,T2,S3").spans:
            model.decoder.append(cache, rng.standard_normal((t, model.cfg.d_model)), m)
        assert (cache.speech_counter, cache.text_counter) == (6, 2)
        assert cache.positions.tolist() == [0, 1, 2, 0, 1, 3, 4, 5]

    def test_new_speech_rows_ignore_cached_text(self, model, rng):
        d = model.cfg.d_model
        cache = model.decoder.new_cache()
        model.decoder.append(cache, rng.standard_normal((2, d)), SPEECH)
        model.decoder.append(cache, rng.standard_normal((3, d)), TEXT)
        deltas = np.concatenate([cache.modalities, [SPEECH, SPEECH]])
        mask = consistency_rows(deltas, cache.rows)
        q = rng.standard_normal((2, 4))
        k = rng.standard_normal((len(deltas), 4))
        w = attention_weights(q, k, mask)
        assert np.all(w[:, deltas == TEXT] == 0.0)

    def test_masked_key_equals_deleted_row(self, model, rng):
        # hide the last speech row from every later query; positions of the
        # other rows do not depend on it, so this must match deleting it
        layout = InterleavedLayout.parse("S3,T2")
        emb = rng.standard_normal((5, model.cfg.d_model))
        mask = build_consistency_mask(layout)
        mask[3:, 2] = False
        masked = model.decoder.forward_full(emb, layout, mask).logits
        deleted = model.decoder.forward_full(np.delete(emb, 2, axis=0), InterleavedLayout.parse("S2,T2")).logits
        np.testing.assert_allclose(np.delete(masked, 2, axis=0), deleted, atol=1e-5)

    def test_text_invisible_to_speech(self, model, rng):
        layout = InterleavedLayout.parse("S2,T3,S2,T1,S2")
        emb = rng.standard_normal((len(layout), model.cfg.d_model))
        other = emb.copy()
        text = layout.modalities() == TEXT
        other[text] += rng.standard_normal((int(text.sum()), model.cfg.d_model))
        a = model.decoder.forward_full(emb, layout).hidden
        b = model.decoder.forward_full(other, layout).hidden
        assert a[~text].tobytes() == b[~text].tobytes()

    def test_position_stability(self, model, rng):
        layout = InterleavedLayout.parse("S2,T3,S2,T1,S2")
        emb = rng.standard_normal((len(layout), model.cfg.d_model))
        speech = layout.modalities() == SPEECH
        with_text = model.decoder.forward_full(emb, layout).hidden[speech]
        alone = model.decoder.forward_full(emb[speech], layout.without_text()).hidden
        np.testing.assert_allclose(with_text, alone, atol=1e-6)

    def test_dimension_mismatch(self, model):
        with pytest.raises(InvalidArgument):
            model.decoder.forward_full(np.zeros((3, model.cfg.d_model)), InterleavedLayout.parse("S2"))
        with pytest.raises(InvalidArgument):
            model.decoder.append(model.decoder.new_cache(), np.zeros((1, 3)), SPEECH)

    def test_logits_csv(self, model, tmp_path):
        dump_logits_csv(np.zeros((2, model.cfg.vocab_size)), tmp_path / "l.csv")
        assert len((tmp_path / "l.csv").read_text().splitlines()) == 3


def _speech_cache(model, rng, rows=4):
    cache = model.decoder.new_cache()
    model.decoder.append(cache, rng.standard_normal((rows, model.cfg.d_model)), SPEECH)
    return cache


class TestGreedy:
    def test_forced_eos(self, model, rng):
        model.force_token(model.vocab.eos)
        gen = model.decoder.greedy_generate(_speech_cache(model, rng), 3)
        assert gen.tokens == [model.vocab.eos] and gen.eos

    def test_one_token_per_word(self, model, rng):
        model.force_token(5)
        gen = model.decoder.greedy_generate(_speech_cache(model, rng), 3)
        assert gen.tokens == [5, 5, 5] and gen.words == 3 and not gen.eos

    def test_separator_words(self, small_cfg, rng):
        from simulst.model import build_model
        m = build_model(small_cfg, seed=3, vocab=Vocabulary(small_cfg.vocab_size))
        m.force_token(m.vocab.word_sep)
        gen = m.decoder.greedy_generate(_speech_cache(m, rng), 2, max_tokens=5)
        # separators with no content never close a word
        assert gen.words == 0 and gen.truncated and len(gen.tokens) == 5

    def test_max_tokens_truncates(self, model, rng):
        model.force_token(5)
        gen = model.decoder.greedy_generate(_speech_cache(model, rng), 10, max_tokens=4)
        assert len(gen.tokens) == 4 and gen.truncated

    def test_deterministic(self, model, rng):
        emb = rng.standard_normal((6, model.cfg.d_model))
        runs = []
        for _ in range(2):
            cache = model.decoder.new_cache()
            model.decoder.append(cache, emb, SPEECH)
            runs.append(model.decoder.greedy_generate(cache, 4, 12).tokens)
        assert runs[0] == runs[1]

    def test_tie_goes_to_lowest_id(self, model, rng):
        p = model.params
        p["decoder.out.w"][:] = 0
        p["decoder.out.b"][:] = 0
        p["decoder.out.b"][[4, 7]] = 1.0
        gen = model.decoder.greedy_generate(_speech_cache(model, rng), 1)
        assert gen.tokens == [4]

    def test_requires_speech(self, model):
        with pytest.raises(InvalidArgument):
            model.decoder.greedy_generate(model.decoder.new_cache(), 1)

    def test_truncate_then_regenerate(self, model, rng):
        cache = _speech_cache(model, rng, rows=6)
        rows, pending = cache.checkpoint()
        first = model.decoder.greedy_generate(cache, None, max_tokens=6).tokens
        cache.truncate(rows, pending)
        again = model.decoder.greedy_generate(cache, None, max_tokens=6).tokens
        assert first == again


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_random_layout_equivalence(seed):
    from conftest import SMALL
    from simulst.model import build_model
    gen = np.random.default_rng(seed)
    m = build_model(SMALL, seed=seed % 1000)
    layout = random_layout(gen)
    assert len(layout.spans) <= 6 and len(layout) <= 64
    assert decoder_equivalence(m, layout, gen) <= 1e-5
