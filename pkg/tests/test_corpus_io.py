import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otreg.corpus import (
    CorpusConfig,
    SplitMix64,
    make_corpus,
    make_embedding_table,
    make_mixing,
    synthesize_utterance,
)
from otreg.errors import ContractError, FormatError
from otreg.io import (
    decode_emb,
    dumps_json,
    encode_emb,
    load_matrix,
    read_csv_matrix,
    read_emb,
    save_matrix,
    write_emb,
)


def reference_splitmix(seed, n):
    # straight transcription of the published reference, on Python ints
    mask = (1 << 64) - 1
    out = []
    for _ in range(n):
        seed = (seed + 0x9E3779B97F4A7C15) & mask
        z = seed
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


def test_splitmix_seed_zero():
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(1, 40))
def test_splitmix_vectorized_matches_scalar(seed, n):
    ref = reference_splitmix(seed, n)
    r = SplitMix64(seed)
    assert [int(x) for x in r.next_array(n)] == ref
    assert r.next_u64() == reference_splitmix(seed, n + 1)[-1]


def test_uniform_range():
    u = SplitMix64(5).uniform_array(10000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.02


def test_normal_moments():
    z = SplitMix64(5).normal_array(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


def test_table_properties():
    t = make_embedding_table(7, 30, 16)
    np.testing.assert_allclose(np.linalg.norm(t.rows, axis=1), 1.0, atol=1e-9)
    assert t.pad_id == 29 and t.pad.shape == (1, 16)
    np.testing.assert_array_equal(t.rows, make_embedding_table(7, 30, 16).rows)


def test_noiseless_single_repeat_utterance():
    cfg = CorpusConfig(noise_sigma=0.0, repeat_range=(1, 1), pad_insert_prob=0.0)
    rng = SplitMix64(1)
    table = make_embedding_table(2, 10, 4)
    mixing = make_mixing(rng, 4, 6)
    s = synthesize_utterance(table, mixing, cfg, rng)
    assert s.raw_speech.shape[0] == len(s.tokens)
    np.testing.assert_array_equal(s.raw_speech, table.rows[s.tokens] @ mixing)
    assert all(t != table.pad_id for t in s.tokens)


def test_fixed_repeat_utterance():
    cfg = CorpusConfig(token_len_range=(4, 4), repeat_range=(3, 3), pad_insert_prob=0.0)
    table = make_embedding_table(2, 10, 4)
    rng = SplitMix64(3)
    s = synthesize_utterance(table, make_mixing(rng, 4, 6), cfg, rng)
    assert s.raw_speech.shape == (12, 6)
    assert s.frame_to_token == [t for t in s.tokens for _ in range(3)]


def test_pads_are_recorded():
    cfg = CorpusConfig(pad_insert_prob=1.0, token_len_range=(3, 3), noise_sigma=0.0)
    table = make_embedding_table(2, 10, 4)
    rng = SplitMix64(3)
    s = synthesize_utterance(table, make_mixing(rng, 4, 6), cfg, rng)
    assert s.frame_to_token.count(table.pad_id) >= 4
    assert s.frame_to_token[0] != table.pad_id


def test_corpus_deterministic():
    cfg = CorpusConfig(utterance_count=5, eval_count=2)
    a, b = make_corpus(cfg), make_corpus(cfg)
    for x, y in zip(a.train + a.eval, b.train + b.eval):
        assert x.raw_speech.tobytes() == y.raw_speech.tobytes()
        assert x.frame_to_token == y.frame_to_token


def test_corpus_config_validation():
    with pytest.raises(ContractError):
        CorpusConfig(repeat_range=(3, 2))
    with pytest.raises(ContractError):
        CorpusConfig(pad_insert_prob=1.5)


# -- EMB1 / CSV ------------------------------------------------------------------------


def test_emb_golden_bytes():
    assert encode_emb(np.array([[1.0]])) == b"EMB1" + struct.pack("<II", 1, 1) + bytes.fromhex("0000803f")


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(0, 5), st.integers(0, 5)), elements=st.floats(-1e6, 1e6)))
def test_emb_roundtrip(m):
    np.testing.assert_array_equal(decode_emb(encode_emb(m)), m.astype(np.float32).astype(np.float64))


def test_emb_file_roundtrip(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 4))
    write_emb(tmp_path / "m.emb", m)
    np.testing.assert_array_equal(read_emb(tmp_path / "m.emb"), m.astype(np.float32))


def test_emb_truncated():
    data = encode_emb(np.ones((2, 2)))[:-3]
    with pytest.raises(FormatError, match="expected 28 bytes.*got 25") as exc:
        decode_emb(data)
    assert exc.value.offset == 25


def test_emb_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode_emb(b"EMB2" + bytes(8))


def test_csv_examples(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(read_csv_matrix(p), [[1, 2], [3, 4]])
    p.write_text("")
    with pytest.warns(UserWarning):
        assert read_csv_matrix(p).shape == (0, 0)
    p.write_text("1,2\n3\n")
    with pytest.raises(FormatError) as exc:
        read_csv_matrix(p)
    assert exc.value.line == 2


def test_csv_exact_roundtrip(tmp_path):
    m = np.random.default_rng(1).normal(size=(4, 3))
    save_matrix(tmp_path / "m.csv", m)
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), m)


def test_unknown_extension(tmp_path):
    with pytest.raises(FormatError):
        save_matrix(tmp_path / "m.txt", np.ones((1, 1)))


def test_json_is_sorted_and_precise():
    text = dumps_json({"b": 0.1, "a": [1, True, None, float("nan")]})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text
    assert json.loads(text) == {"a": [1, True, None, None], "b": 0.1}
    assert "\n" not in dumps_json({"x": {"y": 1}}, compact=True).rstrip("\n")
