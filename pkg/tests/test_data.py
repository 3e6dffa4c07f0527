import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdistill.data import ALPHABET, PAD, BatchStream, Vocab, build_vocab, synthetic_corpus, train_eval_split


def test_vocab_puts_pad_first_and_sorts():
    v = build_vocab("cab")
    assert v.symbols == [PAD, "a", "b", "c"]
    assert v.encode("abc").tolist() == [1, 2, 3]


@given(st.text(alphabet="abcxyz .", min_size=1, max_size=50))
def test_vocab_round_trip(text):
    v = build_vocab(text)
    assert v.decode(v.encode(text)) == text


def test_unknown_character_raises():
    with pytest.raises(KeyError):
        build_vocab("ab").encode("abc")


def test_empty_text_raises():
    with pytest.raises(ValueError):
        build_vocab("")


def test_duplicate_symbols_rejected():
    with pytest.raises(ValueError):
        Vocab(["a", "a"])


def test_synthetic_corpus_is_seeded_and_covers_alphabet():
    a = synthetic_corpus(5000, seed=1)
    assert a == synthetic_corpus(5000, seed=1)
    assert a != synthetic_corpus(5000, seed=2)
    assert len(a) == 5000
    assert set(a) == set(ALPHABET)
    assert build_vocab(a).size == 60


def test_split_is_contiguous_tail():
    tokens = np.arange(100)
    train, held = train_eval_split(tokens, 0.1)
    assert train.tolist() == list(range(90))
    assert held.tolist() == list(range(90, 100))


def test_windows_cover_each_position_once_per_epoch():
    tokens = np.arange(1, 42)  # 41 tokens -> 10 windows of 4
    stream = BatchStream(tokens, context=4, batch_size=5, seed=3)
    seen = []
    for x, y in stream.epoch_batches(0):
        assert x.shape == (5, 4)
        assert np.array_equal(y, x + 1)
        seen.extend(x.ravel().tolist())
    assert sorted(seen) == list(range(1, 41))


def test_partial_batch_is_dropped():
    stream = BatchStream(np.arange(1, 42), context=4, batch_size=3)
    assert stream.n_windows == 10
    assert stream.batches_per_epoch == 3
    assert len(list(stream.epoch_batches(0))) == 3


def test_epoch_shuffles_are_seeded():
    stream = BatchStream(np.arange(1, 200), context=4, batch_size=4, seed=0)
    first = [x.tolist() for x, _ in stream.epoch_batches(0)]
    again = [x.tolist() for x, _ in stream.epoch_batches(0)]
    other = [x.tolist() for x, _ in stream.epoch_batches(1)]
    assert first == again
    assert first != other


def test_forever_advances_epochs():
    stream = BatchStream(np.arange(1, 42), context=4, batch_size=5, seed=0)
    it = stream.forever()
    batches = [next(it)[0].tolist() for _ in range(4)]
    assert batches[:2] == [x.tolist() for x, _ in stream.epoch_batches(0)] or stream.epoch >= 1
    assert stream.epoch == 1


def test_short_source_raises():
    with pytest.raises(ValueError):
        BatchStream(np.arange(4), context=4, batch_size=1)
