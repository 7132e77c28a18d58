import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segcap import bpe
from segcap.errors import DataError


class TestTraining:
    def test_first_merge_by_frequency(self):
        # "aa" appears twice, "ab" once: pair (a,a) wins
        corpus = ["aa aa ab"]
        base = {"a", "a</w>", "b</w>"}
        vocab = bpe.train_bpe(corpus, target_size=len(bpe.RESERVED) + len(base) + 1)
        assert vocab.merges[0] == ("a", "a</w>")

    def test_budget_equal_to_floor_gives_characters(self):
        corpus = ["abc abc"]
        base = {"a", "b", "c</w>"}
        vocab = bpe.train_bpe(corpus, target_size=len(bpe.RESERVED) + len(base))
        assert vocab.merges == []
        assert vocab.size == len(bpe.RESERVED) + len(base)

    def test_deterministic(self):
        corpus = ["the cat sat on the mat", "the bat and the rat"]
        a = bpe.train_bpe(corpus, 40)
        b = bpe.train_bpe(corpus, 40)
        assert a.merges == b.merges
        assert a.id_to_subword == b.id_to_subword

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            bpe.train_bpe([], 100)

    def test_unrepeated_pairs_stop_merging(self):
        vocab = bpe.train_bpe(["xy"], 1000)
        # the only pair occurs once, so no merge happens
        assert vocab.merges == []


class TestEncodeDecode:
    def test_empty_string(self, small_vocab):
        assert small_vocab.encode("") == []

    def test_decode_empty(self, small_vocab):
        assert small_vocab.decode([]) == ""

    def test_round_trip(self, small_vocab):
        for text in ["add the eggs", "mix the flour and sugar", "heat the pan"]:
            assert small_vocab.decode(small_vocab.encode(text)) == text

    def test_unknown_char_maps_to_unk(self, small_vocab):
        ids = small_vocab.encode("zebra!")
        assert bpe.UNK in ids

    def test_specials_stripped_on_decode(self, small_vocab):
        ids = small_vocab.encode("add the eggs")
        wrapped = [bpe.BOS] + ids + [bpe.EOS]
        assert small_vocab.decode(wrapped) == small_vocab.decode(ids)

    def test_no_reserved_ids_for_plain_text(self, small_vocab):
        ids = small_vocab.encode("add the eggs to the pan")
        assert all(i >= len(bpe.RESERVED) for i in ids)

    def test_token_count_bounded_by_chars(self, small_vocab):
        for text in ["add the eggs", "mix", "whisk the eggs and milk"]:
            assert len(small_vocab.encode(text)) <= len(text)

    def test_out_of_range_id(self, small_vocab):
        with pytest.raises(DataError):
            small_vocab.decode([small_vocab.size])

    def test_lowercasing(self, small_vocab):
        assert small_vocab.encode("ADD THE EGGS") == small_vocab.encode("add the eggs")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abcdef ", min_size=1, max_size=24), min_size=1,
                max_size=8))
def test_round_trip_property(lines):
    normalized = [" ".join(line.split()) for line in lines]
    corpus = [line for line in normalized if line]
    if not corpus:
        return
    vocab = bpe.train_bpe(corpus, target_size=200)
    for line in corpus:
        assert vocab.decode(vocab.encode(line)) == line
        assert len(vocab.encode(line)) <= len(line)


class TestPersistence:
    def test_file_round_trip_bit_exact(self, small_vocab, tmp_path):
        p1 = tmp_path / "v1.txt"
        p2 = tmp_path / "v2.txt"
        small_vocab.save(p1)
        loaded = bpe.Vocabulary.load(p1)
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.encode("add the eggs") == small_vocab.encode("add the eggs")

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("not a vocab\n")
        with pytest.raises(DataError):
            bpe.Vocabulary.load(p)

    def test_reserved_ids_fixed(self, small_vocab):
        assert small_vocab.id_to_subword[:6] == list(bpe.RESERVED)
        assert (bpe.PAD, bpe.BOS, bpe.EOS, bpe.MASK, bpe.CLS, bpe.UNK) == (0, 1, 2, 3, 4, 5)
