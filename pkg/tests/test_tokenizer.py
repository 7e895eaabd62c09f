import numpy as np
import pytest

from dialogqa.corpus import Corpus, Episode, QAItem, Scene, SyntheticSpec, Utterance, generate_synthetic
from dialogqa.tokenizer import (
    CONTINUATION, RESERVED, VocabError, Vocabulary, build_vocab, detokenize,
    load_vocab, pack_pair, save_vocab, tokenize,
)


def corpus_from_text(text):
    scene = Scene(episode_id="e0", scene_id="s0",
                  utterances=[Utterance("narrator", text)])
    return Corpus(episodes=[Episode("e0", [scene])],
                  qa_train=[], qa_val=[], qa_test=[])


@pytest.fixture(scope="module")
def synthetic_vocab():
    corpus = generate_synthetic(seed=23, spec=SyntheticSpec(
        episodes=4, scenes_per_episode=3, utterances_per_scene=3,
        utterance_length=4, questions_train=30, questions_val=10,
        questions_test=10, filler_vocab=40, answer_vocab=80))
    return corpus, build_vocab(corpus, max_size=2000, min_freq=2)


def test_frequent_word_becomes_whole_token():
    vocab = build_vocab(corpus_from_text("aa aa ab"), max_size=100)
    assert "aa" in vocab.token_to_id
    assert "ab" not in vocab.token_to_id  # below the frequency threshold
    ids = tokenize(vocab, "ab")
    assert vocab.unk_id not in ids
    assert detokenize(vocab, ids) == "ab"


def test_reserved_ids_distinct_and_first():
    vocab = build_vocab(corpus_from_text("x y z x y z"), max_size=100)
    assert vocab.id_to_token[:4] == list(RESERVED)
    assert len({vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id}) == 4


def test_max_size_too_small_errors():
    with pytest.raises(VocabError, match="max_size"):
        build_vocab(corpus_from_text("abc"), max_size=len(RESERVED) + 1)


def test_empty_corpus_text_errors():
    corpus = Corpus(episodes=[], qa_train=[], qa_val=[], qa_test=[])
    with pytest.raises(VocabError, match="no text"):
        build_vocab(corpus, max_size=100)


def test_zero_unk_over_corpus_alphabet(synthetic_vocab):
    # Exhaustive check over the generated corpus plus random strings drawn
    # from the corpus alphabet.
    corpus, vocab = synthetic_vocab
    from dialogqa.tokenizer import corpus_texts
    alphabet = sorted({ch for text in corpus_texts(corpus) for ch in text.lower()
                       if not ch.isspace()})
    for text in corpus_texts(corpus):
        assert vocab.unk_id not in tokenize(vocab, text)
    rng = np.random.default_rng(0)
    for _ in range(200):
        word_count = rng.integers(1, 6)
        words = ["".join(rng.choice(alphabet, size=rng.integers(1, 9)))
                 for _ in range(word_count)]
        assert vocab.unk_id not in tokenize(vocab, " ".join(words))


def test_unk_only_for_out_of_alphabet(synthetic_vocab):
    _, vocab = synthetic_vocab
    ids = tokenize(vocab, "café")
    assert vocab.unk_id in ids


def test_tokenize_empty_and_deterministic(synthetic_vocab):
    _, vocab = synthetic_vocab
    assert tokenize(vocab, "") == []
    text = "some words repeated words"
    assert tokenize(vocab, text) == tokenize(vocab, text)


def test_whole_word_single_id():
    vocab = build_vocab(corpus_from_text("hello hello world world"), max_size=100)
    assert tokenize(vocab, "hello") == [vocab.token_to_id["hello"]]


def test_greedy_longest_match():
    vocab = build_vocab(corpus_from_text("abc abc ab ab"), max_size=100)
    # "abcab" -> longest prefix "abc" then continuation pieces for "ab"
    ids = tokenize(vocab, "abcab")
    tokens = [vocab.id_to_token[i] for i in ids]
    assert tokens[0] == "abc"
    assert all(t.startswith(CONTINUATION) for t in tokens[1:])


def test_extra_words_always_included():
    vocab = build_vocab(corpus_from_text("zz zz"), max_size=200,
                        extra_words=("says", "that", "."))
    for word in ("says", "that", "."):
        assert word in vocab.token_to_id
    assert vocab.unk_id not in tokenize(vocab, "zz says that .")


def test_pack_pair_layout(synthetic_vocab):
    _, _ = synthetic_vocab
    vocab = build_vocab(corpus_from_text("a a b b c c"), max_size=100)
    seq = pack_pair(vocab, "a b", "c", k=8)
    toks = [vocab.id_to_token[i] for i in seq.ids]
    assert toks == ["[CLS]", "a", "b", "[SEP]", "c", "[SEP]", "[PAD]", "[PAD]"]
    assert seq.segment_ids == [0, 0, 0, 0, 1, 1, 0, 0]
    assert seq.pad_mask == [True] * 6 + [False] * 2


def test_pack_pair_exact_fit():
    vocab = build_vocab(corpus_from_text("a a b b c c"), max_size=100)
    seq = pack_pair(vocab, "a b", "c", k=6)
    assert sum(seq.pad_mask) == 6
    assert all(seq.pad_mask)


def test_pack_pair_truncation_properties(synthetic_vocab):
    corpus, vocab = synthetic_vocab
    rng = np.random.default_rng(1)
    words = [w for w in vocab.id_to_token[4:] if not w.startswith(CONTINUATION)]
    for _ in range(200):
        k = int(rng.integers(4, 40))
        first = " ".join(rng.choice(words, size=rng.integers(0, 30)))
        second = " ".join(rng.choice(words, size=rng.integers(0, 30)))
        seq = pack_pair(vocab, first, second, k)
        assert len(seq) == k
        assert len(seq.segment_ids) == k and len(seq.pad_mask) == k
        real = [i for i, m in zip(seq.ids, seq.pad_mask) if m]
        assert real[0] == vocab.cls_id
        assert sum(1 for i in real if i == vocab.sep_id) == 2
        assert real[-1] == vocab.sep_id
        # segment 0 through the first SEP, 1 afterwards up to the second SEP
        first_sep = seq.ids.index(vocab.sep_id)
        for pos, (seg, m) in enumerate(zip(seq.segment_ids, seq.pad_mask)):
            if not m:
                assert seg == 0
            elif pos <= first_sep:
                assert seg == 0
            else:
                assert seg == 1
        assert sum(not m for m in seq.pad_mask) == k - len(real)


def test_pack_pair_balanced_truncation():
    vocab = build_vocab(corpus_from_text("a a b b"), max_size=100)
    seq = pack_pair(vocab, "a a a a a a", "b b", k=9)
    toks = [vocab.id_to_token[i] for i in seq.ids]
    # 6 + 2 + 3 = 11 > 9: A is trimmed twice (the longer side)
    assert toks.count("a") == 4 and toks.count("b") == 2


def test_pack_pair_k_too_small():
    vocab = build_vocab(corpus_from_text("a a"), max_size=100)
    with pytest.raises(ValueError, match="at least 4"):
        pack_pair(vocab, "a", "a", k=3)


def test_vocab_file_roundtrip(tmp_path, synthetic_vocab):
    _, vocab = synthetic_vocab
    path = tmp_path / "vocab.txt"
    save_vocab(vocab, path)
    reloaded = load_vocab(path)
    assert reloaded.id_to_token == vocab.id_to_token
    # line number = id
    lines = path.read_text().splitlines()
    assert lines[vocab.token_to_id[lines[10]]] == lines[10]
