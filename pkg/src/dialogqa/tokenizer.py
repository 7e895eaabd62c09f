"""Vocabulary construction and two-sentence input packing.

Text is lowercased and split on whitespace; each word is segmented by greedy
longest-match against a wordpiece inventory built from the training corpus.
Single characters and their continuation pieces are always present, so any
string over the corpus alphabet tokenizes without UNK.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"


class VocabError(ValueError):
    pass


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int]

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocabulary":
        token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(token_to_id) != len(tokens):
            raise VocabError("duplicate token in vocabulary")
        for i, tok in enumerate(RESERVED):
            if token_to_id.get(tok) != i:
                raise VocabError(f"reserved token {tok} must have id {i}")
        return cls(id_to_token=list(tokens), token_to_id=token_to_id)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3


def corpus_texts(corpus: Corpus) -> list[str]:
    """All text visible for vocabulary building: scenes plus the train split."""
    texts: list[str] = []
    for episode in corpus.episodes:
        for scene in episode.scenes:
            for utt in scene.utterances:
                texts.append(utt.speaker)
                texts.append(utt.text)
            if scene.video_description:
                texts.append(scene.video_description)
        if episode.plot:
            texts.append(episode.plot)
    for item in corpus.qa_train:
        texts.append(item.question)
        texts.extend(item.answers)
    return texts


def build_vocab(corpus: Corpus, max_size: int, min_freq: int = 2,
                extra_words: tuple[str, ...] = ()) -> Vocabulary:
    """Frequency-ranked whole words plus a single-character fallback.

    ``extra_words`` are always included as whole tokens (and contribute to the
    fallback alphabet); the summarizer's fixed template words go here so that
    generated summaries tokenize cleanly.
    """
    counts: Counter[str] = Counter()
    for text in corpus_texts(corpus):
        counts.update(text.lower().split())
    if not counts:
        raise VocabError("corpus has no text to build a vocabulary from")

    alphabet = sorted({ch for word in counts for ch in word}
                      | {ch for word in extra_words for ch in word.lower()})
    tokens: list[str] = list(RESERVED)
    tokens.extend(alphabet)
    tokens.extend(CONTINUATION + ch for ch in alphabet)
    extras = [w.lower() for w in extra_words]
    tokens.extend(w for w in extras if w not in set(tokens))
    if len(tokens) > max_size:
        raise VocabError(
            f"max_size {max_size} cannot hold the reserved tokens and the "
            f"character fallback ({len(tokens)} tokens)"
        )

    present = set(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for word, freq in ranked:
        if len(tokens) >= max_size:
            break
        if freq >= min_freq and word not in present:
            tokens.append(word)
            present.add(word)
    return Vocabulary.from_tokens(tokens)


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    """Greedy longest-match-first segmentation per whitespace word."""
    ids: list[int] = []
    for word in text.lower().split():
        start = 0
        while start < len(word):
            end = len(word)
            match = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = CONTINUATION + piece
                token_id = vocab.token_to_id.get(piece)
                if token_id is not None:
                    match = (token_id, end)
                    break
                end -= 1
            if match is None:
                ids.append(vocab.unk_id)  # out-of-alphabet character
                start += 1
            else:
                ids.append(match[0])
                start = match[1]
    return ids


def detokenize(vocab: Vocabulary, ids: list[int]) -> str:
    """Best-effort inverse of :func:`tokenize`, merging continuation pieces."""
    words: list[str] = []
    for token_id in ids:
        token = vocab.id_to_token[token_id]
        if token.startswith(CONTINUATION) and words:
            words[-1] += token[len(CONTINUATION):]
        else:
            words.append(token)
    return " ".join(words)


@dataclass
class TokenSequence:
    ids: list[int]
    segment_ids: list[int]
    pad_mask: list[bool]  # true = real token

    def __len__(self) -> int:
        return len(self.ids)


def pack_pair(vocab: Vocabulary, first: str, second: str, k: int) -> TokenSequence:
    """Pack two sentences as CLS + A + SEP + B + SEP, padded or truncated to k.

    Overflow trims the longer of the two token lists one token at a time from
    its tail; on equal lengths the first sentence is trimmed first.
    """
    if k < 4:
        raise ValueError(f"k must be at least 4, got {k}")
    ids_a = tokenize(vocab, first)
    ids_b = tokenize(vocab, second)
    trim_a_next = True
    while len(ids_a) + len(ids_b) + 3 > k:
        if len(ids_a) > len(ids_b):
            ids_a.pop()
        elif len(ids_b) > len(ids_a):
            ids_b.pop()
        elif trim_a_next and ids_a:
            ids_a.pop()
            trim_a_next = False
        elif ids_b:
            ids_b.pop()
            trim_a_next = True
        else:
            break
    ids = [vocab.cls_id] + ids_a + [vocab.sep_id] + ids_b + [vocab.sep_id]
    segments = [0] * (len(ids_a) + 2) + [1] * (len(ids_b) + 1)
    mask = [True] * len(ids)
    pad = k - len(ids)
    ids.extend([vocab.pad_id] * pad)
    segments.extend([0] * pad)
    mask.extend([False] * pad)
    return TokenSequence(ids=ids, segment_ids=segments, pad_mask=mask)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.id_to_token:
            fh.write(token + "\n")


def load_vocab(path: str | Path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return Vocabulary.from_tokens(tokens)
