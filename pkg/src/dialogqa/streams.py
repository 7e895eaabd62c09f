"""Per-stream QA: scene scoring, sliding-window part splitting for episode
inputs, soft/hard temporal attention over part scores, training and
prediction.

A stream model is a transformer encoder plus a linear head. Scene streams
score each answer from one packed pair; episode streams score every
(part, answer) pair and reduce the score matrix with temporal attention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, SgdMomentum, Tape, Tensor, backward
from .corpus import Corpus, QAItem
from .encoder import EncoderConfig, EncoderModel, encode_hidden, sequences_to_arrays
from .tokenizer import Vocabulary, detokenize, pack_pair, tokenize

SCENE_STREAMS = ("raw_dialog", "scene_summary", "video_description")
EPISODE_STREAMS = ("episode_summary", "plot")
STREAM_KINDS = SCENE_STREAMS + EPISODE_STREAMS


class MissingStreamText(KeyError):
    """The input text for a stream cannot be resolved for an item."""


@dataclass
class WindowConfig:
    k: int = 64
    stride: int = 24
    n_parts: int = 6
    temperature: float = 1.0

    def __post_init__(self):
        if not 0 < self.stride <= self.k:
            raise ValueError(f"stride must satisfy 0 < s <= k, got {self.stride}")
        if self.n_parts < 1:
            raise ValueError(f"n_parts must be at least 1, got {self.n_parts}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def part_count(length: int, window: int, stride: int) -> int:
    """Number of sliding-window parts covering ``length`` tokens."""
    if length <= window:
        return 1
    return math.ceil((length - window) / stride) + 1


@dataclass
class PartSet:
    parts: list[str]  # real parts, in order
    n_slots: int

    @property
    def real_count(self) -> int:
        return len(self.parts)

    def pad_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_slots, dtype=bool)
        mask[:self.real_count] = True
        return mask


def split_parts(text: str, question: str, answers, cfg: WindowConfig,
                vocab: Vocabulary) -> PartSet:
    """Overlapping sliding-window parts of a long input.

    The window reserves room for the question, the longest answer and the
    three special tokens of the packed pair, so parts are never truncated
    when packed. If the formula yields more than ``n_parts`` parts, the
    first ``n_parts`` are kept in order.
    """
    question_len = len(tokenize(vocab, question))
    answer_len = max(len(tokenize(vocab, answer)) for answer in answers)
    window = cfg.k - question_len - answer_len - 3
    if window <= 0:
        raise ValueError(
            f"question and answers exhaust the window: k={cfg.k}, "
            f"|q|={question_len}, |a|={answer_len}"
        )
    ids = tokenize(vocab, text)
    length = len(ids)
    if length <= window:
        return PartSet(parts=[text], n_slots=cfg.n_parts)
    n_formula = part_count(length, window, cfg.stride)
    n_real = min(n_formula, cfg.n_parts)
    parts = []
    for j in range(n_real):
        start = j * cfg.stride
        parts.append(detokenize(vocab, ids[start:start + window]))
    return PartSet(parts=parts, n_slots=cfg.n_parts)


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (n_slots, n_answers); padded rows are zero
    real_count: int

    def pad_mask(self) -> np.ndarray:
        mask = np.zeros(self.scores.shape[0], dtype=bool)
        mask[:self.real_count] = True
        return mask


def soft_temporal_attention(matrix: ScoreMatrix, temperature: float) -> np.ndarray:
    """Temperature-softmax mix of real score rows, weighted by each part's
    best answer score."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if matrix.real_count < 1:
        raise ValueError("score matrix has no real parts")
    real = matrix.scores[:matrix.real_count]
    best = real.max(axis=1)
    shifted = (best - best.max()) / temperature
    weights = np.exp(shifted)
    weights /= weights.sum()
    return weights @ real


def hard_temporal_attention(matrix: ScoreMatrix) -> np.ndarray:
    """Row of the globally best (part, answer) score; ties take the lowest
    part index, then the lowest answer index."""
    if matrix.real_count < 1:
        raise ValueError("score matrix has no real parts")
    real = matrix.scores[:matrix.real_count]
    j_star = np.unravel_index(np.argmax(real), real.shape)[0]
    return real[j_star].copy()


# ---------------------------------------------------------------------------
# Stream text resolution


@dataclass
class StreamTexts:
    scene_summaries: dict[str, str] = field(default_factory=dict)
    episode_summaries: dict[str, str] = field(default_factory=dict)


def stream_text(kind: str, item: QAItem, corpus: Corpus,
                texts: StreamTexts | None = None) -> str:
    if kind == "raw_dialog":
        scene = corpus.scene(item.scene_id)
        return " ".join(f"{u.speaker} {u.text}" for u in scene.utterances)
    if kind == "video_description":
        return corpus.scene(item.scene_id).video_description
    if kind == "scene_summary":
        if texts is None or item.scene_id not in texts.scene_summaries:
            raise MissingStreamText(f"no scene summary for {item.scene_id!r}")
        return texts.scene_summaries[item.scene_id]
    if kind == "episode_summary":
        episode_id = corpus.episode_of(item.scene_id).id
        if texts is None or episode_id not in texts.episode_summaries:
            raise MissingStreamText(f"no episode summary for {episode_id!r}")
        return texts.episode_summaries[episode_id]
    if kind == "plot":
        episode = corpus.episode_of(item.scene_id)
        if episode.plot is None:
            raise MissingStreamText(f"no plot for episode {episode.id!r}")
        return episode.plot
    raise ValueError(f"unknown stream kind {kind!r}")


# ---------------------------------------------------------------------------
# Stream model


@dataclass
class StreamModel:
    kind: str
    encoder: EncoderModel
    head_w: Tensor  # (d, 1)
    head_b: Tensor  # (1,)
    window: WindowConfig
    soft_attention: bool = True

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if self.head_w.shape != (self.encoder.config.dim, 1):
            raise ValueError("classifier head does not match encoder dimension")

    @property
    def is_episode(self) -> bool:
        return self.kind in EPISODE_STREAMS

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + [self.head_w, self.head_b]

    def state(self) -> dict[str, np.ndarray]:
        state = self.encoder.state()
        state["head_w"] = self.head_w.data.copy()
        state["head_b"] = self.head_b.data.copy()
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.head_w.data[...] = state["head_w"]
        self.head_b.data[...] = state["head_b"]
        self.encoder.load_state({k: v for k, v in state.items()
                                 if k not in ("head_w", "head_b")})


def new_stream_model(kind: str, vocab: Vocabulary, window: WindowConfig,
                     encoder_config: EncoderConfig | None = None, seed: int = 0,
                     soft_attention: bool = True) -> StreamModel:
    config = encoder_config or EncoderConfig(vocab_size=len(vocab),
                                             max_len=window.k)
    if config.max_len != window.k:
        raise ValueError("encoder max_len must equal the window k")
    encoder = EncoderModel(config, vocab, seed=seed)
    head_w = ad.parameter(np.zeros((config.dim, 1)))
    head_b = ad.parameter(np.zeros(1))
    return StreamModel(kind=kind, encoder=encoder, head_w=head_w, head_b=head_b,
                       window=window, soft_attention=soft_attention)


# ---------------------------------------------------------------------------
# Packed-row preparation (cached across epochs)


@dataclass
class PreparedItem:
    ids: np.ndarray       # (n_slots * n_answers, k)
    segments: np.ndarray
    attn_mask: np.ndarray
    n_slots: int
    real_count: int
    n_answers: int
    correct: int


def prepare_item(model: StreamModel, text: str, item: QAItem,
                 n_slots: int | None = None) -> PreparedItem:
    vocab = model.encoder.vocab
    window = model.window
    if model.is_episode:
        part_set = split_parts(text, item.question, item.answers, window, vocab)
        parts, real = part_set.parts, part_set.real_count
        slots = n_slots if n_slots is not None else window.n_parts
    else:
        parts, real, slots = [text], 1, 1
    seqs = []
    for j in range(slots):
        part = parts[min(j, real - 1)]  # filler rows are masked out later
        for answer in item.answers:
            seqs.append(pack_pair(vocab, part + " " + item.question, answer,
                                  window.k))
    ids, segments, attn_mask = sequences_to_arrays(seqs)
    return PreparedItem(ids=ids, segments=segments, attn_mask=attn_mask,
                        n_slots=slots, real_count=real,
                        n_answers=len(item.answers), correct=item.correct_index)


def prepare_items(model: StreamModel, items: list[QAItem],
                  resolved: list[str]) -> list[PreparedItem]:
    """Pack all rows once; episode slots shrink to the observed maximum."""
    if model.is_episode:
        vocab, window = model.encoder.vocab, model.window
        counts = []
        for text, item in zip(resolved, items):
            counts.append(split_parts(text, item.question, item.answers,
                                      window, vocab).real_count)
        n_slots = max(counts)
    else:
        n_slots = 1
    return [prepare_item(model, text, item, n_slots=n_slots)
            for text, item in zip(resolved, items)]


def _cls_rows(model: StreamModel, prepared: list[PreparedItem]) -> Tensor:
    ids = np.concatenate([p.ids for p in prepared], axis=0)
    segments = np.concatenate([p.segments for p in prepared], axis=0)
    attn_mask = np.concatenate([p.attn_mask for p in prepared], axis=0)
    hidden = encode_hidden(model.encoder, ids, segments, attn_mask)
    cls = ad.narrow(hidden, 1, 0, 1)
    return ad.reshape(cls, (ids.shape[0], model.encoder.config.dim))


def _part_mask(prepared: list[PreparedItem]) -> np.ndarray:
    return np.stack([np.arange(p.n_slots) < p.real_count for p in prepared])


def _batch_scores(model: StreamModel, prepared: list[PreparedItem]) -> Tensor:
    """Score tensor (batch, n_slots, n_answers) for a homogeneous batch."""
    n_slots = prepared[0].n_slots
    n_answers = prepared[0].n_answers
    cls = _cls_rows(model, prepared)
    z = ad.add(ad.matmul(cls, model.head_w), model.head_b)
    return ad.reshape(z, (len(prepared), n_slots, n_answers))


def _attended_scores(model: StreamModel, scores: Tensor,
                     prepared: list[PreparedItem]) -> Tensor:
    """Collapse part scores to one score vector per item (batch, n_answers)."""
    batch, n_slots, n_answers = scores.shape
    if n_slots == 1:
        return ad.reshape(scores, (batch, n_answers))
    mask = _part_mask(prepared)
    if model.soft_attention:
        best = ad.reduce_max(scores, axis=2)
        weights = ad.masked_softmax(best, mask, model.window.temperature)
        mixed = ad.matmul(ad.reshape(weights, (batch, 1, n_slots)), scores)
        return ad.reshape(mixed, (batch, n_answers))
    masked = np.where(mask[:, :, None], scores.data, -np.inf)
    flat_best = masked.reshape(batch, -1).argmax(axis=1)
    j_star = flat_best // n_answers
    one_hot = np.zeros((batch, 1, n_slots))
    one_hot[np.arange(batch), 0, j_star] = 1.0
    picked = ad.matmul(ad.constant(one_hot), scores)
    return ad.reshape(picked, (batch, n_answers))


def score_scene(model: StreamModel, text: str, item: QAItem) -> np.ndarray:
    """Eq-style scene scores: one linear score per answer."""
    if model.is_episode:
        raise ValueError(f"{model.kind} is an episode stream; use score_episode")
    prepared = prepare_item(model, text, item)
    return _batch_scores(model, [prepared]).data[0, 0]


def score_episode(model: StreamModel, text: str, item: QAItem) -> ScoreMatrix:
    """Per-part, per-answer score matrix for an episode stream."""
    if not model.is_episode:
        raise ValueError(f"{model.kind} is a scene stream; use score_scene")
    prepared = prepare_item(model, text, item)
    scores = _batch_scores(model, [prepared]).data[0]
    real = prepared.real_count
    full = np.zeros((model.window.n_parts, prepared.n_answers))
    full[:real] = scores[:real]
    return ScoreMatrix(scores=full, real_count=real)


def item_scores(model: StreamModel, text: str, item: QAItem) -> np.ndarray:
    """Final per-answer scores, applying the model's temporal attention."""
    if model.is_episode:
        matrix = score_episode(model, text, item)
        if model.soft_attention:
            return soft_temporal_attention(matrix, model.window.temperature)
        return hard_temporal_attention(matrix)
    return score_scene(model, text, item)


def predict(model: StreamModel, text: str, item: QAItem) -> int:
    """Answer index with the highest score; ties take the lowest index."""
    return int(np.argmax(item_scores(model, text, item)))


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 8
    optimizer: str = "adam"  # "adam" or "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    plateau_patience: int = 4
    lr_decay: float = 0.5
    soft_attention: bool = True
    seed: int = 0

    def make_optimizer(self, params: list[Tensor]):
        if self.optimizer == "adam":
            return Adam(params, learning_rate=self.learning_rate)
        if self.optimizer == "sgd":
            return SgdMomentum(params, learning_rate=self.learning_rate,
                               momentum=self.momentum)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _predictions(model: StreamModel, prepared: list[PreparedItem],
                 batch_size: int = 16) -> np.ndarray:
    preds = []
    for start in range(0, len(prepared), batch_size):
        chunk = prepared[start:start + batch_size]
        scores = _batch_scores(model, chunk)
        final = _attended_scores(model, scores, chunk)
        preds.extend(np.argmax(final.data, axis=1))
    return np.array(preds, dtype=int)


def accuracy(preds: np.ndarray, prepared: list[PreparedItem]) -> float:
    correct = np.array([p.correct for p in prepared])
    return float((preds == correct).mean()) if len(prepared) else 0.0


def resolve_texts(kind: str, items: list[QAItem], corpus: Corpus,
                  texts: StreamTexts | None) -> list[str]:
    return [stream_text(kind, item, corpus, texts) for item in items]


def train_stream(corpus: Corpus, kind: str, hyper: TrainConfig,
                 texts: StreamTexts | None = None,
                 vocab: Vocabulary | None = None,
                 window: WindowConfig | None = None,
                 encoder_config: EncoderConfig | None = None,
                 model: StreamModel | None = None):
    """Fine-tune one stream end to end; returns (model, history).

    The returned model carries the parameters of the best validation epoch.
    Episode streams train through soft temporal attention unless
    ``hyper.soft_attention`` is false, in which case the best-scoring part's
    row is used (hard attention).
    """
    if model is None:
        if vocab is None:
            raise ValueError("either a model or a vocabulary is required")
        window = window or WindowConfig()
        model = new_stream_model(kind, vocab, window,
                                 encoder_config=encoder_config, seed=hyper.seed,
                                 soft_attention=hyper.soft_attention)
    model.soft_attention = hyper.soft_attention

    train_texts = resolve_texts(kind, corpus.qa_train, corpus, texts)
    val_texts = resolve_texts(kind, corpus.qa_val, corpus, texts)
    train_prep = prepare_items(model, corpus.qa_train, train_texts)
    val_prep = prepare_items(model, corpus.qa_val, val_texts)

    history = {"train_loss": [], "val_accuracy": [], "learning_rate": []}
    best_state = model.state()
    best_accuracy = accuracy(_predictions(model, val_prep), val_prep) if val_prep else 0.0
    optimizer = hyper.make_optimizer(model.parameters())
    rng = np.random.default_rng(hyper.seed)
    since_best = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(train_prep))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            batch = [train_prep[i] for i in order[start:start + hyper.batch_size]]
            targets = np.array([p.correct for p in batch])
            with Tape() as tape:
                scores = _batch_scores(model, batch)
                final = _attended_scores(model, scores, batch)
                loss = ad.cross_entropy(final, targets)
            backward(tape, loss)
            optimizer.step()
            losses.append(loss.item())
        val_accuracy = (accuracy(_predictions(model, val_prep), val_prep)
                        if val_prep else 0.0)
        history["train_loss"].append(float(np.mean(losses)) if losses else 0.0)
        history["val_accuracy"].append(val_accuracy)
        history["learning_rate"].append(optimizer.learning_rate)
        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = model.state()
            since_best = 0
        else:
            since_best += 1
            if since_best >= hyper.plateau_patience:
                optimizer.learning_rate *= hyper.lr_decay
                since_best = 0
    if hyper.epochs > 0:
        model.load_state(best_state)
    history["best_val_accuracy"] = best_accuracy
    return model, history


def evaluate_stream(model: StreamModel, items: list[QAItem], corpus: Corpus,
                    texts: StreamTexts | None = None):
    """(accuracy, predictions) over a list of items."""
    resolved = resolve_texts(model.kind, items, corpus, texts)
    prepared = prepare_items(model, items, resolved)
    preds = _predictions(model, prepared)
    return accuracy(preds, prepared), preds


def dump_stream_scores(model: StreamModel, items: list[QAItem], corpus: Corpus,
                       texts: StreamTexts | None, path, split: str = "test") -> None:
    """Per-item JSONL score dump: the score matrix, final scores, prediction."""
    with open(path, "w", encoding="utf-8") as fh:
        for index, item in enumerate(items):
            text = stream_text(model.kind, item, corpus, texts)
            if model.is_episode:
                matrix = score_episode(model, text, item)
                if model.soft_attention:
                    z = soft_temporal_attention(matrix, model.window.temperature)
                else:
                    z = hard_temporal_attention(matrix)
                s_rows = matrix.scores[:matrix.real_count]
            else:
                z = score_scene(model, text, item)
                s_rows = z[None, :]
            record = {
                "qid": f"{split}:{index}",
                "stream": model.kind,
                "S": [[round(v, 10) for v in row] for row in s_rows.tolist()],
                "z": [round(v, 10) for v in z.tolist()],
                "pred": int(np.argmax(z)),
                "correct": item.correct_index,
            }
            fh.write(json.dumps(record) + "\n")
