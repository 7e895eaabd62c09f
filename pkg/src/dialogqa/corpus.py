"""Corpus data model, JSONL ingestion, and synthetic corpus generation.

A corpus is a set of episodes, each an ordered list of scenes (speaker-tagged
utterances plus a video-description text), together with train/val/test lists
of multiple-choice questions attached to scenes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

QUESTION_TYPES = ("visual", "textual", "temporal", "knowledge")
DEFAULT_ANSWER_COUNT = 4

# Speakers and question templates used by the synthetic generator. The words
# in the templates occur on every question, so they always clear the
# vocabulary frequency threshold.
SPEAKER_NAMES = (
    "sheldon", "leonard", "howard", "raj", "penny", "amy", "bernadette", "stuart",
)
QUESTION_TEMPLATES = {
    "visual": "which thing can be seen here",
    "textual": "which word is said in this scene",
    "temporal": "which word is said at this moment",
    "knowledge": "which word is said in another scene",
}


class CorpusError(ValueError):
    """Malformed corpus file or invalid synthetic specification."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str


@dataclass
class Scene:
    episode_id: str
    scene_id: str
    utterances: list[Utterance]
    video_description: str = ""
    plot_excerpt: str | None = None


@dataclass
class Episode:
    id: str
    scenes: list[Scene]
    plot: str | None = None


@dataclass(frozen=True)
class QAItem:
    scene_id: str
    question: str
    answers: tuple[str, ...]
    correct_index: int
    qtype: str | None = None


@dataclass
class Corpus:
    episodes: list[Episode]
    qa_train: list[QAItem]
    qa_val: list[QAItem]
    qa_test: list[QAItem]
    _scene_index: dict[str, Scene] = field(default_factory=dict, repr=False, compare=False)
    _episode_index: dict[str, Episode] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for episode in self.episodes:
            self._episode_index[episode.id] = episode
            for scene in episode.scenes:
                self._scene_index[scene.scene_id] = scene

    def scene(self, scene_id: str) -> Scene:
        return self._scene_index[scene_id]

    def episode_of(self, scene_id: str) -> Episode:
        return self._episode_index[self._scene_index[scene_id].episode_id]

    def split(self, name: str) -> list[QAItem]:
        try:
            return {"train": self.qa_train, "val": self.qa_val, "test": self.qa_test}[name]
        except KeyError:
            raise KeyError(f"unknown split {name!r}") from None


def _validate(corpus: Corpus, n_answers: int) -> None:
    seen_scene_ids: set[str] = set()
    for episode in corpus.episodes:
        if not episode.id:
            raise CorpusError("episode with empty id")
        for scene in episode.scenes:
            if scene.scene_id in seen_scene_ids:
                raise CorpusError(f"duplicate scene_id {scene.scene_id!r}")
            seen_scene_ids.add(scene.scene_id)
            for utt in scene.utterances:
                if not utt.speaker.strip():
                    raise CorpusError(f"empty speaker in scene {scene.scene_id!r}")
                if not utt.text.strip():
                    raise CorpusError(f"empty utterance text in scene {scene.scene_id!r}")
    for split in ("train", "val", "test"):
        for item in corpus.split(split):
            if item.scene_id not in seen_scene_ids:
                raise CorpusError(f"qa item references unknown scene_id {item.scene_id!r}")
            if len(item.answers) != n_answers:
                raise CorpusError(
                    f"answer-count {len(item.answers)} != {n_answers} for question "
                    f"{item.question!r}"
                )
            if not 0 <= item.correct_index < n_answers:
                raise CorpusError(f"correct_index out of range for question {item.question!r}")
            if item.qtype is not None and item.qtype not in QUESTION_TYPES:
                raise CorpusError(f"unknown qtype {item.qtype!r}")


def load_corpus(path: str | Path, n_answers: int = DEFAULT_ANSWER_COUNT,
                plots_path: str | Path | None = None) -> Corpus:
    """Load a corpus from the JSONL layout, validating all cross references."""
    episodes: list[Episode] = []
    by_episode: dict[str, Episode] = {}
    splits: dict[str, list[QAItem]] = {"train": [], "val": [], "test": []}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: parse error: {exc}") from exc
            kind = record.get("kind")
            try:
                if kind == "scene":
                    episode_id = record["episode_id"]
                    episode = by_episode.get(episode_id)
                    if episode is None:
                        episode = Episode(id=episode_id, scenes=[])
                        by_episode[episode_id] = episode
                        episodes.append(episode)
                    episode.scenes.append(Scene(
                        episode_id=episode_id,
                        scene_id=record["scene_id"],
                        utterances=[Utterance(u["speaker"], u["text"])
                                    for u in record["utterances"]],
                        video_description=record.get("video_description", ""),
                        plot_excerpt=record.get("plot_excerpt"),
                    ))
                elif kind == "qa":
                    split = record["split"]
                    if split not in splits:
                        raise CorpusError(f"{path}:{lineno}: unknown split {split!r}")
                    answers = tuple(record["answers"])
                    if len(answers) != n_answers:
                        raise CorpusError(
                            f"{path}:{lineno}: answer-count {len(answers)} != {n_answers}"
                        )
                    splits[split].append(QAItem(
                        scene_id=record["scene_id"],
                        question=record["question"],
                        answers=answers,
                        correct_index=int(record["correct_index"]),
                        qtype=record.get("qtype"),
                    ))
                else:
                    raise CorpusError(f"{path}:{lineno}: unknown record kind {kind!r}")
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
    corpus = Corpus(episodes=episodes, qa_train=splits["train"],
                    qa_val=splits["val"], qa_test=splits["test"])
    if plots_path is not None:
        load_plots(corpus, plots_path)
    _validate(corpus, n_answers)
    return corpus


def load_plots(corpus: Corpus, path: str | Path) -> None:
    """Attach optional per-episode plot text from a plots JSONL file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                episode_id, plot = record["episode_id"], record["plot"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad plot record: {exc}") from exc
            episode = corpus._episode_index.get(episode_id)
            if episode is None:
                raise CorpusError(f"{path}:{lineno}: unknown episode_id {episode_id!r}")
            episode.plot = plot


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus in the JSONL layout read by :func:`load_corpus`."""
    with open(path, "w", encoding="utf-8") as fh:
        for episode in corpus.episodes:
            for scene in episode.scenes:
                record = {
                    "kind": "scene",
                    "episode_id": scene.episode_id,
                    "scene_id": scene.scene_id,
                    "video_description": scene.video_description,
                    "utterances": [{"speaker": u.speaker, "text": u.text}
                                   for u in scene.utterances],
                }
                if scene.plot_excerpt is not None:
                    record["plot_excerpt"] = scene.plot_excerpt
                fh.write(json.dumps(record) + "\n")
        for split in ("train", "val", "test"):
            for item in corpus.split(split):
                record = {
                    "kind": "qa",
                    "split": split,
                    "scene_id": item.scene_id,
                    "question": item.question,
                    "answers": list(item.answers),
                    "correct_index": item.correct_index,
                }
                if item.qtype is not None:
                    record["qtype"] = item.qtype
                fh.write(json.dumps(record) + "\n")


def save_plots(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for episode in corpus.episodes:
            if episode.plot is not None:
                fh.write(json.dumps({"episode_id": episode.id, "plot": episode.plot}) + "\n")


@dataclass
class SyntheticSpec:
    """Counts and planting plan for a generated corpus.

    Each question's correct answer token is planted in exactly one source:
    the scene's video description (visual), the scene's own dialog (textual
    and temporal), or the dialog of a different scene in the same episode
    (knowledge). Distractors are drawn from the answer vocabulary and never
    collide with any token planted in the same episode, so every question is
    answerable by exact-match evidence in its designated stream.
    """
    episodes: int = 60
    scenes_per_episode: int = 4
    utterances_per_scene: int = 3
    utterance_length: int = 5
    description_length: int = 6
    questions_train: int = 600
    questions_val: int = 200
    questions_test: int = 400
    qtype_weights: dict[str, float] = field(default_factory=lambda: {
        "visual": 1.0, "textual": 1.0, "knowledge": 1.0,
    })
    filler_vocab: int = 120
    # A compact answer pool keeps every answer token frequent in training,
    # which the from-scratch encoders need; large enough that each episode's
    # planted tokens stay distinct.
    answer_vocab: int = 40
    speakers: int = 8
    n_answers: int = DEFAULT_ANSWER_COUNT

    def validate(self) -> None:
        counts = {
            "episodes": self.episodes,
            "scenes_per_episode": self.scenes_per_episode,
            "utterances_per_scene": self.utterances_per_scene,
            "utterance_length": self.utterance_length,
            "description_length": self.description_length,
            "filler_vocab": self.filler_vocab,
            "answer_vocab": self.answer_vocab,
            "speakers": self.speakers,
            "n_answers": self.n_answers,
        }
        for name, value in counts.items():
            if value <= 0:
                raise CorpusError(f"synthetic spec count {name} must be positive, got {value}")
        for name in ("questions_train", "questions_val", "questions_test"):
            if getattr(self, name) < 0:
                raise CorpusError(f"synthetic spec count {name} must be non-negative")
        for qtype, weight in self.qtype_weights.items():
            if qtype not in QUESTION_TYPES:
                raise CorpusError(f"unknown qtype {qtype!r} in qtype_weights")
            if weight < 0:
                raise CorpusError("qtype weights must be non-negative")
        if not any(w > 0 for w in self.qtype_weights.values()):
            raise CorpusError("at least one qtype weight must be positive")
        if self.qtype_weights.get("knowledge", 0) > 0 and self.scenes_per_episode < 2:
            raise CorpusError("knowledge questions require at least 2 scenes per episode")
        if self.speakers > len(SPEAKER_NAMES):
            raise CorpusError(f"at most {len(SPEAKER_NAMES)} speakers supported")


def _random_words(rng: np.random.Generator, count: int, length: int) -> list[str]:
    """Distinct lowercase words of a fixed length; length keeps pools disjoint."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        word = "".join(letters[i] for i in rng.integers(0, 26, size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _allocate_qtypes(weights: dict[str, float], total: int) -> list[str]:
    """Largest-remainder allocation so the requested mix is matched exactly."""
    active = [(qtype, weights[qtype]) for qtype in QUESTION_TYPES
              if weights.get(qtype, 0) > 0]
    weight_sum = sum(w for _, w in active)
    quotas = [(qtype, total * w / weight_sum) for qtype, w in active]
    counts = {qtype: int(q) for qtype, q in quotas}
    remainder = total - sum(counts.values())
    by_fraction = sorted(quotas, key=lambda it: (-(it[1] - int(it[1])), it[0]))
    for qtype, _ in by_fraction[:remainder]:
        counts[qtype] += 1
    allocation: list[str] = []
    for qtype, _ in active:
        allocation.extend([qtype] * counts[qtype])
    return allocation


def generate_synthetic(seed: int, spec: SyntheticSpec | None = None) -> Corpus:
    """Deterministically generate a planted-evidence corpus for a given seed."""
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.default_rng(seed)

    filler = _random_words(rng, spec.filler_vocab, length=4)
    answer_pool = _random_words(rng, spec.answer_vocab, length=6)
    speakers = list(SPEAKER_NAMES[:spec.speakers])

    # Mutable token lists so planting can insert evidence later.
    dialogs: dict[str, list[tuple[str, list[str]]]] = {}
    descriptions: dict[str, list[str]] = {}
    episode_ids = [f"e{i:03d}" for i in range(spec.episodes)]
    scene_ids: dict[str, list[str]] = {}
    for episode_id in episode_ids:
        scene_ids[episode_id] = []
        for j in range(spec.scenes_per_episode):
            scene_id = f"{episode_id}s{j:02d}"
            scene_ids[episode_id].append(scene_id)
            utterances = []
            for _ in range(spec.utterances_per_scene):
                speaker = speakers[rng.integers(0, len(speakers))]
                words = [filler[i] for i in rng.integers(0, len(filler),
                                                         size=spec.utterance_length)]
                utterances.append((speaker, words))
            dialogs[scene_id] = utterances
            descriptions[scene_id] = [filler[i] for i in
                                      rng.integers(0, len(filler),
                                                   size=spec.description_length)]

    all_scene_ids = [sid for episode_id in episode_ids for sid in scene_ids[episode_id]]
    episode_of_scene = {sid: episode_id for episode_id in episode_ids
                        for sid in scene_ids[episode_id]}

    # Phase 1: assign each question a scene, type and a planted token that is
    # unique within its episode.
    split_sizes = [("train", spec.questions_train), ("val", spec.questions_val),
                   ("test", spec.questions_test)]
    planted_by_episode: dict[str, set[str]] = {eid: set() for eid in episode_ids}
    plan: list[tuple[str, str, str, str]] = []  # (split, qtype, scene_id, token)
    for split, size in split_sizes:
        qtypes = _allocate_qtypes(spec.qtype_weights, size)
        rng.shuffle(qtypes)
        for qtype in qtypes:
            scene_id = all_scene_ids[rng.integers(0, len(all_scene_ids))]
            episode_id = episode_of_scene[scene_id]
            used = planted_by_episode[episode_id]
            free = [w for w in answer_pool if w not in used]
            if not free:
                raise CorpusError(
                    "answer_vocab too small for the requested question density"
                )
            token = free[rng.integers(0, len(free))]
            used.add(token)
            plan.append((split, qtype, scene_id, token))

    # Phase 2: plant evidence tokens.
    for split, qtype, scene_id, token in plan:
        if qtype == "visual":
            words = descriptions[scene_id]
            words.insert(int(rng.integers(0, len(words) + 1)), token)
        elif qtype in ("textual", "temporal"):
            utterances = dialogs[scene_id]
            _, words = utterances[rng.integers(0, len(utterances))]
            words.insert(int(rng.integers(0, len(words) + 1)), token)
        else:  # knowledge: a different scene of the same episode
            episode_id = episode_of_scene[scene_id]
            others = [sid for sid in scene_ids[episode_id] if sid != scene_id]
            other = others[rng.integers(0, len(others))]
            utterances = dialogs[other]
            _, words = utterances[rng.integers(0, len(utterances))]
            words.insert(int(rng.integers(0, len(words) + 1)), token)

    # Phase 3: distractors and answer order.
    splits: dict[str, list[QAItem]] = {"train": [], "val": [], "test": []}
    for split, qtype, scene_id, token in plan:
        episode_id = episode_of_scene[scene_id]
        used = planted_by_episode[episode_id]
        candidates = [w for w in answer_pool if w not in used]
        picks = rng.choice(len(candidates), size=spec.n_answers - 1, replace=False)
        answers = [token] + [candidates[i] for i in picks]
        order = rng.permutation(spec.n_answers)
        shuffled = tuple(answers[i] for i in order)
        correct_index = int(np.nonzero(order == 0)[0][0])
        splits[split].append(QAItem(
            scene_id=scene_id,
            question=QUESTION_TEMPLATES[qtype],
            answers=shuffled,
            correct_index=correct_index,
            qtype=qtype,
        ))

    episodes = []
    for episode_id in episode_ids:
        scenes = []
        for scene_id in scene_ids[episode_id]:
            scenes.append(Scene(
                episode_id=episode_id,
                scene_id=scene_id,
                utterances=[Utterance(speaker, " ".join(words))
                            for speaker, words in dialogs[scene_id]],
                video_description=" ".join(descriptions[scene_id]),
            ))
        episodes.append(Episode(id=episode_id, scenes=scenes))

    return Corpus(episodes=episodes, qa_train=splits["train"],
                  qa_val=splits["val"], qa_test=splits["test"])
