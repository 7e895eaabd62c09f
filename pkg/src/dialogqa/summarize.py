"""Deterministic extractive scene summaries in third person.

For each topic block the utterance nearest the block centroid is selected,
then the selection is extended with next-nearest utterances while the summary
stays within the token budget. Selected utterances are rewritten so that
first-person subjects become the speaker's name and second-person ones the
previous (different) speaker's name, and emitted as "<speaker> says that ..."
sentences in narrative order. Episode summaries concatenate scene summaries
in scene order without a length cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Episode, Scene
from .segmentation import DialogViews

MIN_SUMMARY_TOKENS = 30
MAX_SUMMARY_TOKENS = 100

# Fixed template words the summarizer can emit; seeded into the vocabulary
# (build_vocab extra_words) so summaries always tokenize cleanly.
SUMMARY_EXTRA_WORDS = (".", "'s", "says", "that", "the", "others")

_FIRST_PERSON = {"i", "me", "we"}
_FIRST_PERSON_POSSESSIVE = {"my"}
_SECOND_PERSON = {"you"}
_SECOND_PERSON_POSSESSIVE = {"your"}


@dataclass
class Summary:
    text: str
    token_length: int

    @classmethod
    def from_text(cls, text: str) -> "Summary":
        return cls(text=text, token_length=len(text.split()))


def _previous_speaker(scene: Scene, index: int) -> str | None:
    current = scene.utterances[index].speaker
    for j in range(index - 1, -1, -1):
        if scene.utterances[j].speaker != current:
            return scene.utterances[j].speaker
    return None


def rewrite_third_person(words: list[str], speaker: str,
                         previous: str | None) -> list[str]:
    """Replace subject pronouns with names; matches whole lowercased words."""
    addressee = previous if previous is not None else "the others"
    out: list[str] = []
    for word in words:
        key = word.lower()
        if key in _FIRST_PERSON:
            out.append(speaker)
        elif key in _FIRST_PERSON_POSSESSIVE:
            out.extend([speaker, "'s"])
        elif key in _SECOND_PERSON:
            out.extend(addressee.split())
        elif key in _SECOND_PERSON_POSSESSIVE:
            out.extend(addressee.split() + ["'s"])
        else:
            out.append(word)
    return out


def _sentence(scene: Scene, index: int) -> str:
    utterance = scene.utterances[index]
    words = rewrite_third_person(utterance.text.split(), utterance.speaker,
                                 _previous_speaker(scene, index))
    return " ".join([utterance.speaker, "says", "that"] + words + ["."])


def summarize_scene(scene: Scene, views: DialogViews, embs,
                    min_len: int = MIN_SUMMARY_TOKENS,
                    max_len: int = MAX_SUMMARY_TOKENS) -> Summary:
    """Extractive third-person summary of one scene's dialog."""
    if not scene.utterances:
        return Summary(text="", token_length=0)
    embs = np.asarray(embs, dtype=float)
    if embs.shape[0] != len(scene.utterances):
        raise ValueError("one embedding per utterance required")

    # Per block, utterances ordered by distance to the block centroid;
    # candidate order interleaves rounds across blocks (nearest first).
    per_block: list[list[int]] = []
    for block in views.topic_blocks:
        indices = list(range(block.start, block.end))
        centroid = embs[block.start:block.end].mean(axis=0)
        distances = np.linalg.norm(embs[indices] - centroid, axis=1)
        order = np.argsort(distances, kind="stable")
        per_block.append([indices[i] for i in order])
    candidates: list[int] = []
    for round_ in range(max(len(b) for b in per_block)):
        for block in per_block:
            if round_ < len(block):
                candidates.append(block[round_])

    sentences = {i: _sentence(scene, i) for i in candidates}
    selected: list[int] = []
    length = 0
    for index in candidates:
        cost = len(sentences[index].split())
        if length + cost <= max_len:
            selected.append(index)
            length += cost
    if not selected:
        # A single utterance longer than the budget: truncate it.
        first = candidates[0]
        words = sentences[first].split()[:max_len]
        return Summary.from_text(" ".join(words))
    selected.sort()
    return Summary.from_text(" ".join(sentences[i] for i in selected))


def build_episode_summary(episode: Episode,
                          scene_summaries: dict[str, Summary]) -> Summary:
    """Concatenate scene summaries in narrative order; no length cap."""
    parts = []
    for scene in episode.scenes:
        summary = scene_summaries[scene.scene_id]
        if summary.text:
            parts.append(summary.text)
    return Summary.from_text(" ".join(parts))


def write_summaries(path, scene_summaries: dict[str, Summary],
                    episode_summaries: dict[str, Summary]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene_id in sorted(scene_summaries):
            fh.write(json.dumps({"scene_id": scene_id,
                                 "summary": scene_summaries[scene_id].text}) + "\n")
        for episode_id in sorted(episode_summaries):
            fh.write(json.dumps({"episode_id": episode_id,
                                 "summary": episode_summaries[episode_id].text}) + "\n")
