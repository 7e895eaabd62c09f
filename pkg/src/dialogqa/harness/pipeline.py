"""Pipeline orchestration: vocabulary, dialog structuring, stream training."""

from __future__ import annotations

import numpy as np

from ..corpus import Corpus
from ..encoder import EncoderConfig, EncoderModel, embed_sentence
from ..segmentation import StageHmm, build_views, hmm_train
from ..streams import StreamModel, StreamTexts, train_stream
from ..summarize import (SUMMARY_EXTRA_WORDS, Summary, build_episode_summary,
                         summarize_scene)
from ..tokenizer import Vocabulary, build_vocab
from .config import RunConfig

# Stable per-component seed offsets so every stage draws independent streams.
SEED_OFFSETS = {
    "sentence_encoder": 101,
    "hmm": 211,
    "video_description": 311,
    "raw_dialog": 331,
    "scene_summary": 351,
    "episode_summary": 371,
    "plot": 391,
    "fusion": 401,
}


def build_pipeline_vocab(corpus: Corpus, max_size: int) -> Vocabulary:
    """Corpus vocabulary seeded with the summarizer's template words."""
    return build_vocab(corpus, max_size=max_size, extra_words=SUMMARY_EXTRA_WORDS)


def make_sentence_encoder(cfg: RunConfig, vocab: Vocabulary) -> EncoderModel:
    """Untrained embedder for dialog structuring; shared token space keeps
    similar utterances close, which is all segmentation needs."""
    enc_cfg = EncoderConfig(vocab_size=len(vocab), max_len=32, **cfg.encoder)
    return EncoderModel(enc_cfg, vocab,
                        seed=cfg.seed + SEED_OFFSETS["sentence_encoder"])


def structure_dialogs(corpus: Corpus, embedder: EncoderModel,
                      stage_states: int = 4, seed: int = 0):
    """Views and summaries for every scene; returns (texts, views, hmm)."""
    scene_embs: dict[str, np.ndarray] = {}
    for episode in corpus.episodes:
        for scene in episode.scenes:
            if scene.utterances:
                scene_embs[scene.scene_id] = np.stack([
                    embed_sentence(embedder, u.text) for u in scene.utterances])
            else:
                scene_embs[scene.scene_id] = np.zeros((0, embedder.config.dim))

    sequences = [e for e in scene_embs.values() if len(e)]
    total = sum(len(e) for e in sequences)
    hmm: StageHmm | None = None
    if stage_states >= 1 and total >= 10 * stage_states:
        hmm = hmm_train(sequences, n_states=stage_states, seed=seed)

    views_by_scene = {}
    scene_summaries: dict[str, Summary] = {}
    for episode in corpus.episodes:
        for scene in episode.scenes:
            embs = scene_embs[scene.scene_id]
            if len(embs) == 0:
                scene_summaries[scene.scene_id] = Summary(text="", token_length=0)
                continue
            views = build_views(embs, hmm=hmm)
            views_by_scene[scene.scene_id] = views
            scene_summaries[scene.scene_id] = summarize_scene(scene, views, embs)

    episode_summaries = {episode.id: build_episode_summary(episode, scene_summaries)
                         for episode in corpus.episodes}
    texts = StreamTexts(
        scene_summaries={sid: s.text for sid, s in scene_summaries.items()},
        episode_summaries={eid: s.text for eid, s in episode_summaries.items()},
    )
    return texts, views_by_scene, hmm


def train_all_streams(cfg: RunConfig, corpus: Corpus, vocab: Vocabulary,
                      texts: StreamTexts) -> dict[str, tuple[StreamModel, dict]]:
    """Train every configured stream; returns kind -> (model, history)."""
    results = {}
    for kind in cfg.streams:
        hyper = cfg.train_for(kind, seed_offset=SEED_OFFSETS[kind])
        model, history = train_stream(
            corpus, kind, hyper, texts=texts, vocab=vocab,
            window=cfg.window_for(kind),
            encoder_config=cfg.encoder_for(kind, len(vocab)))
        results[kind] = (model, history)
    return results
