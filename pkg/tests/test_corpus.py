import json

import pytest

from dialogqa.corpus import (
    Corpus, CorpusError, Episode, QAItem, Scene, SyntheticSpec, Utterance,
    generate_synthetic, load_corpus, load_plots, save_corpus, save_plots,
)


def small_spec(**overrides):
    base = dict(episodes=4, scenes_per_episode=3, utterances_per_scene=3,
                utterance_length=4, questions_train=24, questions_val=8,
                questions_test=12, filler_vocab=40, answer_vocab=80)
    base.update(overrides)
    return SyntheticSpec(**base)


def test_minimal_file_roundtrip(tmp_path):
    path = tmp_path / "corpus.jsonl"
    lines = [
        {"kind": "scene", "episode_id": "e0", "scene_id": "e0s0",
         "video_description": "a cat",
         "utterances": [{"speaker": "sheldon", "text": "hello there"}]},
        {"kind": "qa", "split": "train", "scene_id": "e0s0",
         "question": "what is said", "answers": ["a", "b", "c", "d"],
         "correct_index": 1, "qtype": "textual"},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    corpus = load_corpus(path)
    assert len(corpus.episodes) == 1
    assert len(corpus.episodes[0].scenes) == 1
    assert len(corpus.qa_train) == 1
    assert corpus.qa_train[0].correct_index == 1
    assert corpus.scene("e0s0").video_description == "a cat"


def test_wrong_answer_count_names_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    lines = [
        {"kind": "scene", "episode_id": "e0", "scene_id": "e0s0",
         "video_description": "",
         "utterances": [{"speaker": "s", "text": "t"}]},
        {"kind": "qa", "split": "train", "scene_id": "e0s0",
         "question": "q", "answers": ["a", "b", "c"], "correct_index": 0},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    with pytest.raises(CorpusError, match=r"answer-count") as excinfo:
        load_corpus(path)
    assert ":2:" in str(excinfo.value)


def test_parse_error_has_line_number(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"kind": "scene"\n')
    with pytest.raises(CorpusError, match=r":1:"):
        load_corpus(path)


def test_dangling_scene_id(tmp_path):
    path = tmp_path / "corpus.jsonl"
    lines = [
        {"kind": "scene", "episode_id": "e0", "scene_id": "e0s0",
         "video_description": "", "utterances": [{"speaker": "s", "text": "t"}]},
        {"kind": "qa", "split": "test", "scene_id": "missing",
         "question": "q", "answers": ["a", "b", "c", "d"], "correct_index": 0},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    with pytest.raises(CorpusError, match="unknown scene_id"):
        load_corpus(path)


def test_generated_roundtrip_equals_original(tmp_path):
    corpus = generate_synthetic(seed=3, spec=small_spec())
    path = tmp_path / "corpus.jsonl"
    save_corpus(corpus, path)
    reloaded = load_corpus(path)
    assert reloaded.episodes == corpus.episodes
    assert reloaded.qa_train == corpus.qa_train
    assert reloaded.qa_val == corpus.qa_val
    assert reloaded.qa_test == corpus.qa_test


def test_generation_deterministic(tmp_path):
    spec = small_spec()
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(generate_synthetic(seed=1, spec=spec), a)
    save_corpus(generate_synthetic(seed=1, spec=small_spec()), b)
    assert a.read_bytes() == b.read_bytes()
    save_corpus(generate_synthetic(seed=2, spec=spec), b)
    assert a.read_bytes() != b.read_bytes()


def test_no_knowledge_questions_when_weight_zero():
    spec = small_spec(qtype_weights={"visual": 1.0, "textual": 1.0})
    corpus = generate_synthetic(seed=5, spec=spec)
    for split in ("train", "val", "test"):
        for item in corpus.split(split):
            assert item.qtype in ("visual", "textual")
            scene = corpus.scene(item.scene_id)
            correct = item.answers[item.correct_index]
            scene_text = " ".join(u.text for u in scene.utterances)
            evidence = scene_text + " " + scene.video_description
            assert correct in evidence.split()


def test_knowledge_evidence_outside_own_scene():
    # Exhaustive scan over the generated corpus: the planted token never
    # occurs in the question's own scene dialog but does occur elsewhere in
    # the episode.
    corpus = generate_synthetic(seed=7, spec=small_spec())
    checked = 0
    for split in ("train", "val", "test"):
        for item in corpus.split(split):
            if item.qtype != "knowledge":
                continue
            checked += 1
            correct = item.answers[item.correct_index]
            own = corpus.scene(item.scene_id)
            own_tokens = {w for u in own.utterances for w in u.text.split()}
            assert correct not in own_tokens
            episode = corpus.episode_of(item.scene_id)
            other_tokens = {w for s in episode.scenes if s.scene_id != item.scene_id
                            for u in s.utterances for w in u.text.split()}
            assert correct in other_tokens
    assert checked > 0


def test_qtype_distribution_matched_exactly():
    spec = small_spec(qtype_weights={"visual": 2.0, "textual": 1.0, "knowledge": 1.0},
                      questions_train=24)
    corpus = generate_synthetic(seed=11, spec=spec)
    counts = {}
    for item in corpus.qa_train:
        counts[item.qtype] = counts.get(item.qtype, 0) + 1
    assert counts == {"visual": 12, "textual": 6, "knowledge": 6}


def test_distractors_never_equal_correct_answer():
    corpus = generate_synthetic(seed=13, spec=small_spec())
    for split in ("train", "val", "test"):
        for item in corpus.split(split):
            correct = item.answers[item.correct_index]
            assert sum(1 for a in item.answers if a == correct) == 1
            assert len(set(item.answers)) == len(item.answers)


def test_distractors_absent_from_episode_evidence():
    # Stronger planting guarantee: distractors never occur anywhere in the
    # question's episode, so exact-match evidence is unambiguous.
    corpus = generate_synthetic(seed=17, spec=small_spec())
    for split in ("train", "val", "test"):
        for item in corpus.split(split):
            episode = corpus.episode_of(item.scene_id)
            tokens = set()
            for scene in episode.scenes:
                tokens.update(scene.video_description.split())
                for u in scene.utterances:
                    tokens.update(u.text.split())
            for i, answer in enumerate(item.answers):
                if i != item.correct_index:
                    assert answer not in tokens


def test_nonpositive_spec_counts_rejected():
    with pytest.raises(CorpusError, match="positive"):
        generate_synthetic(seed=1, spec=small_spec(episodes=0))
    with pytest.raises(CorpusError, match="positive"):
        generate_synthetic(seed=1, spec=small_spec(utterance_length=-1))


def test_knowledge_needs_two_scenes():
    with pytest.raises(CorpusError, match="knowledge"):
        generate_synthetic(seed=1, spec=small_spec(scenes_per_episode=1))


def test_plots_roundtrip(tmp_path):
    corpus = generate_synthetic(seed=19, spec=small_spec())
    corpus.episodes[0].plot = "a plot about robots"
    plots = tmp_path / "plots.jsonl"
    save_plots(corpus, plots)
    other = generate_synthetic(seed=19, spec=small_spec())
    load_plots(other, plots)
    assert other.episodes[0].plot == "a plot about robots"
    assert other.episodes[1].plot is None


def test_duplicate_scene_id_rejected():
    scene = Scene(episode_id="e0", scene_id="s0",
                  utterances=[Utterance("a", "b")])
    other = Scene(episode_id="e1", scene_id="s0",
                  utterances=[Utterance("a", "b")])
    corpus = Corpus(episodes=[Episode("e0", [scene]), Episode("e1", [other])],
                    qa_train=[], qa_val=[], qa_test=[])
    from dialogqa.corpus import _validate
    with pytest.raises(CorpusError, match="duplicate"):
        _validate(corpus, 4)
