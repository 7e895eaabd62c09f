import numpy as np
import pytest

from dialogqa.segmentation import (
    Block, DialogViews, StageHmm, _cosine_matrix, _rank_transform, build_views,
    c99_segment, hmm_train, stage_segment, topic_blocks_from_boundaries, viterbi,
)


def brute_force_best_single_boundary(embs):
    """Oracle: evaluate the inside-density objective at every single split."""
    rank = _rank_transform(_cosine_matrix(np.asarray(embs, dtype=float)))
    n = rank.shape[0]
    best_cut, best_density = None, -np.inf
    for cut in range(1, n):
        inside = rank[:cut, :cut].sum() + rank[cut:, cut:].sum()
        area = cut ** 2 + (n - cut) ** 2
        density = inside / area
        if density > best_density:
            best_cut, best_density = cut, density
    return best_cut


def planted_dialog(rng, n_topics=3, low=5, high=9, dim=24, noise=0.08):
    directions = np.linalg.qr(rng.normal(size=(dim, dim)))[0][:n_topics]
    lengths = rng.integers(low, high, size=n_topics)
    embs, true_bounds, pos = [], [], 0
    for topic, length in enumerate(lengths):
        for _ in range(length):
            embs.append(directions[topic] + noise * rng.normal(size=dim))
        pos += int(length)
        if topic < n_topics - 1:
            true_bounds.append(pos)
    return np.array(embs), true_bounds


def test_single_utterance_no_boundary():
    assert c99_segment(np.ones((1, 4)), max_segments=3) == []


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        c99_segment(np.zeros((0, 4)), max_segments=2)


def test_two_orthogonal_topics_boundary_at_three():
    e = np.array([1.0, 0.0, 0.0, 0.0])
    f = np.array([0.0, 1.0, 0.0, 0.0])
    embs = np.array([e, e, e, f, f, f])
    assert brute_force_best_single_boundary(embs) == 3
    assert c99_segment(embs, max_segments=2) == [3]


def test_planted_three_topic_recovery_f1():
    rng = np.random.default_rng(99)
    f1_scores = []
    for _ in range(100):
        embs, truth = planted_dialog(rng)
        predicted = c99_segment(embs, max_segments=int(np.ceil(len(embs) / 3)))
        tp = len(set(predicted) & set(truth))
        precision = tp / len(predicted) if predicted else 0.0
        recall = tp / len(truth)
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        f1_scores.append(f1)
    assert np.mean(f1_scores) >= 0.9


def test_boundaries_scale_invariant():
    rng = np.random.default_rng(7)
    embs, _ = planted_dialog(rng)
    base = c99_segment(embs, max_segments=6)
    for factor in (1e-3, 0.5, 42.0, 1e6):
        assert c99_segment(embs * factor, max_segments=6) == base


def test_boundaries_strictly_increasing():
    rng = np.random.default_rng(8)
    for _ in range(20):
        embs = rng.normal(size=(rng.integers(2, 25), 8))
        bounds = c99_segment(embs, max_segments=5)
        assert all(a < b for a, b in zip(bounds, bounds[1:]))
        assert all(0 < b < len(embs) for b in bounds)


def test_topic_blocks_partition():
    blocks = topic_blocks_from_boundaries([3, 7], 10)
    assert [(b.start, b.end) for b in blocks] == [(0, 3), (3, 7), (7, 10)]
    assert all(b.view == "topic" for b in blocks)


# ---------------------------------------------------------------------------
# Stage HMM


def sample_hmm(rng, n_obs, means, variances, initial, transition):
    states, obs = [], []
    state = rng.choice(len(initial), p=initial)
    for _ in range(n_obs):
        states.append(state)
        obs.append(rng.normal(means[state], np.sqrt(variances[state])))
        state = rng.choice(len(initial), p=transition[state])
    return np.array(states), np.array(obs)


def test_two_state_recovery_permutation_adjusted():
    rng = np.random.default_rng(12)
    means = np.array([[0.0, 0.0], [3.0, 3.0]])
    variances = np.full((2, 2), 0.25)
    initial = np.array([0.6, 0.4])
    transition = np.array([[0.9, 0.1], [0.2, 0.8]])
    sequences, state_paths = [], []
    for _ in range(8):
        states, obs = sample_hmm(rng, 60, means, variances, initial, transition)
        sequences.append(obs)
        state_paths.append(states)
    hmm = hmm_train(sequences, n_states=2, seed=3)
    agreements = []
    for obs, truth in zip(sequences, state_paths):
        decoded = np.array(viterbi(hmm, obs))
        direct = (decoded == truth).mean()
        flipped = (1 - decoded == truth).mean()
        agreements.append(max(direct, flipped))
    assert np.mean(agreements) >= 0.9


def test_single_state_transition_is_one():
    rng = np.random.default_rng(1)
    hmm = hmm_train([rng.normal(size=(30, 3))], n_states=1, seed=0)
    assert hmm.transition.shape == (1, 1)
    assert np.allclose(hmm.transition, [[1.0]])


def test_loglik_monotone_nondecreasing():
    rng = np.random.default_rng(5)
    sequences = [rng.normal(size=(40, 4)) + (i % 2) for i in range(6)]
    hmm = hmm_train(sequences, n_states=3, seed=2)
    lls = hmm.train_loglik
    assert len(lls) >= 2
    for prev, cur in zip(lls, lls[1:]):
        assert cur >= prev - 1e-9


def test_degenerate_identical_embeddings_still_returns():
    data = np.ones((50, 3))
    hmm = hmm_train([data], n_states=2, seed=0)
    assert np.isfinite(hmm.means).all()
    assert (hmm.variances > 0).all()
    labels = viterbi(hmm, data)
    assert len(labels) == 50


def test_too_few_utterances_rejected():
    with pytest.raises(ValueError, match="at least"):
        hmm_train([np.zeros((5, 2))], n_states=2)


def test_stage_segment_single_utterance():
    rng = np.random.default_rng(9)
    hmm = hmm_train([rng.normal(size=(40, 2))], n_states=2, seed=1)
    blocks = stage_segment(hmm, rng.normal(size=(1, 2)))
    assert len(blocks) == 1
    assert (blocks[0].start, blocks[0].end) == (0, 1)


def test_viterbi_deterministic():
    rng = np.random.default_rng(10)
    hmm = hmm_train([rng.normal(size=(40, 2))], n_states=2, seed=1)
    obs = rng.normal(size=(25, 2))
    assert viterbi(hmm, obs) == viterbi(hmm, obs)


def test_stage_blocks_are_maximal_runs():
    hmm = StageHmm(
        n_states=2,
        initial=np.array([0.5, 0.5]),
        transition=np.array([[0.9, 0.1], [0.1, 0.9]]),
        means=np.array([[0.0], [5.0]]),
        variances=np.array([[0.5], [0.5]]),
    )
    obs = np.array([[0.1], [0.0], [5.2], [4.9], [0.2]])
    blocks = stage_segment(hmm, obs)
    assert [(b.label, b.start, b.end) for b in blocks] == [(0, 0, 2), (1, 2, 4), (0, 4, 5)]


# ---------------------------------------------------------------------------
# Views


def test_views_partition_everything():
    rng = np.random.default_rng(20)
    hmm = hmm_train([rng.normal(size=(60, 6))], n_states=2, seed=4)
    for _ in range(10):
        embs = rng.normal(size=(rng.integers(1, 30), 6))
        views = build_views(embs, hmm=hmm)
        for blocks in (views.topic_blocks, views.stage_blocks):
            covered = []
            for block in blocks:
                covered.extend(range(block.start, block.end))
            assert covered == list(range(len(embs)))


def test_views_validation_rejects_gaps():
    good = [Block("topic", 0, 0, 5)]
    bad = [Block("stage", 0, 0, 2), Block("stage", 1, 3, 5)]
    with pytest.raises(ValueError, match="partition"):
        DialogViews(topic_blocks=good, stage_blocks=bad)
