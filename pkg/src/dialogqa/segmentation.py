"""Dialog views: topic segmentation (rank-transformed cosine divisive
clustering) and stage segmentation (diagonal-Gaussian HMM).

Both views partition the utterance range [0, n) into ordered blocks; topic
blocks drive extractive summarization, stage blocks are diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RANK_MASK_RADIUS = 5  # 11x11 local rank mask, clipped at the matrix borders


@dataclass(frozen=True)
class Block:
    view: str  # "topic" or "stage"
    label: int
    start: int
    end: int  # exclusive

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty block [{self.start}, {self.end})")


@dataclass
class DialogViews:
    topic_blocks: list[Block]
    stage_blocks: list[Block]

    def __post_init__(self):
        for blocks in (self.topic_blocks, self.stage_blocks):
            if not blocks:
                raise ValueError("a view must contain at least one block")
            if blocks[0].start != 0:
                raise ValueError("view does not start at utterance 0")
            for prev, cur in zip(blocks, blocks[1:]):
                if cur.start != prev.end:
                    raise ValueError("view blocks do not partition the dialog")
        if self.topic_blocks[-1].end != self.stage_blocks[-1].end:
            raise ValueError("views cover different ranges")


def _cosine_matrix(embs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embs, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    unit = embs / safe
    return unit @ unit.T


def _rank_transform(sim: np.ndarray) -> np.ndarray:
    """Each entry becomes the fraction of its local neighbourhood it exceeds."""
    n = sim.shape[0]
    rank = np.zeros_like(sim)
    r = RANK_MASK_RADIUS
    for i in range(n):
        i0, i1 = max(0, i - r), min(n, i + r + 1)
        for j in range(n):
            j0, j1 = max(0, j - r), min(n, j + r + 1)
            window = sim[i0:i1, j0:j1]
            denom = window.size - 1
            if denom <= 0:
                rank[i, j] = 0.0
            else:
                rank[i, j] = np.count_nonzero(window < sim[i, j]) / denom
    return rank


def c99_segment(embs, max_segments: int) -> list[int]:
    """Boundary indices from divisive clustering of the local-rank matrix.

    Splits are inserted greedily to maximize inside-segment rank density;
    the number kept is chosen at the knee of the density-gain curve (largest
    drop between consecutive gains), bounded by ``max_segments``.
    """
    embs = np.asarray(embs, dtype=float)
    if embs.ndim != 2 or embs.shape[0] == 0:
        raise ValueError("c99_segment needs at least one embedding")
    n = embs.shape[0]
    if n == 1 or max_segments <= 1:
        return []

    rank = _rank_transform(_cosine_matrix(embs))
    prefix = np.zeros((n + 1, n + 1))
    prefix[1:, 1:] = rank.cumsum(axis=0).cumsum(axis=1)

    def block_sum(a: int, b: int) -> float:
        return prefix[b, b] - prefix[a, b] - prefix[b, a] + prefix[a, a]

    boundaries: list[int] = []
    total_sum = block_sum(0, n)
    total_area = float(n * n)
    densities = [total_sum / total_area]
    max_splits = min(max_segments - 1, n - 1)
    chosen: list[int] = []
    for _ in range(max_splits):
        best = None
        edges = [0] + sorted(boundaries) + [n]
        for a, b in zip(edges, edges[1:]):
            if b - a < 2:
                continue
            base_sum = block_sum(a, b)
            base_area = float((b - a) ** 2)
            for cut in range(a + 1, b):
                new_sum = total_sum - base_sum + block_sum(a, cut) + block_sum(cut, b)
                new_area = (total_area - base_area
                            + float((cut - a) ** 2) + float((b - cut) ** 2))
                density = new_sum / new_area
                if best is None or density > best[0]:
                    best = (density, cut, new_sum, new_area)
        if best is None:
            break
        density, cut, total_sum, total_area = best
        boundaries.append(cut)
        chosen.append(cut)
        densities.append(density)

    splits_done = len(chosen)
    if splits_done == 0:
        return []
    gains = [densities[m] - densities[m - 1] for m in range(1, splits_done + 1)]
    if splits_done == 1:
        keep = 1
    else:
        drops = [gains[m] - gains[m + 1] for m in range(splits_done - 1)]
        keep = int(np.argmax(drops)) + 1
    return sorted(chosen[:keep])


def topic_blocks_from_boundaries(boundaries: list[int], n: int) -> list[Block]:
    edges = [0] + list(boundaries) + [n]
    return [Block(view="topic", label=i, start=a, end=b)
            for i, (a, b) in enumerate(zip(edges, edges[1:]))]


# ---------------------------------------------------------------------------
# Stage HMM


@dataclass
class StageHmm:
    n_states: int
    initial: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    train_loglik: list[float] = field(default_factory=list)


def _kmeans(data: np.ndarray, k: int, rng: np.random.Generator,
            iters: int = 25) -> np.ndarray:
    """Plain Lloyd iterations with k-means++ style seeding."""
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(0, n)]
    closest = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        weights = closest.sum()
        if weights <= 0:
            centers[i] = data[rng.integers(0, n)]
        else:
            centers[i] = data[rng.choice(n, p=closest / weights)]
        closest = np.minimum(closest, ((data - centers[i]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dists = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        for i in range(k):
            members = data[labels == i]
            if len(members):
                centers[i] = members.mean(axis=0)
            else:
                centers[i] = data[dists[:, i].argmax()]
    return labels


def _log_emissions(hmm_means, hmm_vars, seq: np.ndarray) -> np.ndarray:
    # (T, S): diagonal Gaussian log densities
    diff = seq[:, None, :] - hmm_means[None, :, :]
    return -0.5 * ((diff ** 2 / hmm_vars[None, :, :]).sum(axis=2)
                   + np.log(2.0 * np.pi * hmm_vars).sum(axis=1)[None, :])


def hmm_train(sequences, n_states: int, seed: int = 0, max_iter: int = 200,
              tol: float = 1e-6, var_floor: float = 1e-6) -> StageHmm:
    """Baum-Welch with k-means initialization over a set of sequences."""
    sequences = [np.asarray(s, dtype=float) for s in sequences]
    sequences = [s for s in sequences if len(s)]
    if not sequences:
        raise ValueError("no training sequences")
    data = np.concatenate(sequences, axis=0)
    if data.shape[0] < 10 * n_states:
        raise ValueError(
            f"need at least {10 * n_states} utterances to fit {n_states} states, "
            f"got {data.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    labels = _kmeans(data, n_states, rng)

    dim = data.shape[1]
    means = np.empty((n_states, dim))
    variances = np.empty((n_states, dim))
    global_var = np.maximum(data.var(axis=0), var_floor)
    for i in range(n_states):
        members = data[labels == i]
        if len(members):
            means[i] = members.mean(axis=0)
            variances[i] = np.maximum(members.var(axis=0), var_floor)
        else:
            means[i] = data.mean(axis=0)
            variances[i] = global_var

    initial = np.ones(n_states)
    transition = np.ones((n_states, n_states))
    offset = 0
    for seq in sequences:
        seq_labels = labels[offset:offset + len(seq)]
        offset += len(seq)
        initial[seq_labels[0]] += 1
        for a, b in zip(seq_labels, seq_labels[1:]):
            transition[a, b] += 1
    initial /= initial.sum()
    transition /= transition.sum(axis=1, keepdims=True)

    hmm = StageHmm(n_states=n_states, initial=initial, transition=transition,
                   means=means, variances=variances)
    prev_ll = -np.inf
    for _ in range(max_iter):
        ll = 0.0
        gamma_sum = np.zeros(n_states)
        gamma_first = np.zeros(n_states)
        gamma_x = np.zeros((n_states, dim))
        gamma_x2 = np.zeros((n_states, dim))
        xi_sum = np.zeros((n_states, n_states))
        for seq in sequences:
            log_b = _log_emissions(hmm.means, hmm.variances, seq)
            shift = log_b.max(axis=1)
            b = np.exp(log_b - shift[:, None])
            T = len(seq)
            alpha = np.empty((T, n_states))
            scales = np.empty(T)
            alpha[0] = hmm.initial * b[0]
            scales[0] = alpha[0].sum()
            alpha[0] /= scales[0]
            for t in range(1, T):
                alpha[t] = (alpha[t - 1] @ hmm.transition) * b[t]
                scales[t] = alpha[t].sum()
                alpha[t] /= scales[t]
            ll += float(np.log(scales).sum() + shift.sum())
            beta = np.empty((T, n_states))
            beta[-1] = 1.0
            for t in range(T - 2, -1, -1):
                beta[t] = (hmm.transition @ (b[t + 1] * beta[t + 1])) / scales[t + 1]
            gamma = alpha * beta
            gamma /= gamma.sum(axis=1, keepdims=True)
            gamma_first += gamma[0]
            gamma_sum += gamma.sum(axis=0)
            gamma_x += gamma.T @ seq
            gamma_x2 += gamma.T @ (seq ** 2)
            for t in range(T - 1):
                xi = (alpha[t][:, None] * hmm.transition
                      * (b[t + 1] * beta[t + 1])[None, :]) / scales[t + 1]
                xi_sum += xi
        hmm.train_loglik.append(ll)

        hmm.initial = gamma_first / gamma_first.sum()
        if n_states == 1:
            hmm.transition = np.ones((1, 1))
        else:
            rows = xi_sum.sum(axis=1, keepdims=True)
            hmm.transition = np.where(rows > 0, xi_sum / np.maximum(rows, 1e-300),
                                      1.0 / n_states)
        denom = np.maximum(gamma_sum[:, None], 1e-300)
        hmm.means = gamma_x / denom
        hmm.variances = np.maximum(gamma_x2 / denom - hmm.means ** 2, var_floor)

        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
    return hmm


def viterbi(hmm: StageHmm, seq: np.ndarray) -> list[int]:
    """Most likely state path; ties resolve to the lowest state index."""
    seq = np.asarray(seq, dtype=float)
    log_b = _log_emissions(hmm.means, hmm.variances, seq)
    with np.errstate(divide="ignore"):
        log_pi = np.log(hmm.initial)
        log_a = np.log(hmm.transition)
    T, S = log_b.shape
    delta = log_pi + log_b[0]
    back = np.zeros((T, S), dtype=int)
    for t in range(1, T):
        candidates = delta[:, None] + log_a
        back[t] = candidates.argmax(axis=0)
        delta = candidates.max(axis=0) + log_b[t]
    path = [int(delta.argmax())]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path


def stage_segment(hmm: StageHmm, embs) -> list[Block]:
    """Viterbi labels collapsed into maximal constant-label runs."""
    embs = np.asarray(embs, dtype=float)
    if embs.shape[0] == 0:
        raise ValueError("stage_segment needs at least one embedding")
    labels = viterbi(hmm, embs)
    blocks: list[Block] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            blocks.append(Block(view="stage", label=labels[start], start=start, end=i))
            start = i
    return blocks


def build_views(embs, hmm: StageHmm | None = None,
                max_segments: int | None = None) -> DialogViews:
    """Topic and stage views for one dialog's utterance embeddings."""
    embs = np.asarray(embs, dtype=float)
    n = embs.shape[0]
    if max_segments is None:
        max_segments = math.ceil(n / 3)
    boundaries = c99_segment(embs, max_segments)
    topic = topic_blocks_from_boundaries(boundaries, n)
    if hmm is None:
        stage = [Block(view="stage", label=0, start=0, end=n)]
    else:
        stage = stage_segment(hmm, embs)
    return DialogViews(topic_blocks=topic, stage_blocks=stage)
