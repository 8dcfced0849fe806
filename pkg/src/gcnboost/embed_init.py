"""Initial node features: node2vec walks + skip-gram, visual projection, random test rows."""
from __future__ import annotations

from dataclasses import dataclass


import numpy as np
import scipy.sparse as sp

from gcnboost.graph_core import ArtworkNode, NodeKey, _GraphView

SCHEMES = ("n2v_plus_random", "visual_plus_n2v")
PROJECTIONS = ("seeded_random_projection", "truncate")
HUB_CAP = 32


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class WalkParams:
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 40
    walks_per_node: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise EmbeddingError("p and q must be positive")
        if self.walk_length < 2:
            raise EmbeddingError("walk_length must be >= 2")
        if self.walks_per_node < 1:
            raise EmbeddingError("walks_per_node must be >= 1")


@dataclass(frozen=True)
class SkipGramParams:
    dim: int = 128
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0:
            raise EmbeddingError(f"dim must be positive, got {self.dim}")
        if self.window < 1 or self.negatives_per_positive < 1:
            raise EmbeddingError("window and negatives_per_positive must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise EmbeddingError("invalid skip-gram learning_rate/batch_size/epochs")


@dataclass(frozen=True)
class WalkCorpus:
    walks: list[np.ndarray]
    keys: tuple[NodeKey, ...]

    def __len__(self):
        return len(self.walks)


@dataclass(frozen=True)
class EmbeddingTable:
    """Vectors keyed by stable node key; ``losses`` holds the skip-gram objective
    at initialization and after every epoch (empty for non-trained tables)."""

    keys: tuple[NodeKey, ...]
    vectors: np.ndarray
    losses: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.keys) != len(self.vectors):
            raise EmbeddingError("keys and vectors differ in length")
        if not np.all(np.isfinite(self.vectors)):
            raise EmbeddingError("embedding table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[NodeKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    def __getitem__(self, key: NodeKey) -> np.ndarray:
        return self.vectors[self.index()[key]]

    def __contains__(self, key) -> bool:
        return key in self.index()


def transition_distribution(graph: _GraphView, prev: int, cur: int, p: float, q: float) -> dict[int, float]:
    """Analytic second-order next-node distribution after moving prev -> cur."""
    adj = graph.adjacency
    nbrs = adj.indices[adj.indptr[cur]:adj.indptr[cur + 1]]
    prev_nbrs = set(adj.indices[adj.indptr[prev]:adj.indptr[prev + 1]].tolist())
    weights = {}
    for x in nbrs.tolist():
        if x == prev:
            weights[x] = 1.0 / p
        elif x in prev_nbrs:
            weights[x] = 1.0
        else:
            weights[x] = 1.0 / q
    total = sum(weights.values())
    return {x: w / total for x, w in weights.items()}


def node2vec_walks(graph: _GraphView, params: WalkParams) -> WalkCorpus:
    """Biased second-order random walks, ``walks_per_node`` rounds over all nodes.

    All walks of a round advance together; each biased step draws a uniform
    neighbor and accepts it with probability weight / max weight, which samples
    exactly from the (1/p, 1, 1/q) distribution.
    """
    n = graph.num_nodes
    if n == 0:
        raise EmbeddingError("cannot walk an empty graph")
    adj = graph.adjacency
    indptr, indices = adj.indptr, adj.indices.astype(np.int64)
    deg = np.diff(indptr)
    # sorted directed edge codes for O(log m) adjacency lookups
    codes = np.repeat(np.arange(n, dtype=np.int64), deg) * n + indices
    w_ret, w_in, w_out = 1.0 / params.p, 1.0, 1.0 / params.q
    w_max = max(w_ret, w_in, w_out)
    rng = np.random.default_rng(params.seed)
    L = params.walk_length

    walks: list[np.ndarray] = []
    for _ in range(params.walks_per_node):
        order = rng.permutation(n)
        moving = order[deg[order] > 0]
        m = np.zeros((len(moving), L), dtype=np.int64)
        m[:, 0] = moving
        if len(moving):
            cur = moving
            m[:, 1] = indices[indptr[cur] + (rng.random(len(cur)) * deg[cur]).astype(np.int64)]
            for t in range(2, L):
                prev, cur = m[:, t - 2], m[:, t - 1]
                nxt = np.empty(len(cur), dtype=np.int64)
                pending = np.arange(len(cur))
                while len(pending):
                    c, pr = cur[pending], prev[pending]
                    x = indices[indptr[c] + (rng.random(len(c)) * deg[c]).astype(np.int64)]
                    look = pr * n + x
                    pos = np.minimum(np.searchsorted(codes, look), len(codes) - 1)
                    linked = codes[pos] == look
                    w = np.where(x == pr, w_ret, np.where(linked, w_in, w_out))
                    ok = rng.random(len(c)) * w_max < w
                    nxt[pending[ok]] = x[ok]
                    pending = pending[~ok]
                m[:, t] = nxt
        rows = iter(m)
        for node in order:
            walks.append(next(rows) if deg[node] > 0 else np.array([node], dtype=np.int64))
    return WalkCorpus(walks, tuple(graph.keys))


def _pairs(corpus: WalkCorpus, window: int, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) pairs within ``window``; with ``rng`` each center draws
    its own reduced window uniformly from 1..window, as word2vec does."""
    centers, contexts = [], []
    by_len: dict[int, list[np.ndarray]] = {}
    for w in corpus.walks:
        by_len.setdefault(len(w), []).append(w)
    for length in sorted(by_len):
        if length < 2:
            continue
        block = np.stack(by_len[length])
        reach = (
            rng.integers(1, window + 1, size=block.shape)
            if rng is not None
            else np.full(block.shape, window)
        )
        for off in range(1, min(window, length - 1) + 1):
            left, right = block[:, :-off], block[:, off:]
            fwd = reach[:, :-off] >= off
            bwd = reach[:, off:] >= off
            centers += [left[fwd], right[bwd]]
            contexts += [right[fwd], left[bwd]]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _objective(U, V, c, o, neg) -> float:
    pos = np.einsum("ij,ij->i", U[c], V[o])
    negs = np.einsum("ij,ikj->ik", U[c], V[neg])
    return float(np.mean(-_log_sigmoid(pos) - _log_sigmoid(-negs).sum(axis=1)))


def train_skipgram(corpus: WalkCorpus, params: SkipGramParams) -> EmbeddingTable:
    """Skip-gram with negative sampling over the walk corpus.

    Pairs are processed in shuffled mini-batches whose per-pair SGD updates are
    summed per row (capped for hub rows).  The learning rate decays linearly as
    in word2vec.
    The objective is measured on a fixed seeded sample of pairs and negatives.
    """
    if not corpus.walks:
        raise EmbeddingError("empty walk corpus")
    tokens = np.concatenate(corpus.walks)
    vocab = np.unique(tokens)
    local = np.full(len(corpus.keys), -1, dtype=np.int64)
    local[vocab] = np.arange(len(vocab))

    rng = np.random.default_rng(params.seed)
    d, K = params.dim, params.negatives_per_positive
    nv = len(vocab)
    U = rng.uniform(-0.5 / d, 0.5 / d, size=(len(vocab), d)).astype(np.float32)
    V = np.zeros((len(vocab), d), dtype=np.float32)

    freq = np.bincount(local[tokens], minlength=nv).astype(np.float64) ** 0.75
    cdf = np.cumsum(freq / freq.sum())
    cdf[-1] = 1.0

    def negatives(size):
        return np.searchsorted(cdf, rng.random(size), side="right")

    losses = []
    c_ev, o_ev = _pairs(corpus, params.window)
    if len(c_ev):
        ev = rng.choice(len(c_ev), size=min(len(c_ev), 20000), replace=False)
        ev_c, ev_o, ev_n = local[c_ev[ev]], local[o_ev[ev]], negatives((len(ev), K))
        losses.append(_objective(U, V, ev_c, ev_o, ev_n))
    else:
        return EmbeddingTable(tuple(corpus.keys[i] for i in vocab), U.astype(np.float64))

    # expected pair count per epoch under the dynamic window, for the lr schedule
    total = max(1, params.epochs * len(c_ev) * (params.window + 1) // (2 * params.window))
    seen = 0
    B = params.batch_size
    for _ in range(params.epochs):
        c_all, o_all = _pairs(corpus, params.window, rng)
        c_all, o_all = local[c_all], local[o_all]
        perm = rng.permutation(len(c_all))
        for start in range(0, len(perm), B):
            idx = perm[start:start + B]
            c, o = c_all[idx], o_all[idx]
            neg = negatives((len(idx), K))
            lr = np.float32(params.learning_rate * max(1e-4, 1.0 - seen / total))
            seen += len(idx)
            u, v, vn = U[c], V[o], V[neg]
            g_pos = lr * (1.0 - _sigmoid(np.einsum("ij,ij->i", u, v)))
            g_neg = -lr * _sigmoid(np.matmul(vn, u[:, :, None])[:, :, 0])
            du = g_pos[:, None] * v + np.matmul(g_neg[:, None, :], vn)[:, 0, :]
            b = len(idx)
            # scatter-add through sparse products; np.add.at is far slower
            cols = np.arange(b)
            to_v = sp.csr_matrix(
                (np.concatenate([g_pos, g_neg.ravel()]),
                 (np.concatenate([o, neg.ravel()]), np.concatenate([cols, np.repeat(cols, K)]))),
                shape=(nv, b),
            )
            to_u = sp.csr_matrix((np.ones(b, dtype=np.float32), (c, cols)), shape=(nv, b))
            # a row hit more than HUB_CAP times in one batch gets its summed update
            # scaled down to HUB_CAP times the mean, which keeps hubs from diverging
            hits_v = np.maximum(np.diff(to_v.indptr) / HUB_CAP, 1).astype(np.float32)
            hits_u = np.maximum(np.diff(to_u.indptr) / HUB_CAP, 1).astype(np.float32)
            V += (to_v @ u) / hits_v[:, None]
            U += (to_u @ du) / hits_u[:, None]
        losses.append(_objective(U, V, ev_c, ev_o, ev_n))

    keys = tuple(corpus.keys[i] for i in vocab)
    return EmbeddingTable(keys, U.astype(np.float64), tuple(losses))


def _sigmoid(x):
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype)


def projection_matrix(width: int, target_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((width, target_dim)) / np.sqrt(target_dim)


def project_features(raw: EmbeddingTable, target_dim: int, method: str = "seeded_random_projection", seed: int = 0) -> EmbeddingTable:
    """Bring raw feature vectors to ``target_dim`` columns."""
    if method not in PROJECTIONS:
        raise EmbeddingError(f"unknown projection method {method!r}")
    width = raw.vectors.shape[1]
    if method == "truncate":
        if width < target_dim:
            raise EmbeddingError(f"cannot truncate width {width} to {target_dim}")
        return EmbeddingTable(raw.keys, raw.vectors[:, :target_dim].copy())
    return EmbeddingTable(raw.keys, raw.vectors @ projection_matrix(width, target_dim, seed))


def assemble_initial_features(
    graph: _GraphView,
    scheme: str,
    embeddings: EmbeddingTable,
    dim: int,
    seed: int = 0,
    raw_features: np.ndarray | None = None,
    projection: str = "seeded_random_projection",
) -> np.ndarray:
    """Stack the |V'| x dim initial feature matrix, row i for node i.

    ``n2v_plus_random``: train/validation artworks and labels come from
    ``embeddings``; test artworks are uniform on [-0.5/dim, 0.5/dim].
    ``visual_plus_n2v``: every artwork row is its projected ``raw_features[feature_ref]``.
    """
    if scheme not in SCHEMES:
        raise EmbeddingError(f"unknown init scheme {scheme!r}")
    if embeddings.dim != dim:
        raise EmbeddingError(f"embedding dim {embeddings.dim} != feature dim {dim}")
    emb_index = embeddings.index()
    out = np.zeros((graph.num_nodes, dim))

    test_rows = [i for i, n in enumerate(graph.nodes) if isinstance(n, ArtworkNode) and n.split == "test"]
    if scheme == "n2v_plus_random":
        rng = np.random.default_rng(seed)
        out[test_rows] = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(test_rows), dim))
        skip = set(test_rows)
        from_n2v = [i for i in range(graph.num_nodes) if i not in skip]
    else:
        if raw_features is None:
            raise EmbeddingError("visual_plus_n2v needs raw features")
        arts = graph.artwork_ids()
        refs = []
        for i in arts:
            ref = graph.nodes[i].feature_ref
            if ref is None or not 0 <= ref < len(raw_features):
                raise EmbeddingError(f"artwork {graph.nodes[i].name!r} has no usable feature_ref")
            refs.append(ref)
        raw = EmbeddingTable(tuple(range(len(raw_features))), np.asarray(raw_features, dtype=np.float64))
        proj = project_features(raw, dim, projection, seed).vectors
        out[arts] = proj[refs]
        from_n2v = [i for i in range(graph.num_nodes) if not isinstance(graph.nodes[i], ArtworkNode)]

    keys = graph.keys
    for i in from_n2v:
        j = emb_index.get(keys[i])
        if j is None:
            raise EmbeddingError(f"no embedding for node {keys[i]!r}")
        out[i] = embeddings.vectors[j]
    return out
