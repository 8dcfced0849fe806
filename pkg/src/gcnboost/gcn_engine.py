"""Two-layer GCN with a masked softmax cross-entropy, hand-written gradients and Adam.

    hidden = ReLU(A H0 W1 + b1)
    logits = A hidden W2 + b2
    probs  = softmax(logits)

``A`` is the normalized adjacency (symmetric).  The output layer emits one
logit per class of the task, so there is no separate classifier head.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

PARAMS = ("W1", "b1", "W2", "b2")


class GcnError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    """Training produced a non-finite gradient or loss."""

    def __init__(self, iteration: int, what: str = "gradient"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class GcnModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}

    def copy(self) -> "GcnModel":
        return GcnModel(*(getattr(self, k).copy() for k in PARAMS))

    @classmethod
    def zeros(cls, d: int, h: int, k: int) -> "GcnModel":
        return cls(np.zeros((d, h)), np.zeros(h), np.zeros((h, k)), np.zeros(k))

    @classmethod
    def glorot(cls, d: int, h: int, k: int, seed: int) -> "GcnModel":
        rng = np.random.default_rng(seed)
        r1 = np.sqrt(6.0 / (d + h))
        r2 = np.sqrt(6.0 / (h + k))
        return cls(
            rng.uniform(-r1, r1, size=(d, h)), np.zeros(h),
            rng.uniform(-r2, r2, size=(h, k)), np.zeros(k),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    max_iterations: int = 2000
    patience: int = 100
    hidden: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class TaskLabels:
    """Targets for one category: class index per artwork node id."""

    category: int
    k: int
    targets: Mapping[int, int]
    train_mask: tuple[int, ...]
    val_mask: tuple[int, ...] = ()

    def __post_init__(self):
        if set(self.train_mask) & set(self.val_mask):
            raise GcnError("train and validation masks overlap")
        for i in (*self.train_mask, *self.val_mask):
            if i not in self.targets:
                raise GcnError(f"masked node {i} has no target")
        for i, t in self.targets.items():
            if not 0 <= t < self.k:
                raise GcnError(f"target {t} of node {i} outside [0, {self.k})")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_at: int = 0
    best_val_loss: float = float("inf")
    best_iteration: int = 0


def _check_dims(model: GcnModel, adj, H0: np.ndarray):
    n = adj.shape[0]
    if adj.shape != (n, n):
        raise GcnError(f"adjacency must be square, got {adj.shape}")
    if H0.shape[0] != n:
        raise GcnError(f"feature rows {H0.shape[0]} != nodes {n}")
    if H0.shape[1] != model.W1.shape[0]:
        raise GcnError(f"feature width {H0.shape[1]} != W1 rows {model.W1.shape[0]}")
    if model.W2.shape[0] != model.W1.shape[1]:
        raise GcnError("W1/W2 hidden sizes disagree")
    if model.b1.shape != (model.W1.shape[1],) or model.b2.shape != (model.W2.shape[1],):
        raise GcnError("bias shapes do not match weights")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class _Cache:
    AX: np.ndarray
    pre1: np.ndarray
    hidden: np.ndarray
    AH: np.ndarray
    logits: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)


def _forward(model: GcnModel, adj, H0: np.ndarray, AX: np.ndarray | None = None) -> _Cache:
    if AX is None:
        AX = adj @ H0
    pre1 = AX @ model.W1 + model.b1
    hidden = np.maximum(pre1, 0.0)
    AH = adj @ hidden
    logits = AH @ model.W2 + model.b2
    return _Cache(AX, pre1, hidden, AH, logits)


def forward(model: GcnModel, adj, H0: np.ndarray):
    """Return ``(hidden, logits, probs)``."""
    _check_dims(model, adj, H0)
    c = _forward(model, adj, H0)
    return c.hidden, c.logits, c.probs


def _mask_arrays(task: TaskLabels, mask: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter(mask, dtype=np.int64)
    tgt = np.array([task.targets[int(i)] for i in idx], dtype=np.int64)
    return idx, tgt


def loss(probs: np.ndarray, task: TaskLabels, mask: Iterable[int]) -> float:
    """Summed negative log-likelihood of the targets over ``mask``."""
    idx, tgt = _mask_arrays(task, mask)
    if len(idx) == 0:
        return 0.0
    if np.any(tgt >= probs.shape[1]):
        raise GcnError("target index >= number of classes")
    return float(-np.sum(np.log(probs[idx, tgt])))


def _loss_from_logits(logits: np.ndarray, idx: np.ndarray, tgt: np.ndarray) -> float:
    if len(idx) == 0:
        return 0.0
    z = logits[idx]
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(np.sum(lse - z[np.arange(len(idx)), tgt]))


def _backward(model: GcnModel, adj, cache: _Cache, idx: np.ndarray, tgt: np.ndarray) -> dict[str, np.ndarray]:
    dlogits = np.zeros_like(cache.logits)
    dlogits[idx] = softmax(cache.logits[idx])
    np.subtract.at(dlogits, (idx, tgt), 1.0)
    gW2 = cache.AH.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    # adj is symmetric, so adj.T @ x == adj @ x
    dhidden = adj @ (dlogits @ model.W2.T)
    dpre1 = dhidden * (cache.pre1 > 0)
    gW1 = cache.AX.T @ dpre1
    gb1 = dpre1.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def backward(model: GcnModel, adj, H0: np.ndarray, task: TaskLabels, mask: Iterable[int]) -> dict[str, np.ndarray]:
    """Exact gradients of ``loss(forward(...), task, mask)`` w.r.t. W1, b1, W2, b2."""
    _check_dims(model, adj, H0)
    idx, tgt = _mask_arrays(task, mask)
    if np.any(tgt >= model.W2.shape[1]):
        raise GcnError("target index >= number of classes")
    return _backward(model, adj, _forward(model, adj, H0), idx, tgt)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: GcnModel) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in model.params().items()},
            {k: np.zeros_like(p) for k, p in model.params().items()},
        )


def adam_step(model: GcnModel, state: AdamState, grads: Mapping[str, np.ndarray], config: TrainConfig) -> tuple[GcnModel, AdamState]:
    """One bias-corrected Adam update.  Returns new model and state; inputs are untouched."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(state.t + 1)
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for k, p in model.params().items():
        g = grads[k]
        new_m[k] = b1 * state.m[k] + (1 - b1) * g
        new_v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = new_m[k] / (1 - b1 ** t)
        v_hat = new_v[k] / (1 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return GcnModel(**new_p), AdamState(new_m, new_v, t)


class Trainer:
    """Full-batch training loop with early stopping on validation loss.

    Exposed as a stepper so the caller can swap the adjacency between steps
    (pseudo-label refresh) while keeping the optimizer state.
    """

    def __init__(self, adj, H0: np.ndarray, task: TaskLabels, config: TrainConfig,
                 model: GcnModel | None = None):
        if not task.train_mask:
            raise GcnError("empty training mask")
        self.config = config
        self.task = task
        self.H0 = H0
        self.model = model or GcnModel.glorot(H0.shape[1], config.hidden, task.k, config.seed)
        _check_dims(self.model, adj, H0)
        self.set_adjacency(adj)
        self.state = AdamState.zeros_like(self.model)
        self.history = TrainHistory()
        self.best = self.model.copy()
        self.stall = 0
        self.done = config.max_iterations <= 0
        self._tr = _mask_arrays(task, task.train_mask)
        self._va = _mask_arrays(task, task.val_mask)

    def set_adjacency(self, adj):
        self.adj = adj
        self.AX = adj @ self.H0

    def step(self) -> bool:
        """Run one iteration; return False once training has stopped."""
        if self.done:
            return False
        it = self.state.t + 1
        cache = _forward(self.model, self.adj, self.H0, self.AX)
        tr_loss = _loss_from_logits(cache.logits, *self._tr)
        va_loss = _loss_from_logits(cache.logits, *self._va)
        if not np.isfinite(tr_loss) or not np.isfinite(va_loss):
            raise NonFiniteError(it, "loss")
        h = self.history
        h.train_loss.append(tr_loss)
        h.val_loss.append(va_loss)
        h.stopped_at = it
        if len(self._va[0]):
            if va_loss < h.best_val_loss:
                h.best_val_loss, h.best_iteration = va_loss, it
                self.best = self.model.copy()
                self.stall = 0
            else:
                self.stall += 1
        grads = _backward(self.model, self.adj, cache, *self._tr)
        self.model, self.state = adam_step(self.model, self.state, grads, self.config)
        if not len(self._va[0]):
            self.best = self.model
        if it >= self.config.max_iterations or self.stall >= self.config.patience:
            self.done = True
        return not self.done

    def result(self) -> tuple[GcnModel, TrainHistory]:
        return self.best.copy(), copy.deepcopy(self.history)


def train(adj, H0: np.ndarray, task: TaskLabels, config: TrainConfig) -> tuple[GcnModel, TrainHistory]:
    """Train one task model; returns the best-validation snapshot and the history.

    Iteration ``i`` records the losses of the parameters before its update.  Stops
    after ``max_iterations`` or when validation loss has not beaten its running best
    for ``patience`` consecutive iterations.  With an empty validation mask early
    stopping is off and the final parameters are returned.
    """
    trainer = Trainer(adj, H0, task, config)
    while trainer.step():
        pass
    return trainer.result()


def predict(model: GcnModel, adj, H0: np.ndarray, nodes: Iterable[int]) -> dict[int, int]:
    """Argmax class per node; ties go to the lowest class index."""
    _, logits, _ = forward(model, adj, H0)
    nodes = list(nodes)
    if not nodes:
        return {}
    # np.argmax returns the first maximum
    cls = np.argmax(logits[nodes], axis=1)
    return {int(n): int(c) for n, c in zip(nodes, cls)}
