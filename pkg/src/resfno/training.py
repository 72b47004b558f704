"""Training loop: batched MSE objective, adaptive-moment steps, and
validation-monitored early stopping with best-parameter restoration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import ShapeError, Tensor


@dataclass
class TrainConfig:
    max_epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 100
    min_delta: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.min_delta < 0 or self.batch_size < 1:
            raise ValueError(
                f"invalid training config: patience={self.patience}, "
                f"min_delta={self.min_delta}, batch_size={self.batch_size}")


@dataclass
class TrainState:
    params: M.ModelParams
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    best_val: float = float("inf")
    best_snapshot: dict[str, np.ndarray] | None = None
    epochs_since_improvement: int = 0


def init_state(params: M.ModelParams) -> TrainState:
    state = TrainState(params=params)
    for name, p in params.named_parameters():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data, dtype=np.float64)
    return state


def mse_loss(pred, target) -> Tensor:
    """Batch-mean of the per-sample sum of squared pointwise errors.

    pred/target: [M, N] (or [N] for a single sample).  Sums over time,
    averages over the batch only.
    """
    pred = ad.as_tensor(pred)
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(
            f"mse_loss: prediction shape {pred.shape} != target "
            f"{target.shape}")
    m = pred.shape[0] if pred.data.ndim == 2 else 1
    diff = ad.sub(pred, target)
    return ad.scale(ad.reduce_sum(ad.mul(diff, diff)), 1.0 / m)


def adam_step(state: TrainState, grads: ad.Gradients,
              cfg: TrainConfig) -> TrainState:
    """Bias-corrected adaptive-moment update, in place on state.params."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in state.params.named_parameters():
        if name not in grads:
            raise KeyError(f"adam_step: missing gradient for {name!r}")
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * np.abs(g) ** 2
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data[...] = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat)
                                                            + cfg.epsilon)
    return state


def early_stop_update(state: TrainState, val_loss: float,
                      cfg: TrainConfig) -> tuple[str, TrainState]:
    """Returns ("continue" | "stop", state).

    Improvement means best - val_loss > min_delta.  On stop the best
    snapshot is restored into state.params.
    """
    if not np.isfinite(val_loss):
        raise FloatingPointError(
            f"validation loss is not finite ({val_loss}); training aborted")
    if state.best_val - val_loss > cfg.min_delta:
        state.best_val = float(val_loss)
        state.best_snapshot = state.params.snapshot()
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= cfg.patience:
        if state.best_snapshot is not None:
            state.params.load_snapshot(state.best_snapshot)
        return "stop", state
    return "continue", state


def _forward_loss(params: M.ModelParams, seq, scalars, target) -> Tensor:
    pred = M.forward(params, seq, scalars)
    return mse_loss(pred, target)


def evaluate_loss(params: M.ModelParams, seq, scalars, target,
                  chunk: int = 256) -> float:
    """Objective over a full set, treating the whole set as one batch."""
    total = 0.0
    n = len(seq)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pred = M.forward(params, seq[lo:hi], scalars[lo:hi])
        d = pred.data - target[lo:hi]
        total += float((d * d).sum())
    return total / n


def train(params: M.ModelParams, train_data, val_data,
          cfg: TrainConfig) -> tuple[M.ModelParams, list[dict]]:
    """Minimize the objective with shuffled mini-batches and early stopping.

    train_data/val_data: (seq [S, C, N], scalars [S, 3], target [S, N]).
    Returns the best parameters (restored in place) and the per-epoch
    history [{"epoch", "train_loss", "val_loss"}, ...].
    """
    seq_tr, scal_tr, tgt_tr = (np.asarray(a) for a in train_data)
    seq_va, scal_va, tgt_va = (np.asarray(a) for a in val_data)
    if len(seq_tr) == 0 or len(seq_va) == 0:
        raise ValueError("train: both sets must be nonempty")
    if seq_tr.shape[-1] != seq_va.shape[-1]:
        raise ShapeError(
            f"train: sequence lengths differ, {seq_tr.shape[-1]} vs "
            f"{seq_va.shape[-1]}")

    state = init_state(params)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(seq_tr))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            with ad.Tape() as tape:
                loss = _forward_loss(params, seq_tr[idx], scal_tr[idx],
                                     tgt_tr[idx])
            grads = ad.backward(tape, loss)
            adam_step(state, grads, cfg)
            epoch_loss += float(loss.data)
            n_batches += 1
        val_loss = evaluate_loss(params, seq_va, scal_va, tgt_va)
        history.append({"epoch": epoch,
                        "train_loss": epoch_loss / max(n_batches, 1),
                        "val_loss": val_loss})
        decision, state = early_stop_update(state, val_loss, cfg)
        if decision == "stop":
            break
    else:
        # budget exhausted: keep the best parameters seen, as on early stop
        if state.best_snapshot is not None:
            params.load_snapshot(state.best_snapshot)
    return params, history
