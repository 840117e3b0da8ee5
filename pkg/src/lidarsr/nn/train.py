"""Mini-batch training of the upscaler with L1 loss and Adam."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from lidarsr.nn.functional import l1_loss
from lidarsr.nn.network import Network, NetworkSpec, init_params
from lidarsr.nn.optim import Adam
from lidarsr.rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    params: dict
    adam: Adam
    epochs_done: int = 0
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: float = 0.0


def init_state(spec: NetworkSpec, seed: int, lr: float = 1e-4, decay: float = 1e-5) -> TrainState:
    return TrainState(init_params(spec, stream(seed, 0)), Adam(lr=lr, decay=decay))


def train(
    spec: NetworkSpec,
    low: np.ndarray,
    high: np.ndarray,
    epochs: int,
    batch: int = 8,
    seed: int = 0,
    lr: float = 1e-4,
    decay: float = 1e-5,
    state: TrainState | None = None,
    callback=None,
) -> TrainState:
    """Train on normalized (N, 1, rows, cols) arrays.

    Passing ``state`` resumes: epoch numbering, the learning-rate schedule and
    the Adam moments all continue. The per-epoch loss is the mean batch L1
    seen during that epoch (dropout active).
    """
    if len(low) == 0:
        raise ValueError("empty dataset")
    if len(low) != len(high):
        raise ValueError(f"{len(low)} inputs but {len(high)} targets")
    spec.output_shape(low[:1].shape)
    if state is None:
        state = init_state(spec, seed, lr, decay)
    net = Network(spec, state.params)
    n = len(low)
    for _ in range(epochs):
        e = state.epochs_done
        lr_e = state.adam.lr_at(e)
        order = stream(seed, 1, e).permutation(n)
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, batch)):
            idx = np.sort(order[start : start + batch])
            x, y = low[idx], high[idx]
            pred = net.forward(x, bn_train=True, dropout=True, rng=stream(seed, 2, e, b), keep_cache=True)
            loss, g = l1_loss(pred, y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {e}, batch {b}")
            grads = net.backward(g)
            state.adam.step(state.params, grads, lr_e)
            total += loss * len(idx)
            count += len(idx)
        state.epochs_done += 1
        state.losses.append(total / count)
        state.lrs.append(lr_e)
        state.seconds += time.perf_counter() - t0
        log.info("epoch %d lr %.3g train L1 %.6f (%.1fs)", e, lr_e, state.losses[-1], time.perf_counter() - t0)
        if callback is not None:
            callback(state)
    return state


def predict(spec: NetworkSpec, params: dict, low: np.ndarray, batch: int = 16) -> np.ndarray:
    """Deterministic inference: running batch-norm statistics, dropout off."""
    net = Network(spec, params)
    outs = [net.forward(low[i : i + batch]) for i in range(0, len(low), batch)]
    return np.concatenate(outs)
