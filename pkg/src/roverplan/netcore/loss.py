"""Cross-entropy on probabilities plus an L2 parameter penalty."""

from __future__ import annotations

import logging

import numpy as np

from .ops import add, scale
from .params import ParamStore
from .tensor import Tensor, make_result

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

_clamp_events = 0


def clamp_event_count() -> int:
    """How many probability values have been floored since reset."""
    return _clamp_events


def reset_clamp_events():
    global _clamp_events
    _clamp_events = 0


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log probability of the labeled class.

    probs rows are expected to sum to 1 (softmax output). Probabilities
    below PROB_FLOOR are floored and counted; the gradient uses the
    floored value, so a saturated-wrong sample still pulls back toward
    its label instead of going silent.
    """
    y = np.asarray(labels, dtype=np.int64)
    if probs.data.ndim != 2 or y.ndim != 1 or len(y) != probs.data.shape[0]:
        raise ValueError(
            f"probs {probs.data.shape} and labels {y.shape} do not align"
        )
    n = len(y)
    picked = probs.data[np.arange(n), y]
    clamped = picked < PROB_FLOOR
    n_clamped = int(clamped.sum())
    if n_clamped:
        global _clamp_events
        _clamp_events += n_clamped
        log.warning("cross_entropy clamped %d probabilities below %g",
                    n_clamped, PROB_FLOOR)
    safe = np.maximum(picked, PROB_FLOOR)
    out = np.asarray(-np.log(safe).mean(), dtype=probs.data.dtype)

    def bwd(g):
        dp = np.zeros_like(probs.data)
        dp[np.arange(n), y] = (-1.0 / (n * safe)) * g
        probs.accumulate(dp)

    return make_result(out, (probs,), bwd)


def l2_penalty(params: ParamStore, mode: str = "squared") -> Tensor:
    """Fused L2 term over every parameter tensor.

    mode 'squared' is the sum of squared values (standard weight decay);
    mode 'norm' is the euclidean norm of the stacked parameter vector,
    whose gradient is taken as 0 at the origin.
    """
    if mode not in ("squared", "norm"):
        raise ValueError(f"l2_mode must be 'squared' or 'norm', got {mode!r}")
    tensors = params.tensors()
    ssq = 0.0
    for t in tensors:
        ssq += float(np.sum(np.asarray(t.data, dtype=np.float64) ** 2))
    if mode == "squared":
        value = ssq

        def bwd(g):
            for t in tensors:
                if t.requires_grad:
                    t.accumulate((2.0 * g) * t.data)

    else:
        norm = float(np.sqrt(ssq))
        value = norm

        def bwd(g):
            if norm == 0.0:
                return
            for t in tensors:
                if t.requires_grad:
                    t.accumulate(g * t.data / norm)

    dtype = tensors[0].data.dtype if tensors else np.float32
    return make_result(np.asarray(value, dtype=dtype), tuple(tensors), bwd)


def xent_l2_loss(probs: Tensor, labels, params: ParamStore, lam: float,
                 l2_mode: str = "squared") -> Tensor:
    """Training objective: cross-entropy plus lam times the L2 term."""
    ce = cross_entropy(probs, labels)
    if lam == 0.0:
        return ce
    return add(ce, scale(l2_penalty(params, l2_mode), lam))


def loss_value(probs: np.ndarray, labels, params: ParamStore | None = None,
               lam: float = 0.0, l2_mode: str = "squared") -> float:
    """The objective recomputed in 64-bit, for logging.

    A float32 batch mean wobbles in its last ulps depending on how an epoch
    happens to be grouped, which would make logged losses shuffle-dependent
    even when nothing trains. Gradients still come from the recorded
    float32 graph, never from this value.
    """
    y = np.asarray(labels, dtype=np.int64)
    picked = np.asarray(probs, dtype=np.float64)[np.arange(len(y)), y]
    val = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    if params is not None and lam:
        ssq = 0.0
        for t in params.tensors():
            ssq += float(np.sum(np.asarray(t.data, dtype=np.float64) ** 2))
        val += lam * (ssq if l2_mode == "squared" else float(np.sqrt(ssq)))
    return val
