"""First-order parameter-update rules.

Plain SGD, SGD with momentum, memory-SGD (gradient accumulator from
:mod:`ritzlab.memory`), the reparameterization that maps a memory
schedule onto momentum hyperparameters, Adam, and the loss-adaptive
gradient descent with step rejection (Adalr).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import CoefficientSchedule, MemoryAccumulator, accumulate_gradient

__all__ = [
    "sgd_step",
    "SgdmState",
    "sgdm_step",
    "MemorySgdState",
    "memory_sgd_step",
    "momentum_reparameterization",
    "AdamState",
    "adam_step",
    "AdalrState",
    "adalr_run",
    "make_optimizer",
]


def _check_finite(g):
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")


def sgd_step(theta: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    _check_finite(g)
    return theta - lr * g


@dataclass
class SgdmState:
    lr: float
    beta: float
    v: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("momentum coefficient must lie in [0, 1)")


def sgdm_step(state: SgdmState, theta: np.ndarray, g: np.ndarray,
              lr: float | None = None, beta: float | None = None) -> np.ndarray:
    """v' = beta*v - g;  theta' = theta + lr*v'.

    ``lr``/``beta`` override the state for schedule-driven runs; the
    override beta is not range-checked because reparameterized schedules
    can step outside [0, 1) while remaining formally valid.
    """
    _check_finite(g)
    if state.v is None:
        state.v = np.zeros_like(theta)
    b = state.beta if beta is None else beta
    state.v = b * state.v - g
    return theta + (state.lr if lr is None else lr) * state.v


@dataclass
class MemorySgdState:
    lr: float
    schedule: CoefficientSchedule
    acc: MemoryAccumulator = None

    def __post_init__(self):
        if self.acc is None:
            self.acc = MemoryAccumulator(self.schedule)


def memory_sgd_step(state: MemorySgdState, theta: np.ndarray, g_raw: np.ndarray) -> np.ndarray:
    """theta' = theta - lr * g_t with g_t the memory-accumulated gradient."""
    g_t = accumulate_gradient(state.acc, g_raw)
    return theta - state.lr * g_t


def momentum_reparameterization(gamma, lr: float, steps: int):
    """Learning-rate and momentum schedules equivalent to memory-SGD.

    ``lr_t = lr_{t-1} * g_t / g_{t-1}`` (lr_0 = lr) and
    ``beta_t = g_{t-1} (1 - g_t) / g_t``, where g is the memory
    coefficient schedule with g_0 = 1.  Driving SGDM with (lr_t, beta_t)
    reproduces the memory-SGD trajectory exactly.
    """
    if callable(gamma):
        gam = np.array([gamma(t) for t in range(steps)])
    else:
        gam = np.asarray(gamma, dtype=float)[:steps]
    if gam[0] != 1.0:
        raise ValueError("schedule must start at 1")
    if np.any(gam <= 0.0):
        raise ValueError("schedule must stay positive")
    lrs = np.empty(steps)
    betas = np.empty(steps)
    lrs[0] = lr
    betas[0] = 0.0
    for t in range(1, steps):
        lrs[t] = lrs[t - 1] * gam[t] / gam[t - 1]
        betas[t] = gam[t - 1] * (1.0 - gam[t]) / gam[t]
    return lrs, betas


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
    _check_finite(g)
    if state.m is None:
        state.m = np.zeros_like(theta)
        state.v = np.zeros_like(theta)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    return theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class AdalrState:
    """Best-so-far tracking for the loss-adaptive gradient descent."""

    theta_best: np.ndarray
    loss_best: float
    lr: float
    rejected_last: bool = False


def adalr_run(loss_and_grad, theta0: np.ndarray, lr0: float, max_iter: int = 1000,
              loss_tol: float = 0.0, decrease: float = 0.5, increase: float = 1.2,
              slow_window: int = 10, slow_rel_improvement: float = 1e-4,
              stall_window: int | None = None, stall_rel: float = 1e-5,
              callback=None):
    """Gradient descent that rejects worsening steps and adapts the rate.

    Each iteration evaluates the loss at the current iterate and takes a
    plain gradient step.  If the evaluated loss exceeds the best seen,
    the iterate is rolled back to the best parameters and the rate is
    halved; otherwise the best is updated, and the rate grows by 1.2x
    when improvement has been slow over the last ``slow_window``
    accepted steps and the previous iteration accepted its step.
    ``stall_window`` optionally stops the run once the best loss has not
    improved relatively by ``stall_rel`` for that many iterations.

    Returns (theta_best, loss_best, losses) where losses records the
    evaluated loss at every iteration.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    lr = float(lr0)
    loss, g = loss_and_grad(theta)
    state = AdalrState(theta.copy(), loss, lr)
    losses = [loss]
    accepted = [loss]
    stall = 0
    if callback is not None:
        callback(0, loss, state)
    theta = theta - lr * g
    for t in range(1, max_iter):
        loss, g = loss_and_grad(theta)
        losses.append(loss)
        proposed = theta - state.lr * g
        if loss > state.loss_best:
            state.lr *= decrease
            state.rejected_last = True
            theta = state.theta_best.copy()
            stall += 1
        elif loss == state.loss_best:
            # exact tie (e.g. re-evaluating the restored best iterate):
            # the best pair stays put and the rate shrinks, but the
            # retry step proceeds so a rejection cannot deadlock
            state.lr *= decrease
            state.rejected_last = True
            theta = proposed
            stall += 1
        else:
            if state.loss_best - loss > stall_rel * max(abs(state.loss_best), 1e-300):
                stall = 0
            else:
                stall += 1
            state.theta_best = theta.copy()
            state.loss_best = loss
            accepted.append(loss)
            slow = (
                len(accepted) > slow_window
                and accepted[-slow_window - 1] - loss
                <= slow_rel_improvement * max(abs(loss), 1e-300)
            )
            if slow and not state.rejected_last:
                state.lr *= increase
            state.rejected_last = False
            theta = proposed
        if callback is not None:
            callback(t, loss, state)
        if state.loss_best <= loss_tol:
            break
        if stall_window is not None and stall >= stall_window:
            break
    return state.theta_best, state.loss_best, np.asarray(losses)


def make_optimizer(tag: str, lr: float, schedule: CoefficientSchedule | None = None,
                   beta: float = 0.9):
    """Stateful stepper ``theta' = step(theta, g)`` for the named rule."""
    if tag == "sgd":
        return lambda theta, g: sgd_step(theta, g, lr)
    if tag == "sgdm":
        state = SgdmState(lr, beta)
        return lambda theta, g: sgdm_step(state, theta, g)
    if tag == "memory-sgd":
        state = MemorySgdState(lr, schedule or CoefficientSchedule())
        return lambda theta, g: memory_sgd_step(state, theta, g)
    if tag == "adam":
        state = AdamState(lr)
        return lambda theta, g: adam_step(state, theta, g)
    raise ValueError(f"unknown optimizer {tag!r}")
