"""Backward engines for a linear layer ``y = x @ w.T``.

* exact BP:   ``g_w = g_y.T @ x``, ``g_x = g_y @ w``
* LBP-WHT:    project ``x`` and ``g_y`` onto the selected bases, multiply in the
              r-dimensional space, reverse-project ``g_x`` only
* LoRA:       frozen ``w`` plus a trainable ``x @ w_A @ w_B`` branch
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.errors import ShapeError
from src.tensor_core import as_matrix, frozen, matmul
from src.wht import project, reverse_project

log = logging.getLogger(__name__)

_EPS = 1e-30


@dataclass(frozen=True)
class ExactMode:
    name = "exact"


@dataclass(frozen=True, eq=False)
class LbpWhtMode:
    bases: object  # BaseIndexSet
    plan: object   # WhtPlan
    name = "lbp_wht"

    def __post_init__(self):
        if self.bases.n != self.plan.n:
            raise ShapeError(
                f"base set of order {self.bases.n} does not match plan of order {self.plan.n}"
            )

    @property
    def rank(self):
        return self.bases.rank


@dataclass(eq=False)
class LoraMode:
    """Trainable low-rank branch; ``w_a`` is C_x x rank, ``w_b`` is rank x C_y."""

    rank: int
    w_a: np.ndarray
    w_b: np.ndarray
    name = "lora"


@dataclass(eq=False)
class LinearLayerState:
    w: np.ndarray
    mode: object = ExactMode()
    cached_x: np.ndarray = None

    def __post_init__(self):
        self.w = as_matrix(self.w, "w")
        if isinstance(self.mode, LoraMode):
            c_y, c_x = self.w.shape
            if self.mode.w_a.shape != (c_x, self.mode.rank) or self.mode.w_b.shape != (
                self.mode.rank,
                c_y,
            ):
                raise ShapeError(
                    f"LoRA factors {self.mode.w_a.shape} and {self.mode.w_b.shape} do not "
                    f"fit weight {self.w.shape} at rank {self.mode.rank}"
                )

    @property
    def c_x(self):
        return self.w.shape[1]

    @property
    def c_y(self):
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class Gradients:
    g_x: np.ndarray
    g_w: np.ndarray = None
    g_wa: np.ndarray = None
    g_wb: np.ndarray = None


@dataclass(frozen=True)
class GradientError:
    err_gx: float
    err_gw: float


def _check_g_y(state, g_y):
    if state.cached_x is None:
        raise ShapeError("backward called before forward: no cached input")
    g_y = as_matrix(g_y, "g_y")
    rows = state.cached_x.shape[0]
    if g_y.shape != (rows, state.c_y):
        raise ShapeError(
            f"g_y has shape {g_y.shape}, expected {(rows, state.c_y)} for cached input "
            f"{state.cached_x.shape} and weight {state.w.shape}"
        )
    return g_y


def linear_forward(state, x, cache=True):
    """``y = x @ w.T`` (plus ``x @ w_A @ w_B`` in LoRA mode); caches ``x`` unless told not to."""
    x = as_matrix(x, "x")
    if x.shape[1] != state.c_x:
        raise ShapeError(f"input {x.shape} does not match weight {state.w.shape}")
    y = matmul(x, state.w.T)
    if isinstance(state.mode, LoraMode):
        y = frozen(y + matmul(matmul(x, state.mode.w_a), state.mode.w_b))
    if cache:
        state.cached_x = x
    return y


def exact_backward(state, g_y):
    g_y = _check_g_y(state, g_y)
    return Gradients(g_x=matmul(g_y, state.w), g_w=matmul(g_y.T, state.cached_x))


def lbp_wht_backward(state, g_y):
    """Low-rank backward through the bases of an LBP-WHT mode.

    ``g_w`` needs no reverse projection since ``g_y_hat.T @ x_hat`` is already C_y x C_x.
    """
    mode = state.mode
    if not isinstance(mode, LbpWhtMode):
        raise TypeError(f"layer is in {getattr(mode, 'name', mode)} mode, not lbp_wht")
    g_y = _check_g_y(state, g_y)
    x_hat = project(state.cached_x, mode.bases, mode.plan)
    g_y_hat = project(g_y, mode.bases, mode.plan)
    g_w_hat = matmul(g_y_hat.T, x_hat)
    g_x_hat = matmul(g_y_hat, state.w)
    g_x = reverse_project(g_x_hat, mode.bases, mode.plan)
    log.debug("lbp_wht backward: %d rows -> rank %d", g_y.shape[0], mode.rank)
    return Gradients(g_x=g_x, g_w=g_w_hat)


def lora_backward(state, g_y):
    mode = state.mode
    if not isinstance(mode, LoraMode):
        raise TypeError(f"layer is in {getattr(mode, 'name', mode)} mode, not lora")
    g_y = _check_g_y(state, g_y)
    x = state.cached_x
    u = matmul(g_y, mode.w_b.T)
    g_wa = matmul(x.T, u)
    g_wb = matmul(matmul(x, mode.w_a).T, g_y)
    g_x = frozen(matmul(g_y, state.w) + matmul(u, mode.w_a.T))
    return Gradients(g_x=g_x, g_wa=g_wa, g_wb=g_wb)


def backward(state, g_y):
    """Dispatch on the layer's mode."""
    if isinstance(state.mode, LbpWhtMode):
        return lbp_wht_backward(state, g_y)
    if isinstance(state.mode, LoraMode):
        return lora_backward(state, g_y)
    return exact_backward(state, g_y)


def _relative(exact, approx):
    if exact is None or approx is None:
        return float("nan")
    if exact.shape != approx.shape:
        raise ShapeError(f"cannot compare gradients of shape {exact.shape} and {approx.shape}")
    diff = np.linalg.norm(approx - exact)
    return float(diff / max(np.linalg.norm(exact), _EPS))


def gradient_error(exact, approx):
    """Relative Frobenius errors of ``approx`` against ``exact``; NaN where a gradient is absent."""
    return GradientError(
        err_gx=_relative(exact.g_x, approx.g_x),
        err_gw=_relative(exact.g_w, approx.g_w),
    )
