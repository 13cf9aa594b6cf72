"""Deterministic synthetic token-map classification data.

Each class owns a prototype built from low-sequency 2D Walsh patterns, laid out
on the n x n grid and flattened row-major to the first L tokens, so that the
spatial structure lines up with the flattened bases used for projection.  The
DC pattern is shared by every class; classes differ only in the higher
patterns.  ``difficulty`` scales amplitude jitter, a per-sample low-frequency
nuisance and white noise; at 0 every sample equals its class prototype.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.base_selection import lp_l1_select
from src.errors import ConfigError
from src.tensor_core import Rng
from src.wht import make_plan, walsh_matrix

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8
_PATTERN_R_L1 = 4
_NUISANCE = 0.3
_NOISE = 0.3
_JITTER = 0.25


@dataclass(frozen=True, eq=False)
class Dataset:
    """``samples`` is (N, L, C); ``labels`` is (N,) int."""

    samples: np.ndarray
    labels: np.ndarray
    classes: int

    def __len__(self):
        return self.samples.shape[0]

    @property
    def tokens(self):
        return self.samples.shape[1]

    @property
    def channels(self):
        return self.samples.shape[2]

    def rows(self, index):
        """Samples at ``index`` stacked as (len(index) * L, C) rows."""
        picked = self.samples[index]
        return picked.reshape(-1, picked.shape[2])

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.rows(idx), self.labels[idx]


def _patterns(tokens):
    plan = make_plan(tokens)
    w = walsh_matrix(plan.n)
    sel = lp_l1_select(min(_PATTERN_R_L1, plan.n), plan.n)
    pats = np.stack([np.outer(w[i], w[j]).ravel()[:tokens] for i, j in sel.indices])
    decay = np.array([1.0 / (1 + i + j) for i, j in sel.indices])
    return pats.astype(np.float64), decay


def low_frequency_signal(rng, rows, channels, noise=0.1):
    """Random (rows x channels) map in the span of the LP_L1(4) patterns plus relative white noise."""
    pats, decay = _patterns(rows)
    coeffs = rng.normal((len(pats), channels)) * decay[:, None]
    clean = pats.T @ coeffs
    scale = np.sqrt(np.mean(clean ** 2))
    return clean + noise * scale * rng.normal((rows, channels))


def make_synthetic_dataset(spec):
    """Return ``(train, eval)`` with a fixed 80/20 split of a label-balanced sample set."""
    if spec.n_samples < 2 or spec.tokens < 1 or spec.channels < 1 or spec.classes < 2:
        raise ConfigError(
            "dataset needs n_samples >= 2, tokens >= 1, channels >= 1 and classes >= 2"
        )
    if spec.difficulty < 0:
        raise ConfigError("difficulty must be >= 0")
    rng = Rng(spec.seed)
    pats, decay = _patterns(spec.tokens)
    n_pat, c, k, d = len(pats), spec.channels, spec.classes, spec.difficulty

    shared = rng.split(0).normal((1, c))
    coeffs = rng.split(1).normal((k, n_pat, c)) * decay[None, :, None]
    coeffs[:, 0, :] = shared  # DC carries no class information
    protos = np.einsum("pt,kpc->ktc", pats, coeffs)

    labels = np.arange(spec.n_samples) % k
    labels = labels[rng.split(2).permutation(spec.n_samples)]

    amp = 1.0 + d * _JITTER * rng.split(3).uniform((spec.n_samples, 1, 1), -1.0, 1.0)
    nuisance = rng.split(4).normal((spec.n_samples, n_pat, c)) * decay[None, :, None]
    noise = rng.split(5).normal((spec.n_samples, spec.tokens, c))
    samples = (
        amp * protos[labels]
        + d * _NUISANCE * np.einsum("pt,npc->ntc", pats, nuisance)
        + d * _NOISE * noise
    )

    n_train = int(spec.n_samples * TRAIN_FRACTION)
    train = Dataset(samples[:n_train], labels[:n_train], k)
    held_out = Dataset(samples[n_train:], labels[n_train:], k)
    log.info(
        "synthetic dataset: %d train / %d eval, L=%d, C=%d, k=%d, difficulty=%.2f",
        len(train), len(held_out), spec.tokens, c, k, d,
    )
    return train, held_out
