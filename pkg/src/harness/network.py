"""Token-wise MLP classifier assembled from linear layers with pluggable backward modes.

Layout: ``[Linear, activation] * len(hidden)``, mean pooling over tokens, then a
classifier head on the pooled features.  Activations are stored as
concatenated sample rows (B*L x C); pooling reduces them to B x C.
"""

import logging
import os

import numpy as np

from src.base_selection import EnergyProfile, lhe_profile_step, lhe_select, select
from src.errors import ConfigError, ShapeError
from src.flops import flops_exact, flops_lora, flops_table1
from src.lbp import (
    ExactMode, LbpWhtMode, LinearLayerState, LoraMode, backward, linear_forward,
)
from src.tensor_core import frozen, load_tensor, save_tensor
from src.wht import make_plan

log = logging.getLogger(__name__)

_GELU_C = np.sqrt(2.0 / np.pi)


class Linear:
    """A linear layer plus its mode bookkeeping (LHE profiling, FLOPs, trainability)."""

    kind = "linear"

    def __init__(self, name, state, tokens, plan=None, mode_spec=None, trainable=True):
        self.name = name
        self.state = state
        self.tokens = tokens
        self.plan = plan
        self.mode_spec = mode_spec
        self.trainable = trainable
        self.grads = None
        self.profile = None
        if mode_spec is not None and mode_spec.mode == "lbp_wht" and mode_spec.strategy == "lhe":
            self.profile = EnergyProfile(plan.n)

    @property
    def mode_label(self):
        if self.mode_spec is None:
            return "exact"
        label = self.mode_spec.label()
        if isinstance(self.state.mode, LbpWhtMode):
            label += f" (r={self.state.mode.rank})"
        elif self.profile is not None:
            label += " (profiling)"
        return label

    def forward(self, x, cache=True):
        return linear_forward(self.state, x, cache=cache)

    def backward(self, g_y):
        if self.profile is not None:
            lhe_profile_step(self.profile, g_y, self.plan)
        self.grads = backward(self.state, g_y)
        if self.profile is not None and self.profile.steps_seen >= self.mode_spec.profile_steps:
            bases = lhe_select(self.profile, self.mode_spec.param)
            self.state.mode = LbpWhtMode(bases, self.plan)
            self.profile = None
            log.info("%s switched to LBP-WHT with LHE rank %d", self.name, bases.rank)
        return self.grads.g_x

    def backward_flops(self, batch):
        c_y, c_x = self.state.w.shape
        mode = self.state.mode
        if isinstance(mode, LbpWhtMode):
            per_sample = flops_table1(c_x, c_y, self.tokens, mode.rank).total_lbp
        elif isinstance(mode, LoraMode):
            per_sample = flops_lora(c_x, c_y, self.tokens, mode.rank)
        else:
            per_sample = flops_exact(c_x, c_y, self.tokens)
        return per_sample * batch

    def params(self):
        if isinstance(self.state.mode, LoraMode):
            return {"w_a": self.state.mode.w_a, "w_b": self.state.mode.w_b}
        return {"w": self.state.w}

    def grad_for(self, key):
        return {"w": self.grads.g_w, "w_a": self.grads.g_wa, "w_b": self.grads.g_wb}[key]

    def set_param(self, key, value):
        value = frozen(np.asarray(value, dtype=np.float64))
        if key == "w":
            self.state.w = value
        elif key == "w_a":
            self.state.mode.w_a = value
        else:
            self.state.mode.w_b = value


class Relu:
    kind = "relu"

    def __init__(self):
        self._x = None

    def forward(self, x, cache=True):
        if cache:
            self._x = x
        return np.maximum(x, 0.0)

    def backward(self, g):
        return g * (self._x > 0)


class Gelu:
    """Tanh approximation of GELU."""

    kind = "gelu"

    def __init__(self):
        self._x = None

    def forward(self, x, cache=True):
        if cache:
            self._x = x
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))

    def backward(self, g):
        x = self._x
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)


class MeanPool:
    """Average each sample's L token rows into one row."""

    kind = "mean_pool"

    def __init__(self, tokens):
        self.tokens = tokens

    def forward(self, x, cache=True):
        rows, cols = x.shape
        if rows % self.tokens:
            raise ShapeError(f"{rows} rows is not a multiple of {self.tokens} tokens")
        return x.reshape(rows // self.tokens, self.tokens, cols).mean(axis=1)

    def backward(self, g):
        return np.repeat(g / self.tokens, self.tokens, axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean loss, correct-prediction count and d(loss)/d(logits), using log-sum-exp."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    batch = logits.shape[0]
    picked = z[np.arange(batch), labels]
    loss = float(np.mean(lse - picked))
    probs = np.exp(z - lse[:, None])
    probs[np.arange(batch), labels] -= 1.0
    correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    return loss, correct, probs / batch


class Model:
    def __init__(self, layers, classes):
        self.layers = layers
        self.classes = classes

    @property
    def linears(self):
        return [layer for layer in self.layers if isinstance(layer, Linear)]

    def forward(self, x, cache=True):
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, g):
        """Backpropagate through every layer; returns the backward FLOPs of this call."""
        batch = g.shape[0]
        flops = 0
        for layer in reversed(self.layers):
            if isinstance(layer, Linear):
                flops += layer.backward_flops(batch)
            g = layer.backward(g)
        return flops

    def predict(self, x):
        return np.argmax(self.forward(x, cache=False), axis=1)


def _init_weight(rng, c_out, c_in):
    return rng.normal((c_out, c_in), scale=1.0 / np.sqrt(c_in))


def _build_mode(spec, plan, rng, c_in, c_out):
    if spec is None or spec.mode == "exact":
        return ExactMode()
    if spec.mode == "lora":
        w_a = rng.normal((c_in, spec.lora_rank), scale=1.0 / np.sqrt(c_in))
        return LoraMode(rank=spec.lora_rank, w_a=frozen(w_a), w_b=frozen(np.zeros((spec.lora_rank, c_out))))
    if spec.strategy == "lhe":
        return ExactMode()  # profiled first, switched to LBP-WHT later
    return LbpWhtMode(select(spec.strategy, spec.param, plan.n), plan)


def build_model(config, channels, tokens, classes, rng):
    """Assemble the model described by ``config`` for (tokens x channels) inputs."""
    plan = make_plan(tokens)
    act_cls = Gelu if config.model.activation == "gelu" else Relu
    layers = []
    c_in = channels
    for k, width in enumerate(config.model.hidden):
        spec = config.mode_for(k)
        mode = _build_mode(spec, plan, rng.split(1000 + k), c_in, width)
        state = LinearLayerState(w=_init_weight(rng.split(k), width, c_in), mode=mode)
        layers.append(Linear(f"linear{k}", state, tokens, plan=plan, mode_spec=spec))
        layers.append(act_cls())
        c_in = width
    layers.append(MeanPool(tokens))
    head = LinearLayerState(w=_init_weight(rng.split(len(config.model.hidden)), classes, c_in))
    layers.append(Linear("head", head, 1))

    if config.frozen_prefix >= len(layers):
        raise ConfigError(
            f"frozen_prefix {config.frozen_prefix} must be smaller than the layer count {len(layers)}"
        )
    for layer in layers[: config.frozen_prefix]:
        if isinstance(layer, Linear):
            layer.trainable = False
    log.debug("built model: %s", [layer.kind for layer in layers])
    return Model(layers, classes)


def save_weights(model, directory):
    """Write every linear layer's parameters as LBPW tensors."""
    os.makedirs(directory, exist_ok=True)
    for layer in model.linears:
        save_tensor(layer.state.w, os.path.join(directory, f"{layer.name}_w.lbpw"))
        if isinstance(layer.state.mode, LoraMode):
            save_tensor(layer.state.mode.w_a, os.path.join(directory, f"{layer.name}_w_a.lbpw"))
            save_tensor(layer.state.mode.w_b, os.path.join(directory, f"{layer.name}_w_b.lbpw"))


def load_weights(model, directory):
    for layer in model.linears:
        w = load_tensor(os.path.join(directory, f"{layer.name}_w.lbpw"))
        if w.shape != layer.state.w.shape:
            raise ShapeError(f"{layer.name}: stored weight {w.shape} != model {layer.state.w.shape}")
        layer.state.w = w
        if isinstance(layer.state.mode, LoraMode):
            layer.set_param("w_a", load_tensor(os.path.join(directory, f"{layer.name}_w_a.lbpw")))
            layer.set_param("w_b", load_tensor(os.path.join(directory, f"{layer.name}_w_b.lbpw")))
