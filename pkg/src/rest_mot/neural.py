"""Dense perceptron blocks, focal loss and Adam with linear warm-up.

Everything here runs in float64. Gradients are written by hand; each
:class:`Perceptron` returns a cache from ``forward`` that ``backward`` consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NODE_FEATURE_ENCODER = "node_feature_encoder"
EDGE_FEATURE_ENCODER = "edge_feature_encoder"
NODE_MESSAGE_ENCODER = "node_message_encoder"
EDGE_MESSAGE_ENCODER = "edge_message_encoder"
CLASSIFIER = "classifier"
PERCEPTRON_NAMES = (
    NODE_FEATURE_ENCODER,
    EDGE_FEATURE_ENCODER,
    NODE_MESSAGE_ENCODER,
    EDGE_MESSAGE_ENCODER,
    CLASSIFIER,
)

NODE_DIM = 32
EDGE_DIM = 6

# layer widths per perceptron; the last layer of the classifier is sigmoid, all others relu
LAYER_WIDTHS = {
    "spatial": {
        NODE_FEATURE_ENCODER: (512, 128, NODE_DIM),
        EDGE_FEATURE_ENCODER: (4, 8, EDGE_DIM),
        NODE_MESSAGE_ENCODER: (NODE_DIM + EDGE_DIM, 64, NODE_DIM),
        EDGE_MESSAGE_ENCODER: (2 * NODE_DIM + EDGE_DIM, 32, EDGE_DIM),
        CLASSIFIER: (EDGE_DIM, 4, 1),
    },
    "temporal": {
        NODE_FEATURE_ENCODER: (514, 128, NODE_DIM),
        EDGE_FEATURE_ENCODER: (6, 8, EDGE_DIM),
        NODE_MESSAGE_ENCODER: (NODE_DIM + EDGE_DIM, 64, NODE_DIM),
        EDGE_MESSAGE_ENCODER: (2 * NODE_DIM + EDGE_DIM, 32, EDGE_DIM),
        CLASSIFIER: (EDGE_DIM, 4, 1),
    },
}


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"inconsistent layer shapes {self.weight.shape} / {self.bias.shape}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


class Perceptron:
    """A stack of dense layers applied row-wise to an ``(n, in_dim)`` batch."""

    def __init__(self, name: str, layers: list[DenseLayer]) -> None:
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"{name}: layer widths {a.out_dim} -> {b.in_dim} do not chain")
        self.name = name
        self.layers = layers

    def __repr__(self) -> str:
        dims = [self.layers[0].in_dim] + [l.out_dim for l in self.layers]
        return f"Perceptron({self.name}, {'->'.join(map(str, dims))})"

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}: expected input width {self.in_dim}, got {x.shape[1]}")
        cache = []
        for layer in self.layers:
            z = x @ layer.weight.T + layer.bias
            if layer.activation == "relu":
                out = np.maximum(z, 0.0)
            elif layer.activation == "sigmoid":
                out = sigmoid(z)
            else:
                out = z
            cache.append((x, z, out))
            x = out
        return (x[0] if squeeze else x), cache

    def backward(self, cache: list, dout: np.ndarray, grads: list, from_logits: bool = False) -> np.ndarray:
        """Accumulate parameter gradients into ``grads`` and return d(loss)/d(input).

        With ``from_logits`` the incoming gradient is taken w.r.t. the last
        layer's pre-activation, skipping its activation derivative.
        """
        if not cache:
            raise RuntimeError(f"{self.name}: backward called without a forward cache")
        d = np.asarray(dout, dtype=np.float64)
        if d.ndim == 1:
            d = d[None, :]
        for k, (layer, (x, z, out), g) in enumerate(zip(reversed(self.layers), reversed(cache), reversed(grads))):
            skip_act = k == 0 and from_logits
            if layer.activation == "relu" and not skip_act:
                d = d * (z > 0)
            elif layer.activation == "sigmoid" and not skip_act:
                d = d * out * (1.0 - out)
            g[0] += d.T @ x
            g[1] += d.sum(axis=0)
            d = d @ layer.weight
        return d

    def zero_grads(self) -> list:
        return [[np.zeros_like(l.weight), np.zeros_like(l.bias)] for l in self.layers]


class GradBuffer(dict):
    """Per-perceptron gradient lists whose arrays are views into ``flat``."""

    def __init__(self, flat: np.ndarray) -> None:
        super().__init__()
        self.flat = flat


class GraphModel:
    """The five perceptrons of one graph flavor."""

    def __init__(self, flavor: str, perceptrons: dict[str, Perceptron]) -> None:
        if flavor not in LAYER_WIDTHS:
            raise ValueError(f"unknown flavor {flavor!r}")
        missing = set(PERCEPTRON_NAMES) - set(perceptrons)
        if missing:
            raise ValueError(f"missing perceptrons: {sorted(missing)}")
        self.flavor = flavor
        self.perceptrons = perceptrons
        # every weight and bias becomes a view into one contiguous buffer
        self.flat = np.concatenate([p.reshape(-1) for p in self._arrays()]) if perceptrons else np.zeros(0)
        self._bind()

    def _arrays(self) -> list[np.ndarray]:
        out = []
        for name in PERCEPTRON_NAMES:
            for layer in self.perceptrons[name].layers:
                out.extend((layer.weight, layer.bias))
        return out

    def _bind(self) -> None:
        off = 0
        for name in PERCEPTRON_NAMES:
            for layer in self.perceptrons[name].layers:
                n = layer.weight.size
                layer.weight = self.flat[off:off + n].reshape(layer.weight.shape)
                off += n
                layer.bias = self.flat[off:off + layer.bias.size]
                off += layer.bias.size

    def __getitem__(self, name: str) -> Perceptron:
        return self.perceptrons[name]

    def __repr__(self) -> str:
        return f"GraphModel({self.flavor}, params={self.parameter_count()})"

    def parameter_counts(self) -> dict[str, int]:
        return {name: self.perceptrons[name].n_params for name in PERCEPTRON_NAMES}

    def parameter_count(self) -> int:
        return sum(self.parameter_counts().values())

    def parameters(self) -> list[np.ndarray]:
        """Weight and bias arrays in perceptron order (views into ``flat``)."""
        return self._arrays()

    def zero_grads(self) -> "GradBuffer":
        """Zeroed gradients shaped per perceptron, backed by one flat array ``.flat``."""
        buf = GradBuffer(np.zeros_like(self.flat))
        off = 0
        for name in PERCEPTRON_NAMES:
            per = []
            for layer in self.perceptrons[name].layers:
                n, nb = layer.weight.size, layer.bias.size
                per.append([buf.flat[off:off + n].reshape(layer.weight.shape), buf.flat[off + n:off + n + nb]])
                off += n + nb
            buf[name] = per
        return buf

    @staticmethod
    def flatten_grads(grads: dict[str, list]) -> list[np.ndarray]:
        out = []
        for name in PERCEPTRON_NAMES:
            for gw, gb in grads[name]:
                out.extend((gw, gb))
        return out

    def copy(self) -> "GraphModel":
        return GraphModel(self.flavor, {
            name: Perceptron(name, [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in p.layers])
            for name, p in self.perceptrons.items()
        })

    def load_parameters(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} arrays, got {len(arrays)}")
        for dst, src in zip(params, arrays):
            dst[...] = src


def analytic_parameter_count(widths: tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in zip(widths, widths[1:]))


INIT_SCHEMES = {
    # bound = sqrt(gain / fan_in)
    "he": 6.0,
    "linear-default": 1.0,
}


def init_model(flavor: str, seed: int | np.random.Generator = 0, scheme: str = "linear-default") -> GraphModel:
    """Uniform(+-sqrt(g / fan_in)) weights and zero biases; g = 6 for "he", 1 for "linear-default".

    The default keeps sum-aggregated activations from growing by roughly the
    node degree at every message-passing round, which stalls training with "he".
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    gain = INIT_SCHEMES[scheme]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perceptrons = {}
    for name in PERCEPTRON_NAMES:
        widths = LAYER_WIDTHS[flavor][name]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            last = i == len(widths) - 2
            act = "sigmoid" if (name == CLASSIFIER and last) else "relu"
            bound = np.sqrt(gain / fan_in)
            layers.append(
                DenseLayer(rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out), act)
            )
        perceptrons[name] = Perceptron(name, layers)
    return GraphModel(flavor, perceptrons)


# ---------------------------------------------------------------------------
# focal loss

CLAMP = 1e-7


def focal_loss(y_hat, y, gamma: float = 2.0, alpha: float | None = 0.25):
    """Focal loss and its derivative w.r.t. ``y_hat``.

    ``alpha=None`` gives the unweighted variant. ``y_hat`` is clamped to
    ``[1e-7, 1 - 1e-7]``; the returned derivative is that of the clamped
    function, so it is zero where clamping is active.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y)
    a_pos = 1.0 if alpha is None else alpha
    a_neg = 1.0 if alpha is None else 1.0 - alpha
    p = np.clip(y_hat, CLAMP, 1.0 - CLAMP)
    q = 1.0 - p
    pos = y == 1
    loss = np.where(pos, -a_pos * q**gamma * np.log(p), -a_neg * p**gamma * np.log(q))
    d_pos = a_pos * (gamma * q ** (gamma - 1) * np.log(p) - q**gamma / p) if gamma else -a_pos / p
    d_neg = -a_neg * (gamma * p ** (gamma - 1) * np.log(q) - p**gamma / q) if gamma else a_neg / q
    grad = np.where(pos, d_pos, d_neg)
    grad = np.where((y_hat < CLAMP) | (y_hat > 1.0 - CLAMP), 0.0, grad)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def _log_sigmoid(u: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -u)


def focal_loss_logits(z, y, gamma: float = 2.0, alpha: float | None = 0.25):
    """Focal loss evaluated from the classifier logit, with d(loss)/d(logit).

    Equal to ``focal_loss(sigmoid(z), y)`` wherever no clamping occurs, but
    stable for saturated logits. Used on the training path.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    a_pos = 1.0 if alpha is None else alpha
    a_neg = 1.0 if alpha is None else 1.0 - alpha
    sign = np.where(y == 1, 1.0, -1.0)
    a = np.where(y == 1, a_pos, a_neg)
    u = sign * z  # positive class probability of the true label is sigmoid(u)
    s = sigmoid(u)
    logs = _log_sigmoid(u)
    m = sigmoid(-u)  # 1 - s without cancellation
    mg = m**gamma
    loss = -a * mg * logs
    d_u = a * mg * (gamma * s * logs - m)
    return loss, sign * d_u


# ---------------------------------------------------------------------------
# Adam


def warmup_lr(epoch: int, base_lr: float = 0.01, warmup_epochs: int = 10) -> float:
    """Linear ramp from 0 reaching ``base_lr`` at ``warmup_epochs`` (epochs count from 1)."""
    if warmup_epochs <= 0:
        return base_lr
    return base_lr * min(1.0, epoch / warmup_epochs)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 0.01
    warmup_epochs: int = 10

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], epoch: int) -> float:
    """Update ``params`` in place; returns the learning rate used."""
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient at optimizer step {state.step + 1}")
    lr = warmup_lr(epoch, state.base_lr, state.warmup_epochs)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return lr
