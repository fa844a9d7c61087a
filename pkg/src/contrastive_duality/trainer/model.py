"""A small MLP encoder + projector with manual backpropagation.

Samples are rows here (``(N, width)``); the trainer transposes the
projector output into the ``(M, N)`` embedding matrix the criteria expect.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelSpec:
    """Layer widths for the encoder (input -> representation) and projector
    (representation -> embedding).

    Every encoder layer is Linear -> BatchNorm -> ReLU. Projector hidden
    layers are the same; the final projector layer is a bare linear map
    with no bias. The last encoder layer (the representation) skips
    batch standardization unless ``representation_batchnorm`` is set, so a
    collapsed representation stays observable. ``encoder_widths=(d,)``
    means an identity encoder.
    """

    encoder_widths: tuple[int, ...] = (32, 64, 16)
    projector_widths: tuple[int, ...] = (16, 64, 16)
    batchnorm: bool = True
    representation_batchnorm: bool = False

    def __post_init__(self):
        if len(self.encoder_widths) < 1 or len(self.projector_widths) < 2:
            raise ValueError("encoder needs >= 1 width, projector >= 2")
        if any(w < 1 for w in self.encoder_widths + self.projector_widths):
            raise ValueError("widths must be positive")
        if self.encoder_widths[-1] != self.projector_widths[0]:
            raise ValueError("projector must start at the representation width")

    @property
    def input_dim(self) -> int:
        return self.encoder_widths[0]

    @property
    def rep_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def emb_dim(self) -> int:
        return self.projector_widths[-1]

    @staticmethod
    def from_projector(input_dim: int, hidden: tuple[int, ...], rep_dim: int, projector: str, emb_dim: int) -> "ModelSpec":
        """Build from a projector shape name: ``d-d-d``, ``2R-d``, ``4R-4R-d``."""
        shapes = {
            "d-d-d": (emb_dim, emb_dim, emb_dim),
            "2R-d": (2 * rep_dim, emb_dim),
            "4R-4R-d": (4 * rep_dim, 4 * rep_dim, emb_dim),
        }
        if projector not in shapes:
            raise ValueError(f"unknown projector shape {projector!r}; choose from {sorted(shapes)}")
        return ModelSpec((input_dim, *hidden, rep_dim), (rep_dim, *shapes[projector]))


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray | None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    relu: bool = True

    def params(self) -> dict[str, np.ndarray]:
        out = {"W": self.W}
        for k in ("b", "gamma", "beta"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


@dataclass
class MLP:
    spec: ModelSpec
    encoder: list[Layer] = field(default_factory=list)
    projector: list[Layer] = field(default_factory=list)

    def layers(self):
        return self.encoder + self.projector

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for part, layers in (("enc", self.encoder), ("proj", self.projector)):
            for i, layer in enumerate(layers):
                for k, v in layer.params().items():
                    out[f"{part}.{i}.{k}"] = v
        return out

    def encoder_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.named_params().items() if k.startswith("enc.")}

    def copy(self) -> "MLP":
        return copy.deepcopy(self)


def _make_layer(rng, fan_in, fan_out, bn: bool, relu: bool, bias: bool) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, (fan_in, fan_out))
    b = rng.uniform(-bound, bound, fan_out) if bias else None
    layer = Layer(W, b, relu=relu)
    if bn:
        layer.gamma = np.ones(fan_out)
        layer.beta = np.zeros(fan_out)
        layer.running_mean = np.zeros(fan_out)
        layer.running_var = np.ones(fan_out)
    return layer


def init_model(spec: ModelSpec, rng: np.random.Generator) -> MLP:
    ew = spec.encoder_widths
    n_enc = len(ew) - 1
    enc = [
        _make_layer(rng, a, b, spec.batchnorm and (i < n_enc - 1 or spec.representation_batchnorm), True, True)
        for i, (a, b) in enumerate(zip(ew[:-1], ew[1:]))
    ]
    pw = spec.projector_widths
    proj = [_make_layer(rng, a, b, spec.batchnorm, True, True) for a, b in zip(pw[:-2], pw[1:-1])]
    proj.append(_make_layer(rng, pw[-2], pw[-1], False, False, False))
    return MLP(spec, enc, proj)


def _layer_forward(layer: Layer, x: np.ndarray, train: bool):
    z = x @ layer.W
    if layer.b is not None:
        z = z + layer.b
    cache = {"x": x}
    if layer.gamma is not None:
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            n = z.shape[0]
            layer.running_mean *= 1 - BN_MOMENTUM
            layer.running_mean += BN_MOMENTUM * mu
            layer.running_var *= 1 - BN_MOMENTUM
            layer.running_var += BN_MOMENTUM * var * n / max(n - 1, 1)
        else:
            mu, var = layer.running_mean, layer.running_var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv
        cache.update(zhat=zhat, inv=inv)
        z = layer.gamma * zhat + layer.beta
    if layer.relu:
        cache["mask"] = z > 0
        z = z * cache["mask"]
    return z, cache


def _layer_backward(layer: Layer, g: np.ndarray, cache, grads: dict, prefix: str):
    if layer.relu:
        g = g * cache["mask"]
    if layer.gamma is not None:
        zhat, inv = cache["zhat"], cache["inv"]
        grads[prefix + "gamma"] = (g * zhat).sum(axis=0)
        grads[prefix + "beta"] = g.sum(axis=0)
        gz = g * layer.gamma
        n = g.shape[0]
        g = inv / n * (n * gz - gz.sum(axis=0) - zhat * (gz * zhat).sum(axis=0))
    if layer.b is not None:
        grads[prefix + "b"] = g.sum(axis=0)
    grads[prefix + "W"] = cache["x"].T @ g
    return g @ layer.W.T


def forward(model: MLP, X: np.ndarray, train: bool = True):
    """Returns ``(representations, embeddings, cache)``, samples as rows.

    In training mode batch statistics are used and running averages
    updated; otherwise the running averages are used.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise ShapeMismatch(f"expected (N, {model.spec.input_dim}) input, got {X.shape}")
    h = X
    caches = []
    for layer in model.encoder:
        h, c = _layer_forward(layer, h, train)
        caches.append(c)
    rep = h
    for layer in model.projector:
        h, c = _layer_forward(layer, h, train)
        caches.append(c)
    return rep, h, caches


def backward(model: MLP, caches, d_emb: np.ndarray, grads: dict | None = None) -> dict:
    """Accumulate parameter gradients of the embedding gradient ``d_emb``."""
    local: dict[str, np.ndarray] = {}
    g = d_emb
    named = [("enc", i, l) for i, l in enumerate(model.encoder)] + [("proj", i, l) for i, l in enumerate(model.projector)]
    for (part, i, layer), cache in reversed(list(zip(named, caches))):
        g = _layer_backward(layer, g, cache, local, f"{part}.{i}.")
    if grads is None:
        return local
    for k, v in local.items():
        grads[k] = grads[k] + v if k in grads else v
    return grads
