"""Feed-forward feature extractor with a unit-normalized output layer.

Hidden layers are ReLU; the last layer is linear and its output is projected
row-wise onto the unit sphere.  Parameters are plain numpy arrays, so a
trained encoder is trivially immutable ("frozen") between sessions; training
code materializes tape leaves per step via ``embed_graph``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1


@dataclass
class EncoderParams:
    """Weights of the encoder; ``layer_dims`` = [input, hidden..., embedding]."""

    layer_dims: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    seed: int = 0

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(list(self.layer_dims),
                             [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases],
                             self.seed)

    def fingerprint(self) -> bytes:
        """Bit-exact digest of all parameter values."""
        import hashlib
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.digest()


def init_params(layer_dims: list[int], seed: int) -> EncoderParams:
    """He-style initialization: W ~ N(0, 2/fan_in), biases zero."""
    if len(layer_dims) < 2:
        raise ValueError(f"need at least 2 layers, got dims {layer_dims}")
    if any(d <= 0 for d in layer_dims):
        raise ValueError(f"all layer dims must be positive, got {layer_dims}")
    if layer_dims[-1] < 2:
        raise ValueError("embedding dimension must be at least 2")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(list(layer_dims), weights, biases, seed)


def _check_input(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.layer_dims[0]:
        raise ad.ShapeMismatchError(
            f"input dim {x.shape[1]} does not match encoder input {params.layer_dims[0]}")
    return x


def embed_graph(params: EncoderParams, x: np.ndarray, tape: ad.Tape):
    """Differentiable forward pass.

    Returns ``(z, leaves)`` where ``z`` is the B x d unit-row output tensor
    and ``leaves`` is the list of (weight, bias) leaf-tensor pairs in layer
    order, for optimizer updates.
    """
    x = _check_input(params, x)
    n = x.shape[0]
    leaves = [(ad.Tensor(w, tape=tape), ad.Tensor(b.reshape(1, -1), tape=tape))
              for w, b in zip(params.weights, params.biases)]
    h = ad.Tensor(x)
    ones_col = ad.Tensor(np.ones((n, 1)))
    for i, (w, b) in enumerate(leaves):
        h = ad.add(ad.matmul(h, w), ad.matmul(ones_col, b))
        if i < len(leaves) - 1:
            h = ad.relu(h)
    return ad.row_normalize(h), leaves


def embed(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Pure inference: B x d unit-norm embeddings (1-D input gives one row)."""
    x2 = _check_input(params, x)
    h = x2
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < len(params.weights) - 1:
            h = np.maximum(h, 0.0)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(norms <= ad.EPS_NORM):
        raise ad.DegenerateInputError("pre-normalization embedding has near-zero norm")
    z = h / norms
    return z[0] if np.asarray(x).ndim == 1 else z


def save_params(params: EncoderParams, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "layer_dims": params.layer_dims,
        "seed": params.seed,
        "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(params.weights, params.biases)],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_params(path) -> EncoderParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    weights = [np.array(l["weight"], dtype=np.float64) for l in doc["layers"]]
    biases = [np.array(l["bias"], dtype=np.float64) for l in doc["layers"]]
    params = EncoderParams(list(doc["layer_dims"]), weights, biases, int(doc["seed"]))
    for w, (fan_in, fan_out) in zip(weights, zip(params.layer_dims[:-1], params.layer_dims[1:])):
        if w.shape != (fan_in, fan_out):
            raise ValueError(f"weight shape {w.shape} inconsistent with dims {params.layer_dims}")
    return params
