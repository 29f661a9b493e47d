"""Minimal multilayer perceptron: seeded init, batched forward, and a
weighted backward pass returning the flat gradient sum_i w_i * grad(c_i).

Parameter layout is frozen for the whole package: layer-major, and within
a layer the weight matrix in row-major order followed by the bias vector.
`flatten`/`unflatten` and the text serialization all use this order.

Models are never mutated by forward/backward, so a model can be shared
across concurrent evaluations; per-batch reductions run left-to-right by
sample index, keeping results bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criteria import PROB_EPS
from .seeds import rng_for

ACTIVATIONS = ("sigmoid", "tanh", "relu")
OUTPUT_MODES = ("softmax-ce", "sigmoid-binary-ce", "identity-squared")


class ModelFormatError(ValueError):
    """Malformed serialized model text."""


@dataclass
class MlpModel:
    layer_dims: tuple
    activation: str
    output_mode: str
    weights: list  # weights[k]: (d_{k+1}, d_k)
    biases: list   # biases[k]: (d_{k+1},)

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.layer_dims,
            self.activation,
            self.output_mode,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class ForwardCache:
    """Per-layer pre-activations and activations kept for the backward pass.
    acts[0] is the input batch; acts[-1] is the network output."""

    pre_acts: list
    acts: list

    @property
    def outputs(self) -> np.ndarray:
        return self.acts[-1]


@dataclass
class GradientBundle:
    flat_grad: np.ndarray
    sample_weights_used: np.ndarray
    lambda_grad: float | None = None


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, tag):
    if tag == "sigmoid":
        return _sigmoid(z)
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {tag!r}")


def _activate_grad(z, tag):
    # derivative with respect to the pre-activation; relu'(0) := 0
    if tag == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    if tag == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if tag == "relu":
        return (z > 0).astype(float)
    raise ValueError(f"unknown activation {tag!r}")


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _validate_spec(layer_dims, activation, output_mode):
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError(f"layer_dims needs at least input and output sizes, got {list(layer_dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"layer sizes must be >= 1, got {list(dims)}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r} (expected one of {ACTIVATIONS})")
    if output_mode not in OUTPUT_MODES:
        raise ValueError(f"unknown output mode {output_mode!r} (expected one of {OUTPUT_MODES})")
    if output_mode == "sigmoid-binary-ce" and dims[-1] != 1:
        raise ValueError("sigmoid-binary-ce requires a single output unit")
    if output_mode == "softmax-ce" and dims[-1] < 2:
        raise ValueError("softmax-ce requires at least two output units")
    return dims


def init_model(layer_dims, activation, output_mode, seed: int) -> MlpModel:
    """Glorot-uniform weights (r = sqrt(6/(fan_in+fan_out))), zero biases,
    fully determined by the seed."""
    dims = _validate_spec(layer_dims, activation, output_mode)
    rng = rng_for(seed, "init")
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        r = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-r, r, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpModel(dims, activation, output_mode, weights, biases)


def forward(model: MlpModel, inputs) -> ForwardCache:
    """Batched forward pass; returns the cache needed by weighted_backward.
    softmax-ce outputs are rows of probabilities summing to 1."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match d_0 = {model.layer_dims[0]}"
        )
    acts = [x]
    pre_acts = []
    h = x
    last = model.num_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre_acts.append(z)
        if k < last:
            h = _activate(z, model.activation)
        elif model.output_mode == "softmax-ce":
            h = _softmax(z)
        elif model.output_mode == "sigmoid-binary-ce":
            h = _sigmoid(z)
        else:  # identity-squared
            h = z
        acts.append(h)
    return ForwardCache(pre_acts, acts)


def batch_losses(outputs, targets, output_mode) -> np.ndarray:
    """Vector of nonnegative per-sample losses c_i for a batch of network
    outputs.  Probabilities are clamped before logs."""
    f = np.asarray(outputs, dtype=float)
    if output_mode == "softmax-ce":
        y = np.asarray(targets)
        p = np.clip(f[np.arange(f.shape[0]), y.astype(int)], PROB_EPS, 1.0 - PROB_EPS)
        return -np.log(p)
    if output_mode == "sigmoid-binary-ce":
        y = np.asarray(targets, dtype=float).reshape(-1)
        p = np.clip(f[:, 0], PROB_EPS, 1.0 - PROB_EPS)
        return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    if output_mode == "identity-squared":
        y = np.asarray(targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return np.sum((f - y) ** 2, axis=1)
    raise ValueError(f"unknown output mode {output_mode!r}")


def _output_delta(cache: ForwardCache, targets, output_mode) -> np.ndarray:
    """d c_i / d z_L for each sample, rows of the output-layer delta."""
    f = cache.outputs
    if output_mode == "softmax-ce":
        y = np.asarray(targets).astype(int)
        delta = f.copy()
        delta[np.arange(f.shape[0]), y] -= 1.0
        return delta
    if output_mode == "sigmoid-binary-ce":
        y = np.asarray(targets, dtype=float).reshape(-1, 1)
        return f - y
    if output_mode == "identity-squared":
        y = np.asarray(targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return 2.0 * (f - y)
    raise ValueError(f"unknown output mode {output_mode!r}")


def weighted_backward(model: MlpModel, batch, weights, cache: ForwardCache | None = None) -> GradientBundle:
    """One batched backward pass computing sum_i w_i * grad_W(c_i) as a flat
    vector.  With w_i = 1/m this is the plain mean-loss gradient."""
    w_vec = np.asarray(weights, dtype=float)
    inputs, targets = batch.inputs, batch.targets
    m = np.asarray(inputs).shape[0] if np.asarray(inputs).ndim > 1 else 1
    if w_vec.shape != (m,):
        raise ValueError(f"weights must have shape ({m},), got {w_vec.shape}")
    if np.any(w_vec < 0):
        raise ValueError("sample weights must be nonnegative")
    if cache is None:
        cache = forward(model, inputs)

    delta = _output_delta(cache, targets, model.output_mode) * w_vec[:, None]
    grads_w = [None] * model.num_layers
    grads_b = [None] * model.num_layers
    for k in range(model.num_layers - 1, -1, -1):
        grads_w[k] = delta.T @ cache.acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * _activate_grad(cache.pre_acts[k - 1], model.activation)

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])
    if not np.all(np.isfinite(flat)):
        raise FloatingPointError("non-finite gradient")
    return GradientBundle(flat, w_vec)


def flatten(model: MlpModel) -> np.ndarray:
    """Layer-major, row-major, weights-then-bias parameter vector."""
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(model.weights, model.biases)])


def unflatten(model: MlpModel, vector) -> MlpModel:
    """New model with the same shape tags and parameters taken from `vector`."""
    v = np.asarray(vector, dtype=float)
    n = model.param_count
    if v.shape != (n,):
        raise ValueError(f"parameter vector must have length {n}, got {v.shape}")
    weights, biases = [], []
    pos = 0
    for w, b in zip(model.weights, model.biases):
        weights.append(v[pos:pos + w.size].reshape(w.shape).copy())
        pos += w.size
        biases.append(v[pos:pos + b.size].copy())
        pos += b.size
    return MlpModel(model.layer_dims, model.activation, model.output_mode, weights, biases)


def serialize_model(model: MlpModel) -> str:
    """Line-oriented text form.  Header `mlp <dims...> <activation>
    <output_mode>`, then per layer a `layer <k>` line and d_k rows of
    d_{k-1}+1 hexadecimal floats (row weights then bias); lossless."""
    lines = ["mlp " + " ".join(str(d) for d in model.layer_dims)
             + f" {model.activation} {model.output_mode}"]
    for k, (w, b) in enumerate(zip(model.weights, model.biases), start=1):
        lines.append(f"layer {k}")
        for row, bias in zip(w, b):
            lines.append(" ".join(float(v).hex() for v in row) + " " + float(bias).hex())
    return "\n".join(lines) + "\n"


def deserialize_model(text: str) -> MlpModel:
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError("line 1: empty model text")
    header = lines[0].split()
    if len(header) < 5 or header[0] != "mlp":
        raise ModelFormatError("line 1: expected header 'mlp <dims...> <activation> <output_mode>'")
    activation, output_mode = header[-2], header[-1]
    try:
        dims = tuple(int(tok) for tok in header[1:-2])
    except ValueError:
        raise ModelFormatError("line 1: non-integer layer dimension in header") from None
    dims = _validate_spec(dims, activation, output_mode)

    weights, biases = [], []
    ln = 1  # 0-based index of the next line to consume
    for k in range(1, len(dims)):
        if ln >= len(lines) or lines[ln].split() != ["layer", str(k)]:
            raise ModelFormatError(f"line {ln + 1}: expected 'layer {k}'")
        ln += 1
        d_out, d_in = dims[k], dims[k - 1]
        w = np.empty((d_out, d_in))
        b = np.empty(d_out)
        for r in range(d_out):
            if ln >= len(lines):
                raise ModelFormatError(f"line {ln + 1}: file ends inside layer {k} (row {r + 1} missing)")
            toks = lines[ln].split()
            if len(toks) != d_in + 1:
                raise ModelFormatError(
                    f"line {ln + 1}: expected {d_in + 1} tokens for layer {k} row {r + 1}, got {len(toks)}"
                )
            try:
                vals = [float.fromhex(t) for t in toks]
            except ValueError:
                raise ModelFormatError(f"line {ln + 1}: invalid hexadecimal float") from None
            w[r] = vals[:-1]
            b[r] = vals[-1]
            ln += 1
        weights.append(w)
        biases.append(b)
    return MlpModel(dims, activation, output_mode, weights, biases)


def hidden_unit_cosines(model: MlpModel) -> list:
    """Pairwise cosine similarity of hidden-unit incoming weight vectors,
    one matrix per hidden layer.  Diagnostic for weight duplication at very
    large lam; nothing is asserted on it."""
    out = []
    for w in model.weights[:-1]:
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        unit = w / np.maximum(norms, 1e-300)
        out.append(unit @ unit.T)
    return out
