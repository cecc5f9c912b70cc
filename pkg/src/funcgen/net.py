"""Small fixed-shape MLPs with explicit reverse-mode gradients.

Forward and backward passes are pure functions of (params, input), so
parameter sets can be shared freely across sampling chains; only the training
loop mutates parameters, by constructing new instances.  Hidden layers use
SiLU activations; optional skip connections add a hidden layer's activation to
a later hidden layer's pre-activation.  The output head is either linear or a
scaled tanh whose scale is itself a parameter, hard-clipped to [0, 30].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TANH_SCALE_RANGE = (0.0, 30.0)

HEADS = ("linear", "scaled_tanh")


def silu(u: np.ndarray) -> np.ndarray:
    return u / (1.0 + np.exp(-u))


def silu_prime(u: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-u))
    return s * (1.0 + u * (1.0 - s))


@dataclass
class MlpParams:
    """Weights and biases of an MLP, plus head configuration.

    ``layer_dims`` lists the input, hidden, and output widths.  ``skip_pairs``
    holds (from_layer, to_layer) hidden-layer indices (1-based); the source
    activation is added to the destination's pre-activation, so the two layers
    must share a width.
    """

    layer_dims: list
    weights: list
    biases: list
    skip_pairs: list = field(default_factory=list)
    output_head: str = "linear"
    tanh_scale: float = 1.0

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"layer_dims needs >= 2 positive entries, got {dims}")
        self.layer_dims = dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]):
                raise ValueError(f"layer {i + 1}: weight shape {W.shape} != ({dims[i + 1]}, {dims[i]})")
            if b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i + 1}: bias shape {b.shape} != ({dims[i + 1]},)")
        n_hidden = len(dims) - 2
        pairs = [(int(a), int(b)) for a, b in self.skip_pairs]
        for src, dst in pairs:
            if not (1 <= src < dst <= n_hidden):
                raise ValueError(f"skip pair ({src}, {dst}) outside hidden layers 1..{n_hidden}")
            if dims[src] != dims[dst]:
                raise ValueError(f"skip pair ({src}, {dst}) joins widths {dims[src]} != {dims[dst]}")
        self.skip_pairs = pairs
        if self.output_head not in HEADS:
            raise ValueError(f"output_head must be one of {HEADS}, got {self.output_head!r}")
        lo, hi = TANH_SCALE_RANGE
        self.tanh_scale = float(np.clip(self.tanh_scale, lo, hi))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_dims=list(self.layer_dims),
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            skip_pairs=list(self.skip_pairs),
            output_head=self.output_head,
            tanh_scale=self.tanh_scale,
        )


@dataclass
class MlpGrads:
    """Parameter-shaped gradients (same layout as MlpParams)."""

    weights: list
    biases: list
    tanh_scale: float = 0.0


@dataclass
class GradPair:
    """Result of a backward pass: parameter gradients plus input gradient."""

    grad_params: MlpGrads
    grad_input: np.ndarray


def init_params(
    layer_dims,
    seed: int = 0,
    skip_pairs=(),
    output_head: str = "linear",
) -> MlpParams:
    """Deterministic initialization: weights ~ N(0, 1/fan_in), biases zero.

    ``tanh_scale`` starts at 1 regardless of head.
    """
    dims = [int(d) for d in layer_dims]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        skip_pairs=list(skip_pairs),
        output_head=output_head,
        tanh_scale=1.0,
    )


def default_architecture(in_dim: int, out_dim: int, hidden=(512, 512, 512)):
    """Layer dims plus the standard skip pairs (1->2, 2->3 for three hiddens)."""
    dims = [in_dim, *hidden, out_dim]
    pairs = [(i, i + 1) for i in range(1, len(hidden))]
    return dims, pairs


def _forward_trace(params: MlpParams, x: np.ndarray):
    """Forward pass keeping activations; x is (B, in_dim)."""
    hs = [x]
    us = []
    L = params.n_layers
    for i in range(L):
        u = hs[i] @ params.weights[i].T + params.biases[i]
        for src, dst in params.skip_pairs:
            if dst == i + 1:
                u = u + hs[src]
        us.append(u)
        if i + 1 < L:
            hs.append(silu(u))
        else:
            if params.output_head == "linear":
                hs.append(u)
            else:
                hs.append(params.tanh_scale * np.tanh(u))
    return hs, us


def _as_batch(x, dim: int, name: str):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} entries per row, got shape {np.shape(x)}")
    return arr, single


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network; accepts a (in_dim,) vector or (B, in_dim) batch."""
    xb, single = _as_batch(x, params.in_dim, "input")
    out = _forward_trace(params, xb)[0][-1]
    return out[0] if single else out


def mlp_backward(params: MlpParams, x, upstream, with_param_grads: bool = True) -> GradPair:
    """Vector-Jacobian products of the network output.

    ``grad_input`` has the input's shape; for batched input the parameter
    gradients are summed over the batch.  Setting ``with_param_grads=False``
    skips the parameter pass and returns zero-filled parameter grads (used by
    samplers that only need state gradients).
    """
    xb, single = _as_batch(x, params.in_dim, "input")
    ub, usingle = _as_batch(upstream, params.out_dim, "upstream")
    if single != usingle or xb.shape[0] != ub.shape[0]:
        raise ValueError(
            f"input batch {xb.shape[0]} and upstream batch {ub.shape[0]} must match"
        )

    hs, us = _forward_trace(params, xb)
    L = params.n_layers

    g_scale = 0.0
    if params.output_head == "linear":
        d_u = ub
    else:
        th = np.tanh(us[-1])
        d_u = ub * params.tanh_scale * (1.0 - th * th)
        if with_param_grads:
            g_scale = float(np.sum(ub * th))

    gW = [None] * L
    gb = [None] * L
    d_h = [np.zeros_like(h) for h in hs[:-1]]

    for i in range(L - 1, -1, -1):
        if with_param_grads:
            gW[i] = d_u.T @ hs[i]
            gb[i] = d_u.sum(axis=0)
        d_h[i] += d_u @ params.weights[i]
        for src, dst in params.skip_pairs:
            if dst == i + 1:
                d_h[src] += d_u
        if i > 0:
            d_u = d_h[i] * silu_prime(us[i - 1])

    if not with_param_grads:
        gW = [np.zeros_like(W) for W in params.weights]
        gb = [np.zeros_like(b) for b in params.biases]

    grad_input = d_h[0][0] if single else d_h[0]
    return GradPair(
        grad_params=MlpGrads(weights=gW, biases=gb, tanh_scale=g_scale),
        grad_input=grad_input,
    )


def zeros_like_grads(params: MlpParams) -> MlpGrads:
    return MlpGrads(
        weights=[np.zeros_like(W) for W in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
        tanh_scale=0.0,
    )


def add_scaled_grads(acc: MlpGrads, other: MlpGrads, scale: float = 1.0) -> MlpGrads:
    """In-place acc += scale * other; returns acc."""
    for W, O in zip(acc.weights, other.weights):
        W += scale * O
    for b, o in zip(acc.biases, other.biases):
        b += scale * o
    acc.tanh_scale += scale * other.tanh_scale
    return acc


def params_to_vector(params: MlpParams) -> np.ndarray:
    parts = [W.ravel() for W in params.weights] + [b for b in params.biases]
    parts.append(np.array([params.tanh_scale]))
    return np.concatenate(parts)


def grads_to_vector(grads: MlpGrads) -> np.ndarray:
    parts = [W.ravel() for W in grads.weights] + [b for b in grads.biases]
    parts.append(np.array([grads.tanh_scale]))
    return np.concatenate(parts)


def vector_to_params(vec: np.ndarray, template: MlpParams) -> MlpParams:
    """Rebuild params from a flat vector laid out like params_to_vector."""
    vec = np.asarray(vec, dtype=float)
    weights, biases = [], []
    pos = 0
    for W in template.weights:
        n = W.size
        weights.append(vec[pos : pos + n].reshape(W.shape).copy())
        pos += n
    for b in template.biases:
        n = b.size
        biases.append(vec[pos : pos + n].copy())
        pos += n
    scale = float(vec[pos])
    pos += 1
    if pos != vec.size:
        raise ValueError(f"vector length {vec.size} does not match template ({pos})")
    return MlpParams(
        layer_dims=list(template.layer_dims),
        weights=weights,
        biases=biases,
        skip_pairs=list(template.skip_pairs),
        output_head=template.output_head,
        tanh_scale=scale,
    )


def save_mlp(path, params: MlpParams) -> None:
    """Flat text checkpoint: header, then row-major weights/biases, then tanh_scale."""
    lines = [
        "mlp v1",
        "layer_dims " + " ".join(str(d) for d in params.layer_dims),
        "skip_pairs " + " ".join(f"{a}:{b}" for a, b in params.skip_pairs),
        f"output_head {params.output_head}",
    ]
    for W, b in zip(params.weights, params.biases):
        lines.extend(" ".join(repr(float(v)) for v in row) for row in W)
        lines.append(" ".join(repr(float(v)) for v in b))
    lines.append(repr(float(params.tanh_scale)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mlp(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "mlp v1":
        raise ValueError(f"{path}: not an MLP checkpoint")
    dims = [int(t) for t in lines[1].split()[1:]]
    skip_tokens = lines[2].split()[1:]
    skip_pairs = [tuple(int(v) for v in tok.split(":")) for tok in skip_tokens]
    head = lines[3].split()[1]
    numbers = []
    for ln in lines[4:]:
        numbers.extend(float(t) for t in ln.split())
    numbers = np.array(numbers)
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n = fan_out * fan_in
        weights.append(numbers[pos : pos + n].reshape(fan_out, fan_in))
        pos += n
        biases.append(numbers[pos : pos + fan_out])
        pos += fan_out
    if pos + 1 != numbers.size:
        raise ValueError(f"{path}: expected {pos + 1} numbers, found {numbers.size}")
    return MlpParams(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        skip_pairs=skip_pairs,
        output_head=head,
        tanh_scale=float(numbers[pos]),
    )
