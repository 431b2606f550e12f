"""Two-layer GRU encoder and the affine evidential head.

The encoder consumes a (T, d) window-feature matrix and returns the final
hidden state of the second GRU layer.  Gate equations follow the standard
formulation with the reset gate applied to the hidden state before the
candidate transform:

    r = sigmoid(x W_r + h U_r + b_r)
    z = sigmoid(x W_z + h U_z + b_z)
    c = tanh(x W_c + (r * h) U_c + b_c)
    h' = (1 - z) * h + z * c

Initial hidden states are zero.  All rows of the input are processed,
including any leading zero-pad windows a short history was filled with
(after standardization those are ordinary "silent hours" inputs, so every
encode of a padded sequence starts from the same quiet-state trajectory).
Trailing padding is different: passing n_steps processes only the first
n_steps rows, so output is invariant to whatever sits beyond them.

Dropout is inverted-scaled and applied to layer-1 outputs fed into
layer 2 and to the embedding fed into the head, only while active.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .evidential import DirichletAssessment, alpha_from_raw, assess
from .numerics import Node, SeededRng, Tape
from .numerics.autodiff import sigmoid, softplus

GATES = ("r", "z", "c")


@dataclass
class GruLayerParams:
    """Weights for one GRU layer: input path w_*, hidden path u_*, bias b_*."""

    w: dict[str, np.ndarray]
    u: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.w["r"].shape[0]

    @property
    def hidden(self) -> int:
        return self.w["r"].shape[1]


@dataclass
class EncoderParams:
    layers: list[GruLayerParams] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden(self) -> int:
        return self.layers[-1].hidden

    def to_flat(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for g in GATES:
                out[f"enc.l{i}.w_{g}"] = layer.w[g]
                out[f"enc.l{i}.u_{g}"] = layer.u[g]
                out[f"enc.l{i}.b_{g}"] = layer.b[g]
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, np.ndarray], n_layers: int) -> "EncoderParams":
        layers = []
        for i in range(n_layers):
            layers.append(GruLayerParams(
                w={g: flat[f"enc.l{i}.w_{g}"] for g in GATES},
                u={g: flat[f"enc.l{i}.u_{g}"] for g in GATES},
                b={g: flat[f"enc.l{i}.b_{g}"] for g in GATES},
            ))
        return cls(layers=layers)


@dataclass
class EvidentialHeadParams:
    w: np.ndarray  # (k, K)
    b: np.ndarray  # (K,)

    @property
    def n_clusters(self) -> int:
        return self.w.shape[1]

    def to_flat(self) -> dict[str, np.ndarray]:
        return {"head.w": self.w, "head.b": self.b}

    @classmethod
    def from_flat(cls, flat: dict[str, np.ndarray]) -> "EvidentialHeadParams":
        return cls(w=flat["head.w"], b=flat["head.b"])


@dataclass(frozen=True)
class DropoutSpec:
    p: float = 0.3
    active: bool = False

    def __post_init__(self):
        if not (0.0 <= self.p < 1.0):
            raise ContractError(f"dropout probability must be in [0, 1), got {self.p}")


INFERENCE_DROPOUT = DropoutSpec(p=0.0, active=False)


@dataclass(frozen=True)
class LatentEmbedding:
    values: np.ndarray
    user: str = ""
    window_end: float = 0.0


def _uniform_init(rng: SeededRng, shape: tuple[int, int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[0])
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


FIRST_LAYER_UPDATE_BIAS = -1.0
HEAD_EVIDENCE_PRIOR = 2.5


def init_encoder(input_dim: int, hidden: int, n_layers: int, rng: SeededRng,
                 first_layer_update_bias: float = FIRST_LAYER_UPDATE_BIAS) -> EncoderParams:
    """Uniform(+-1/sqrt(fan-in)) weights; biases zero except layer 1's
    update gate.

    The negative first-layer update-gate bias puts the input-facing cell
    in a slow-update regime: ordinary feature noise barely moves the
    state, while large standardized deviations saturate the gate open
    and punch through.  Deeper layers keep a neutral gate so first-layer
    movement propagates to the final state instead of being absorbed.
    """
    layers = []
    for i in range(n_layers):
        d_in = input_dim if i == 0 else hidden
        biases = {g: np.zeros(hidden) for g in GATES}
        if i == 0:
            biases["z"] = np.full(hidden, first_layer_update_bias)
        layers.append(GruLayerParams(
            w={g: _uniform_init(rng, (d_in, hidden)) for g in GATES},
            u={g: _uniform_init(rng, (hidden, hidden)) for g in GATES},
            b=biases,
        ))
    return EncoderParams(layers=layers)


def init_head(hidden: int, n_clusters: int, rng: SeededRng,
              evidence_prior: float = HEAD_EVIDENCE_PRIOR) -> EvidentialHeadParams:
    """Affine head with a uniform positive evidence prior on the bias.

    Starting every cluster at softplus(prior)+1 concentration makes the
    initial model confident-but-uniform; training then reallocates
    evidence between clusters.
    """
    return EvidentialHeadParams(w=_uniform_init(rng, (hidden, n_clusters)),
                                b=np.full(n_clusters, evidence_prior))


def _dropout_mask(rng: SeededRng, shape, p: float) -> np.ndarray:
    keep = (rng.uniform(shape) >= p).astype(np.float64)
    return keep / (1.0 - p)


def _gru_step(layer: GruLayerParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    r = sigmoid(x @ layer.w["r"] + h @ layer.u["r"] + layer.b["r"])
    z = sigmoid(x @ layer.w["z"] + h @ layer.u["z"] + layer.b["z"])
    c = np.tanh(x @ layer.w["c"] + (r * h) @ layer.u["c"] + layer.b["c"])
    return (1.0 - z) * h + z * c


def encode_features(params: EncoderParams, features: np.ndarray,
                    n_steps: int | None = None,
                    dropout: DropoutSpec = INFERENCE_DROPOUT,
                    rng: SeededRng | None = None) -> np.ndarray:
    """Encode one (T, d) feature matrix to a (k,) embedding.

    n_steps limits processing to the first n_steps rows (trailing rows,
    for example batching pad, are never touched).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be (T, d), got shape {features.shape}")
    if features.shape[1] != params.input_dim:
        raise ShapeError(
            f"feature width {features.shape[1]} != encoder input width {params.input_dim}")
    steps = features if n_steps is None else features[:n_steps]
    if steps.shape[0] < 1:
        raise ContractError("sequence has no steps to encode")
    if dropout.active and rng is None:
        raise ContractError("active dropout requires an rng")

    k = params.hidden
    layer_input = steps
    for depth, layer in enumerate(params.layers):
        h = np.zeros(k)
        outs = np.empty((layer_input.shape[0], k))
        for t in range(layer_input.shape[0]):
            x_t = layer_input[t]
            if depth > 0 and dropout.active:
                x_t = x_t * _dropout_mask(rng, (k,), dropout.p)
            h = _gru_step(layer, x_t, h)
            outs[t] = h
        layer_input = outs
    out = layer_input[-1]
    if dropout.active:
        out = out * _dropout_mask(rng, (k,), dropout.p)
    return out


def encode(params: EncoderParams, seq, dropout: DropoutSpec = INFERENCE_DROPOUT,
           rng: SeededRng | None = None) -> LatentEmbedding:
    """Encode a BehaviorSequence (all T windows, leading pads included)."""
    values = encode_features(params, seq.features, dropout=dropout, rng=rng)
    return LatentEmbedding(values=values, user=seq.user, window_end=seq.window_end)


def head(params: EvidentialHeadParams, z) -> DirichletAssessment:
    """Map an embedding to Dirichlet concentrations (all > 1)."""
    values = z.values if isinstance(z, LatentEmbedding) else np.asarray(z, dtype=np.float64)
    if values.shape != (params.w.shape[0],):
        raise ShapeError(
            f"embedding length {values.shape} != head input width {params.w.shape[0]}")
    raw = values @ params.w + params.b
    return assess(alpha_from_raw(raw))


def encode_batch(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    """Inference-mode batched encode of an (n, T, d) stack to (n, k)."""
    n, t_len, d = features.shape
    if d != params.input_dim:
        raise ShapeError(f"feature width {d} != encoder input width {params.input_dim}")
    k = params.hidden

    def run_layer(layer: GruLayerParams, x: np.ndarray) -> np.ndarray:
        # precompute input projections for all steps in one GEMM per gate
        flat = x.reshape(n * t_len, -1)
        proj = {g: (flat @ layer.w[g] + layer.b[g]).reshape(n, t_len, k) for g in GATES}
        h = np.zeros((n, k))
        outs = np.empty((n, t_len, k))
        for t in range(t_len):
            r = sigmoid(proj["r"][:, t] + h @ layer.u["r"])
            z = sigmoid(proj["z"][:, t] + h @ layer.u["z"])
            c = np.tanh(proj["c"][:, t] + (r * h) @ layer.u["c"])
            h = (1.0 - z) * h + z * c
            outs[:, t] = h
        return outs

    h1 = run_layer(params.layers[0], features)
    h2 = run_layer(params.layers[1], h1)
    return h2[:, -1, :]


# -- taped (training) forward -------------------------------------------------


def leaf_params(tape: Tape, encoder: EncoderParams,
                head_params: EvidentialHeadParams | None = None,
                extra: dict[str, np.ndarray] | None = None) -> dict[str, Node]:
    """Wrap parameter arrays as differentiable tape leaves, keyed by name."""
    flat = encoder.to_flat()
    if head_params is not None:
        flat.update(head_params.to_flat())
    if extra:
        flat.update(extra)
    return {name: tape.leaf(arr) for name, arr in flat.items()}


def taped_encode(tape: Tape, pnodes: dict[str, Node], features: np.ndarray,
                 n_layers: int, dropout: DropoutSpec,
                 rng: SeededRng | None) -> Node:
    """Differentiable batched encode; mirrors encode_batch step for step."""
    n, t_len, d = features.shape
    if dropout.active and rng is None:
        raise ContractError("active dropout requires an rng")
    k = pnodes["enc.l0.u_r"].shape[0]

    def step(i: int, x: Node, h: Node) -> Node:
        w = {g: pnodes[f"enc.l{i}.w_{g}"] for g in GATES}
        u = {g: pnodes[f"enc.l{i}.u_{g}"] for g in GATES}
        b = {g: pnodes[f"enc.l{i}.b_{g}"] for g in GATES}
        r = tape.sigmoid(tape.add(tape.add(tape.matmul(x, w["r"]), tape.matmul(h, u["r"])), b["r"]))
        z = tape.sigmoid(tape.add(tape.add(tape.matmul(x, w["z"]), tape.matmul(h, u["z"])), b["z"]))
        c = tape.tanh(tape.add(tape.add(tape.matmul(x, w["c"]),
                                        tape.matmul(tape.mul(r, h), u["c"])), b["c"]))
        # h' = (1 - z) * h + z * c
        return tape.add(tape.sub(h, tape.mul(z, h)), tape.mul(z, c))

    layer_inputs: list[Node] = [tape.const(features[:, t, :]) for t in range(t_len)]
    for depth in range(n_layers):
        h = tape.const(np.zeros((n, k)))
        outs: list[Node] = []
        for t, x_t in enumerate(layer_inputs):
            if depth > 0 and dropout.active:
                x_t = tape.mul(x_t, tape.const(_dropout_mask(rng, (n, k), dropout.p)))
            h = step(depth, x_t, h)
            outs.append(h)
        layer_inputs = outs

    z_final = layer_inputs[-1]
    if dropout.active:
        z_final = tape.mul(z_final, tape.const(_dropout_mask(rng, (n, k), dropout.p)))
    return z_final


def taped_head(tape: Tape, pnodes: dict[str, Node], z: Node) -> Node:
    """Differentiable head: alpha = softplus(z W + b) + 1."""
    raw = tape.add(tape.matmul(z, pnodes["head.w"]), pnodes["head.b"])
    return tape.shift(tape.softplus(raw), 1.0)
