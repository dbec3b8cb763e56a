"""Dense numerical core: flat parameter vectors, the MLP task model, the
LSTM-based Q-network, Adam, and a small checkpoint format.

Everything is float64 and purely functional: parameters go in, new arrays
come out. Only two architectures are supported, there is no autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericalError, ShapeError, ValidationError

ShapeMap = tuple[tuple[str, tuple[int, ...]], ...]

_CHECKPOINT_MAGIC = "fedsec-params v1"


def _normalize_shape_map(shape_map) -> ShapeMap:
    return tuple((str(name), tuple(int(d) for d in dims)) for name, dims in shape_map)


def shape_map_size(shape_map: ShapeMap) -> int:
    return sum(math.prod(dims) for _, dims in shape_map)


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 vector plus the (name, dims) layout it decomposes into."""

    values: np.ndarray
    shape_map: ShapeMap

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape_map", _normalize_shape_map(self.shape_map))
        expected = shape_map_size(self.shape_map)
        if values.size != expected:
            raise ShapeError(
                f"parameter vector has {values.size} elements, shape map needs {expected}"
            )

    @classmethod
    def zeros(cls, shape_map) -> "ParamVector":
        shape_map = _normalize_shape_map(shape_map)
        return cls(np.zeros(shape_map_size(shape_map)), shape_map)

    def layers(self) -> dict[str, np.ndarray]:
        """Named views into ``values`` (writes go through to the flat array)."""
        out = {}
        offset = 0
        for name, dims in self.shape_map:
            n = math.prod(dims)
            out[name] = self.values[offset:offset + n].reshape(dims)
            offset += n
        return out

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), self.shape_map)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shape_map)

    def check_compatible(self, other: "ParamVector") -> None:
        if self.shape_map != other.shape_map:
            raise ShapeError(
                f"incompatible parameter layouts: {describe_shape_map(self.shape_map)} "
                f"vs {describe_shape_map(other.shape_map)}"
            )

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self.check_compatible(other)
        return ParamVector(self.values + other.values, self.shape_map)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self.check_compatible(other)
        return ParamVector(self.values - other.values, self.shape_map)

    def __neg__(self) -> "ParamVector":
        return ParamVector(-self.values, self.shape_map)

    def scaled(self, factor: float) -> "ParamVector":
        return ParamVector(self.values * factor, self.shape_map)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return self.values.size


def describe_shape_map(shape_map: ShapeMap) -> str:
    return ";".join(f"{name}={'x'.join(str(d) for d in dims)}" for name, dims in shape_map)


def parse_shape_map(text: str) -> ShapeMap:
    entries = []
    for item in filter(None, text.strip().split(";")):
        name, _, dims = item.partition("=")
        if not name or not dims:
            raise FormatError(f"bad shape map entry {item!r}")
        try:
            entries.append((name, tuple(int(d) for d in dims.split("x"))))
        except ValueError as exc:
            raise FormatError(f"bad dimensions in shape map entry {item!r}") from exc
    return tuple(entries)


# ---------------------------------------------------------------------------
# MLP task model

@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValidationError(f"MLP dimensions must all be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    @property
    def shape_map(self) -> ShapeMap:
        w = self.widths
        entries = []
        for i in range(len(w) - 1):
            entries.append((f"W{i}", (w[i], w[i + 1])))
            entries.append((f"b{i}", (w[i + 1],)))
        return tuple(entries)

    @property
    def param_count(self) -> int:
        return shape_map_size(self.shape_map)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, size) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=size)


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    params = ParamVector.zeros(spec.shape_map)
    layers = params.layers()
    w = spec.widths
    for i in range(len(w) - 1):
        layers[f"W{i}"][...] = _glorot(rng, w[i], w[i + 1], (w[i], w[i + 1]))
    return params


def _mlp_layers(params: ParamVector, spec: MlpSpec):
    if params.shape_map != spec.shape_map:
        for (name, dims), (want_name, want_dims) in zip(params.shape_map, spec.shape_map):
            if name != want_name or dims != want_dims:
                raise ShapeError(f"layer {want_name}: expected dims {want_dims}, got {name} {dims}")
        raise ShapeError(
            f"expected {len(spec.shape_map)} parameter blocks, got {len(params.shape_map)}"
        )
    layers = params.layers()
    n = len(spec.widths) - 1
    return [(layers[f"W{i}"], layers[f"b{i}"]) for i in range(n)]


def _check_batch(batch, width: int, layer: str) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != width:
        raise ShapeError(f"layer {layer}: expected input width {width}, got shape {batch.shape}")
    return batch


def mlp_forward(params: ParamVector, spec: MlpSpec, batch) -> np.ndarray:
    """Logits for every row of ``batch``."""
    weights = _mlp_layers(params, spec)
    h = _check_batch(batch, spec.input_dim, "W0")
    last = len(weights) - 1
    for i, (W, b) in enumerate(weights):
        h = h @ W + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mlp_backward(params: ParamVector, spec: MlpSpec, batch, labels) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    weights = _mlp_layers(params, spec)
    x = _check_batch(batch, spec.input_dim, "W0")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.shape[0] == 0:
        raise ValidationError("empty batch")
    if labels.shape[0] != x.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {x.shape[0]} rows")
    if labels.min() < 0 or labels.max() >= spec.output_dim:
        raise ValidationError(f"labels must lie in [0, {spec.output_dim})")

    activations = [x]
    pre = []
    h = x
    last = len(weights) - 1
    for i, (W, b) in enumerate(weights):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)

    n = x.shape[0]
    rows = np.arange(n)
    logp = log_softmax(h)
    loss = float(-logp[rows, labels].mean())

    grad = ParamVector.zeros(params.shape_map)
    glayers = grad.layers()
    delta = np.exp(logp)
    delta[rows, labels] -= 1.0
    delta /= n
    for i in range(last, -1, -1):
        glayers[f"W{i}"][...] = activations[i].T @ delta
        glayers[f"b{i}"][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i][0].T) * (pre[i - 1] > 0)
    return loss, grad


# ---------------------------------------------------------------------------
# Recurrent Q-network

@dataclass(frozen=True)
class DrqnSpec:
    """LSTM -> ReLU FC -> linear Q head. Gate order in the flat layout is
    (input, forget, cell, output)."""

    obs_action_dim: int
    lstm_units: int
    fc_units: int
    action_count: int
    sequence_len: int

    def __post_init__(self):
        for name in ("obs_action_dim", "lstm_units", "fc_units", "action_count", "sequence_len"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"DrqnSpec.{name} must be >= 1")

    @property
    def shape_map(self) -> ShapeMap:
        d, h, f, a = self.obs_action_dim, self.lstm_units, self.fc_units, self.action_count
        return (
            ("lstm_W[i,f,g,o]", (d, 4 * h)),
            ("lstm_U[i,f,g,o]", (h, 4 * h)),
            ("lstm_b[i,f,g,o]", (4 * h,)),
            ("fc_W", (h, f)),
            ("fc_b", (f,)),
            ("q_W", (f, a)),
            ("q_b", (a,)),
        )

    @property
    def param_count(self) -> int:
        return shape_map_size(self.shape_map)


def init_drqn(spec: DrqnSpec, rng: np.random.Generator) -> ParamVector:
    params = ParamVector.zeros(spec.shape_map)
    L = params.layers()
    d, h, f, a = spec.obs_action_dim, spec.lstm_units, spec.fc_units, spec.action_count
    L["lstm_W[i,f,g,o]"][...] = _glorot(rng, d, 4 * h, (d, 4 * h))
    L["lstm_U[i,f,g,o]"][...] = _glorot(rng, h, 4 * h, (h, 4 * h))
    L["lstm_b[i,f,g,o]"][h:2 * h] = 1.0
    L["fc_W"][...] = _glorot(rng, h, f, (h, f))
    L["q_W"][...] = _glorot(rng, f, a, (f, a))
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _drqn_blocks(params: ParamVector, spec: DrqnSpec):
    if params.shape_map != spec.shape_map:
        raise ShapeError(
            f"DRQN parameter layout mismatch: got {describe_shape_map(params.shape_map)}, "
            f"expected {describe_shape_map(spec.shape_map)}"
        )
    L = params.layers()
    return (L["lstm_W[i,f,g,o]"], L["lstm_U[i,f,g,o]"], L["lstm_b[i,f,g,o]"],
            L["fc_W"], L["fc_b"], L["q_W"], L["q_b"])


def _check_sequence(sequence, spec: DrqnSpec) -> tuple[np.ndarray, bool]:
    seq = np.asarray(sequence, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] != spec.sequence_len or seq.shape[2] != spec.obs_action_dim:
        raise ShapeError(
            f"expected sequence of shape ({spec.sequence_len}, {spec.obs_action_dim}) "
            f"(optionally batched), got {np.shape(sequence)}"
        )
    return seq, single


def _drqn_pass(params: ParamVector, spec: DrqnSpec, seq: np.ndarray):
    W, U, b, Wf, bf, Wq, bq = _drqn_blocks(params, spec)
    H = spec.lstm_units
    B = seq.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(spec.sequence_len):
        x = seq[:, t, :]
        z = x @ W + h @ U + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((x, h_prev, c_prev, i, f, g, o, tc))
    fc_pre = h @ Wf + bf
    fc = np.maximum(fc_pre, 0.0)
    q = fc @ Wq + bq
    return q, (cache, h, fc_pre, fc)


def drqn_forward(params: ParamVector, spec: DrqnSpec, sequence) -> np.ndarray:
    """Q-values for one ``(sequence_len, obs_action_dim)`` sequence, or a
    batch of them stacked along a leading axis."""
    seq, single = _check_sequence(sequence, spec)
    q, _ = _drqn_pass(params, spec, seq)
    return q[0] if single else q


def drqn_backward(params: ParamVector, spec: DrqnSpec, sequence, target_q,
                  action_taken) -> tuple[float, ParamVector]:
    """Squared TD error on the taken action(s), averaged over the batch.

    ``target_q`` may hold a per-action target vector (only the taken entry is
    used) or a scalar target per sequence.
    """
    seq, single = _check_sequence(sequence, spec)
    B = seq.shape[0]
    actions = np.asarray(action_taken, dtype=np.int64).reshape(-1)
    if actions.shape[0] != B:
        raise ShapeError(f"{actions.shape[0]} actions for {B} sequences")
    if actions.min() < 0 or actions.max() >= spec.action_count:
        raise ValidationError(f"action index must lie in [0, {spec.action_count})")
    targets = np.asarray(target_q, dtype=np.float64)
    if single:
        targets = targets[None] if targets.ndim <= 1 else targets
    if targets.ndim == 2:
        targets = targets[np.arange(B), actions]
    targets = targets.reshape(-1)
    if targets.shape[0] != B:
        raise ShapeError(f"{targets.shape[0]} targets for {B} sequences")

    W, U, b, Wf, bf, Wq, bq = _drqn_blocks(params, spec)
    q, (cache, h_last, fc_pre, fc) = _drqn_pass(params, spec, seq)
    rows = np.arange(B)
    resid = q[rows, actions] - targets
    loss = float(np.mean(resid ** 2))

    grad = ParamVector.zeros(params.shape_map)
    gW, gU, gb, gWf, gbf, gWq, gbq = _drqn_blocks(grad, spec)
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * resid / B
    gWq[...] = fc.T @ dq
    gbq[...] = dq.sum(axis=0)
    dfc = (dq @ Wq.T) * (fc_pre > 0)
    gWf[...] = h_last.T @ dfc
    gbf[...] = dfc.sum(axis=0)
    dh = dfc @ Wf.T
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g),
             do * o * (1.0 - o)],
            axis=1,
        )
        gW += x.T @ dz
        gU += h_prev.T @ dz
        gb += dz.sum(axis=0)
        dh = dz @ U.T
        dc = dc * f
    return loss, grad


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamVector, learning_rate: float = 1e-3, **kw) -> "AdamState":
        n = params.values.size
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(params: ParamVector, grad: ParamVector,
              state: AdamState) -> tuple[ParamVector, AdamState]:
    params.check_compatible(grad)
    g = grad.values
    if state.first_moment.shape != g.shape or state.second_moment.shape != g.shape:
        raise ShapeError("Adam moment shapes do not match the parameters")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NumericalError(f"non-finite gradient component at index {int(bad[0])}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return ParamVector(new, params.shape_map), new_state


# ---------------------------------------------------------------------------
# Checkpoints: one text header line, then little-endian float64 values.

def save_checkpoint(path, params: ParamVector) -> None:
    header = f"{_CHECKPOINT_MAGIC} {describe_shape_map(params.shape_map)}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ParamVector:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing checkpoint header")
    header = raw[:newline].decode("ascii", errors="replace")
    if not header.startswith(_CHECKPOINT_MAGIC + " "):
        raise FormatError(f"{path}: not a parameter checkpoint")
    shape_map = parse_shape_map(header[len(_CHECKPOINT_MAGIC) + 1:])
    body = raw[newline + 1:]
    expected = shape_map_size(shape_map) * 8
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    return ParamVector(np.frombuffer(body, dtype="<f8").astype(np.float64), shape_map)

