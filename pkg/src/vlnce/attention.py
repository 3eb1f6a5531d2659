"""Numeric kernels for the sequence-to-sequence and cross-modal attention agents.

Everything is plain float64 numpy. Recurrent cells follow the conventional
gate equations:

GRU::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    n  = tanh(W_n x + b_n + r * (U_n h + c_n))
    h' = (1 - z) * n + z * h

LSTM::

    i, f, g, o = split(W x + U h + b)
    c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
    h' = sigmoid(o) * tanh(c')

Any callable with the ``cell(x, h, params) -> h'`` signature can replace the
default GRU in ``seq2seq_step`` / ``cma_step``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Protocol

import numpy as np

from vlnce.errors import DimensionMismatch, EmptyInput, NonFiniteGradient, ParseError
from vlnce.world import Action

N_ACTIONS = 4
START_TOKEN = N_ACTIONS  # action-embedding row used before the first action


@dataclass(frozen=True)
class ModelDims:
    visual: int = 64
    depth: int = 32
    instruction: int = 32
    hidden: int = 64
    action_embedding: int = 32
    word: int = 32
    visual_cells: int = 4
    depth_cells: int = 4  # 2x2 spatial grid, concatenated


@dataclass(frozen=True)
class FeatureSet:
    visual: np.ndarray  # (n_visual_cells, visual)
    depth: np.ndarray  # (n_depth_cells, depth)
    instruction: np.ndarray  # (T, instruction)

    def __post_init__(self):
        for name in ("visual", "depth", "instruction"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if arr.shape[0] == 0:
                raise EmptyInput(f"{name} feature set is empty")
            object.__setattr__(self, name, arr)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def mean_pool(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.size == 0 or len(arr) == 0:
        raise EmptyInput("mean_pool of an empty set")
    if arr.ndim != 2:
        raise DimensionMismatch("mean_pool", "vectors must share one dimension")
    return arr.mean(axis=0)


def attn_weights(inputs, q, W_K) -> np.ndarray:
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    q = np.asarray(q, dtype=float)
    W_K = np.asarray(W_K, dtype=float)
    if len(X) == 0:
        raise EmptyInput("attention over an empty set")
    if W_K.shape != (q.shape[0], X.shape[1]):
        raise DimensionMismatch("attn", f"W_K {W_K.shape} vs query {q.shape[0]} and inputs {X.shape[1]}")
    d_q = q.shape[0]
    if d_q == 0:
        raise DimensionMismatch("attn", "query dimension must be positive")
    scores = (X @ W_K.T) @ q / math.sqrt(d_q)
    return softmax(scores)


def attn(inputs, q, W_K) -> np.ndarray:
    """Scaled dot-product attention: ``sum_i a_i x_i`` with ``a = softmax((W_K x_i)^T q / sqrt(d_q))``."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    alpha = attn_weights(X, q, W_K)
    return alpha @ X


def attn_backward(inputs, q, W_K, upstream) -> dict[str, np.ndarray]:
    """Gradients of ``upstream . attn(inputs, q, W_K)``."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    q = np.asarray(q, dtype=float)
    W_K = np.asarray(W_K, dtype=float)
    g = np.asarray(upstream, dtype=float)
    scale = 1.0 / math.sqrt(q.shape[0])
    alpha = attn_weights(X, q, W_K)
    u = X @ g
    ds = alpha * (u - alpha @ u)
    keys = X @ W_K.T
    return {
        "inputs": np.outer(alpha, g) + np.outer(ds, W_K.T @ q) * scale,
        "q": (ds @ keys) * scale,
        "W_K": np.outer(q, ds @ X) * scale,
    }


def action_head(h, W_a, b_a) -> tuple[np.ndarray, np.ndarray, Action]:
    """Logits, probabilities and argmax action (ties go to the lower enum value)."""
    h = np.asarray(h, dtype=float)
    W_a = np.asarray(W_a, dtype=float)
    b_a = np.asarray(b_a, dtype=float)
    if W_a.shape != (N_ACTIONS, h.shape[0]) or b_a.shape != (N_ACTIONS,):
        raise DimensionMismatch("action_head", f"W_a {W_a.shape}, b_a {b_a.shape}, h {h.shape}")
    logits = W_a @ h + b_a
    probs = softmax(logits)
    return logits, probs, Action(int(np.argmax(probs)))


def action_head_backward(h, W_a, b_a, upstream) -> dict[str, np.ndarray]:
    """Gradients of ``upstream . logits``."""
    g = np.asarray(upstream, dtype=float)
    return {"h": np.asarray(W_a, dtype=float).T @ g, "W_a": np.outer(g, h), "b_a": g.copy()}


# ---------------------------------------------------------------- recurrent cells


@dataclass
class GRUParams:
    W: np.ndarray  # (3H, X) rows ordered z, r, n
    U: np.ndarray  # (3H, H)
    b: np.ndarray  # (3H,)
    c: np.ndarray  # (3H,) recurrent bias; only the n block is used inside r * (...)

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_hidden: int) -> "GRUParams":
        k = 1.0 / math.sqrt(n_hidden)
        u = lambda *s: rng.uniform(-k, k, size=s)  # noqa: E731
        return cls(u(3 * n_hidden, n_in), u(3 * n_hidden, n_hidden), u(3 * n_hidden), u(3 * n_hidden))


def gru_cell(x, h, p: GRUParams) -> np.ndarray:
    H = h.shape[0]
    if p.W.shape[1] != x.shape[0] or p.U.shape != (3 * H, H):
        raise DimensionMismatch("gru", f"input {x.shape[0]} vs W {p.W.shape}, hidden {H} vs U {p.U.shape}")
    wx = p.W @ x + p.b
    uh = p.U @ h + p.c
    z = sigmoid(wx[:H] + uh[:H])
    r = sigmoid(wx[H : 2 * H] + uh[H : 2 * H])
    n = np.tanh(wx[2 * H :] + r * uh[2 * H :])
    return (1.0 - z) * n + z * h


@dataclass
class LSTMParams:
    W: np.ndarray  # (4H, X) rows ordered i, f, g, o
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_hidden: int) -> "LSTMParams":
        k = 1.0 / math.sqrt(n_hidden)
        return cls(
            rng.uniform(-k, k, (4 * n_hidden, n_in)),
            rng.uniform(-k, k, (4 * n_hidden, n_hidden)),
            rng.uniform(-k, k, 4 * n_hidden),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[1]


def lstm_encode(words, p: LSTMParams, reverse: bool = False) -> np.ndarray:
    """All hidden states of an LSTM run over ``words`` (T, X); returned in input order."""
    W = np.atleast_2d(np.asarray(words, dtype=float))
    if W.shape[1] != p.W.shape[1]:
        raise DimensionMismatch("lstm", f"word dim {W.shape[1]} vs W {p.W.shape}")
    H = p.hidden
    h = np.zeros(H)
    c = np.zeros(H)
    order = range(len(W) - 1, -1, -1) if reverse else range(len(W))
    out = np.zeros((len(W), H))
    for t in order:
        a = p.W @ W[t] + p.U @ h + p.b
        i, f, g, o = sigmoid(a[:H]), sigmoid(a[H : 2 * H]), np.tanh(a[2 * H : 3 * H]), sigmoid(a[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def bilstm_encode(words, fwd: LSTMParams, bwd: LSTMParams) -> np.ndarray:
    return np.concatenate([lstm_encode(words, fwd), lstm_encode(words, bwd, reverse=True)], axis=1)


Cell = Callable[[np.ndarray, np.ndarray, object], np.ndarray]


# ---------------------------------------------------------------- agents


@dataclass
class Seq2SeqParams:
    dims: ModelDims
    encoder: LSTMParams
    gru: GRUParams
    W_a: np.ndarray
    b_a: np.ndarray

    @classmethod
    def init(cls, dims: ModelDims = ModelDims(), seed: int = 0) -> "Seq2SeqParams":
        rng = np.random.default_rng(seed)
        n_in = dims.visual + dims.depth * dims.depth_cells + dims.instruction
        k = 1.0 / math.sqrt(dims.hidden)
        return cls(
            dims,
            LSTMParams.init(rng, dims.word, dims.instruction),
            GRUParams.init(rng, n_in, dims.hidden),
            rng.uniform(-k, k, (N_ACTIONS, dims.hidden)),
            rng.uniform(-k, k, N_ACTIONS),
        )

    def encode_instruction(self, words) -> np.ndarray:
        return lstm_encode(words, self.encoder)

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.dims.hidden)


def _depth_concat(depth: np.ndarray, cells: int, stage: str) -> np.ndarray:
    if depth.shape[0] != cells:
        raise DimensionMismatch(stage, f"expected {cells} depth cells, got {depth.shape[0]}")
    return depth.reshape(-1)


def seq2seq_step(features: FeatureSet, state: np.ndarray, params: Seq2SeqParams, cell: Cell = gru_cell):
    """One step of the baseline agent; returns ``(probs, next_state)``.

    Input to the recurrent cell is ``[mean-pooled visual, concatenated depth, final instruction state]``.
    """
    d = params.dims
    v_bar = mean_pool(features.visual)
    d_bar = _depth_concat(features.depth, d.depth_cells, "seq2seq depth")
    s = features.instruction[-1]
    x = np.concatenate([v_bar, d_bar, s])
    try:
        h = cell(x, state, params.gru)
    except DimensionMismatch as exc:
        raise DimensionMismatch("seq2seq recurrent cell", str(exc)) from None
    _, probs, _ = action_head(h, params.W_a, params.b_a)
    return probs, h


@dataclass
class CMAParams:
    dims: ModelDims
    encoder_fwd: LSTMParams
    encoder_bwd: LSTMParams
    action_embedding: np.ndarray  # (N_ACTIONS + 1, action_embedding); last row = start token
    gru_attn: GRUParams
    gru_action: GRUParams
    W_K_instruction: np.ndarray  # (hidden, instruction)
    W_K_visual: np.ndarray  # (instruction, visual)
    W_K_depth: np.ndarray  # (instruction, depth)
    W_a: np.ndarray
    b_a: np.ndarray

    @classmethod
    def init(cls, dims: ModelDims = ModelDims(), seed: int = 0) -> "CMAParams":
        if dims.instruction % 2:
            raise DimensionMismatch("cma init", "instruction dim must be even (two LSTM directions)")
        rng = np.random.default_rng(seed)
        half = dims.instruction // 2
        n_attn = dims.visual + dims.depth * dims.depth_cells + dims.action_embedding
        n_act = dims.instruction + dims.visual + dims.depth + dims.action_embedding + dims.hidden
        k = 1.0 / math.sqrt(dims.hidden)
        return cls(
            dims,
            LSTMParams.init(rng, dims.word, half),
            LSTMParams.init(rng, dims.word, half),
            rng.normal(0.0, 1.0, (N_ACTIONS + 1, dims.action_embedding)),
            GRUParams.init(rng, n_attn, dims.hidden),
            GRUParams.init(rng, n_act, dims.hidden),
            rng.normal(0.0, k, (dims.hidden, dims.instruction)),
            rng.normal(0.0, 1.0 / math.sqrt(dims.instruction), (dims.instruction, dims.visual)),
            rng.normal(0.0, 1.0 / math.sqrt(dims.instruction), (dims.instruction, dims.depth)),
            rng.uniform(-k, k, (N_ACTIONS, dims.hidden)),
            rng.uniform(-k, k, N_ACTIONS),
        )

    def encode_instruction(self, words) -> np.ndarray:
        return bilstm_encode(words, self.encoder_fwd, self.encoder_bwd)

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.dims.hidden), np.zeros(self.dims.hidden)


@dataclass(frozen=True)
class CMATrace:
    """Intermediate values of one cross-modal step (for inspection and tests)."""

    s_hat: np.ndarray
    v_hat: np.ndarray
    d_hat: np.ndarray
    h_attn: np.ndarray
    h_action: np.ndarray
    probs: np.ndarray


def cma_trace(
    features: FeatureSet,
    prev_action: Action | None,
    states: tuple[np.ndarray, np.ndarray],
    params: CMAParams,
    cell: Cell = gru_cell,
) -> CMATrace:
    d = params.dims
    h_attn_prev, h_a_prev = states
    a_idx = START_TOKEN if prev_action is None else int(prev_action)
    a_emb = params.action_embedding[a_idx]
    v_bar = mean_pool(features.visual)
    d_bar = _depth_concat(features.depth, d.depth_cells, "cma depth")

    def run(stage, fn, *args):
        try:
            return fn(*args)
        except DimensionMismatch as exc:
            raise DimensionMismatch(stage, str(exc)) from None

    h_attn = run("cma visual recurrent cell", cell, np.concatenate([v_bar, d_bar, a_emb]), h_attn_prev, params.gru_attn)
    s_hat = run("cma instruction attention", attn, features.instruction, h_attn, params.W_K_instruction)
    v_hat = run("cma visual attention", attn, features.visual, s_hat, params.W_K_visual)
    d_hat = run("cma depth attention", attn, features.depth, s_hat, params.W_K_depth)
    x = np.concatenate([s_hat, v_hat, d_hat, a_emb, h_attn])
    h_a = run("cma action recurrent cell", cell, x, h_a_prev, params.gru_action)
    _, probs, _ = run("cma action head", action_head, h_a, params.W_a, params.b_a)
    return CMATrace(s_hat, v_hat, d_hat, h_attn, h_a, probs)


def cma_step(features, prev_action, states, params: CMAParams, cell: Cell = gru_cell):
    """One step of the cross-modal attention agent; returns ``(probs, (h_attn, h_action))``."""
    tr = cma_trace(features, prev_action, states, params, cell)
    return tr.probs, (tr.h_attn, tr.h_action)


# ---------------------------------------------------------------- gradient checking


class DifferentiableOp(Protocol):
    def forward(self, values: Mapping[str, np.ndarray]) -> np.ndarray: ...

    def backward(self, values: Mapping[str, np.ndarray], upstream: np.ndarray) -> dict[str, np.ndarray]: ...


class AttnOp:
    def forward(self, v):
        return attn(v["inputs"], v["q"], v["W_K"])

    def backward(self, v, upstream):
        return attn_backward(v["inputs"], v["q"], v["W_K"], upstream)


class ActionHeadOp:
    """The linear part of the head (logits)."""

    def forward(self, v):
        return action_head(v["h"], v["W_a"], v["b_a"])[0]

    def backward(self, v, upstream):
        return action_head_backward(v["h"], v["W_a"], v["b_a"], upstream)


ATTN = AttnOp()
ACTION_HEAD = ActionHeadOp()


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)


def grad_check(
    op: DifferentiableOp,
    params: Mapping[str, np.ndarray],
    inputs: Mapping[str, np.ndarray] | None = None,
    epsilon: float = 1e-5,
    seed: int = 0,
) -> GradCheckResult:
    """Central finite differences against ``op.backward`` for a random projection of the output.

    Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    values = {k: np.array(v, dtype=float) for k, v in {**params, **(inputs or {})}.items()}
    out = np.asarray(op.forward(values), dtype=float)
    upstream = np.random.default_rng(seed).normal(size=out.shape)
    analytic = op.backward(values, upstream)
    per = {}
    for name, arr in values.items():
        grad = np.asarray(analytic.get(name, np.zeros_like(arr)), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"analytic gradient of {name} is not finite")
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(np.sum(upstream * op.forward(values)))
            flat[i] = orig - epsilon
            fm = float(np.sum(upstream * op.forward(values)))
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * epsilon)
        if not np.all(np.isfinite(numeric)):
            raise NonFiniteGradient(f"numeric gradient of {name} is not finite")
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-8)
        per[name] = float(np.max(np.abs(grad - numeric) / denom)) if arr.size else 0.0
    return GradCheckResult(max(per.values(), default=0.0), per)


# ---------------------------------------------------------------- parameter files


def _flatten(obj, prefix: str = ""):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, np.ndarray):
            yield prefix + f.name, value
        elif isinstance(value, (GRUParams, LSTMParams)):
            yield from _flatten(value, f"{prefix}{f.name}.")


def save_params(params: Seq2SeqParams | CMAParams, path) -> None:
    """Text tensors: a ``model``/``dims`` config header, then ``tensor name d0 d1 ...`` plus one value per line."""
    lines = [f"model {type(params).__name__}", "dims " + " ".join(f"{f.name}={getattr(params.dims, f.name)}" for f in fields(params.dims))]
    for name, arr in _flatten(params):
        lines.append(" ".join(["tensor", name, *map(str, arr.shape)]))
        lines.extend(repr(float(v)) for v in arr.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> Seq2SeqParams | CMAParams:
    """Inverse of ``save_params``; shapes are checked against a fresh init for the declared dims."""
    path = str(path)
    rows = Path(path).read_text().splitlines()
    kinds = {"Seq2SeqParams": Seq2SeqParams, "CMAParams": CMAParams}
    head = rows[0].split() if rows else []
    if len(rows) < 2 or len(head) != 2 or head[0] != "model" or head[1] not in kinds:
        raise ParseError("expected 'model Seq2SeqParams|CMAParams'", 1, path)
    try:
        kw = dict(item.split("=") for item in rows[1].split()[1:])
        dims = ModelDims(**{k: int(v) for k, v in kw.items()})
    except (ValueError, TypeError) as exc:
        raise ParseError(f"bad dims line: {exc}", 2, path) from None
    params = kinds[head[1]].init(dims)
    slots = dict(_flatten(params))
    seen, i = set(), 2
    while i < len(rows):
        head = rows[i].split()
        if not head or head[0] != "tensor" or len(head) < 2:
            raise ParseError("expected 'tensor name shape...'", i + 1, path)
        name = head[1]
        if name not in slots:
            raise ParseError(f"unknown tensor {name}", i + 1, path)
        shape = tuple(int(d) for d in head[2:])
        if shape != slots[name].shape:
            raise DimensionMismatch(f"load {name}", f"file {shape} vs dims {slots[name].shape}")
        n = int(np.prod(shape))
        try:
            values = np.array([float(v) for v in rows[i + 1 : i + 1 + n]])
        except ValueError:
            raise ParseError(f"non-numeric value in {name}", i + 2, path) from None
        if len(values) != n:
            raise ParseError(f"{name} truncated", len(rows), path)
        slots[name][...] = values.reshape(shape)
        seen.add(name)
        i += 1 + n
    if missing := set(slots) - seen:
        raise ParseError(f"missing tensors {sorted(missing)}", len(rows), path)
    return params
