"""The nine LSTM / CNN / transformer configurations.

All forward functions take batched input shaped (batch, n, 36) as a
:class:`~lanecast.nn.Tensor`; the single-sample forms in the tests simply
use batch 1. Parameters live in flat ordered dicts of Tensors so that
optimisers, checkpoints and the gradient checker can treat every
architecture alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndivisibleChannels, ShapeMismatch, TooManyHeads
from .features import N_FEATURES
from .nn import (
    BatchNormState,
    Tensor,
    add,
    batch_norm_time,
    concat,
    conv_time,
    dropout,
    layer_norm,
    linear,
    matmul,
    max_pool_time,
    mean,
    mul,
    relu,
    reshape,
    save_checkpoint,
    load_checkpoint,
    sigmoid,
    softmax,
    tanh,
    transpose,
)

N_CLASSES = 3


# -- configurations ----------------------------------------------------------

@dataclass(frozen=True)
class LstmNetConfig:
    name: str
    layer_dims: tuple[int, ...]
    lr: float = 1e-3
    weight_decay: float = 0.0


@dataclass(frozen=True)
class CnnConfig:
    name: str
    n_ic1: int
    n_oc1: int
    n_oc2: int
    p_n: int
    k_n: int
    batch_norm: bool
    n_ff1: int
    n_ff2: int
    ff_dropout: float
    lr: float
    weight_decay: float = 0.0

    def __post_init__(self):
        if N_FEATURES % self.n_ic1:
            raise IndivisibleChannels(f"{N_FEATURES} features do not split into {self.n_ic1} channels")


@dataclass(frozen=True)
class TnConfig:
    name: str
    encoder_layers: int
    n_h: int
    d_emb: int
    w_ff: int
    weight_decay: float
    lr: float
    pe_dropout: float = 0.1


CONFIGS = {
    "lstm1": LstmNetConfig("lstm1", (2, 2, 1)),
    "lstm2": LstmNetConfig("lstm2", (2, 2)),
    "lstm3": LstmNetConfig("lstm3", (2, 1)),
    "cnn1": CnnConfig("cnn1", 9, 12, 18, 2, 5, True, 64, 32, 0.5, 1e-4),
    "cnn2": CnnConfig("cnn2", 1, 12, 18, 2, 3, False, 256, 128, 0.5, 1e-4),
    "cnn3": CnnConfig("cnn3", 1, 18, 6, 2, 5, True, 64, 32, 0.5, 1e-4),
    "tn1": TnConfig("tn1", 1, 16, 16, 16, 0.004, 0.0007),
    "tn2": TnConfig("tn2", 1, 16, 128, 64, 0.004, 0.0007),
    "tn3": TnConfig("tn3", 4, 16, 128, 64, 0.004, 0.0007),
}


def arch_of(cfg) -> str:
    if isinstance(cfg, LstmNetConfig):
        return "lstm"
    if isinstance(cfg, CnnConfig):
        return "cnn"
    if isinstance(cfg, TnConfig):
        return "tn"
    raise TypeError(f"unknown config {cfg!r}")


class _Init:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter factory."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def uniform(self, name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        t = Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True)
        self.params[name] = t
        return t

    def const(self, name, shape, value):
        t = Tensor(np.full(shape, float(value)), requires_grad=True)
        self.params[name] = t
        return t


# -- LSTM --------------------------------------------------------------------

GATES = ("f", "i", "c", "o")


@dataclass
class LstmCellParams:
    """``Wx[g]`` is (d_h, d_in), ``Wh[g]`` is (d_h, d_h), ``b[g]`` is (d_h,)
    for each gate g in forget, input, cell, output order."""

    Wx: dict
    Wh: dict
    b: dict

    @property
    def d_h(self) -> int:
        return self.Wh["f"].shape[0]

    @property
    def d_in(self) -> int:
        return self.Wx["f"].shape[1]


def lstm_cell_step(x_t, h_prev, s_prev, p: LstmCellParams):
    """One time step; returns ``(h_t, s_t)``."""
    if x_t.shape[-1] != p.d_in or h_prev.shape[-1] != p.d_h or s_prev.shape[-1] != p.d_h:
        raise ShapeMismatch("LSTM cell input/state sizes do not match its weights")

    def affine(g):
        return add(add(linear(x_t, p.Wx[g]), linear(h_prev, p.Wh[g])), p.b[g])

    f = sigmoid(affine("f"))
    i = sigmoid(affine("i"))
    c = tanh(affine("c"))
    o = sigmoid(affine("o"))
    s_t = add(mul(s_prev, f), mul(i, c))
    h_t = mul(o, tanh(s_t))
    return h_t, s_t


def lstm_layer_forward(X, p: LstmCellParams, single_output: bool):
    """Run the cell over every step of ``X`` (..., n, d_in) from zero state.

    Returns (..., n, d_h), or only the last output (..., d_h) when
    ``single_output``.
    """
    if X.shape[-1] != p.d_in:
        raise ShapeMismatch(f"LSTM layer expects {p.d_in} features, got {X.shape[-1]}")
    d_h = p.d_h
    n = X.shape[-2]
    lead = X.shape[:-2]
    # the input projections of all four gates for all steps in one product
    Wx = concat([p.Wx[g] for g in GATES], axis=0)
    Wh = concat([p.Wh[g] for g in GATES], axis=0)
    bias = concat([p.b[g] for g in GATES], axis=0)
    xproj = add(linear(X, Wx), bias)
    h = Tensor(np.zeros(lead + (d_h,), dtype=X.dtype))
    s = Tensor(np.zeros(lead + (d_h,), dtype=X.dtype))
    outs = []
    for t in range(n):
        z = add(xproj[..., t, :], linear(h, Wh))
        f = sigmoid(z[..., 0:d_h])
        i = sigmoid(z[..., d_h : 2 * d_h])
        c = tanh(z[..., 2 * d_h : 3 * d_h])
        o = sigmoid(z[..., 3 * d_h :])
        s = add(mul(s, f), mul(i, c))
        h = mul(o, tanh(s))
        if not single_output:
            outs.append(reshape(h, lead + (1, d_h)))
    if single_output:
        return h
    return concat(outs, axis=-2)


def lstm_cells(params: dict, cfg: LstmNetConfig) -> list[LstmCellParams]:
    return [
        LstmCellParams(
            Wx={g: params[f"lstm{k}.Wx_{g}"] for g in GATES},
            Wh={g: params[f"lstm{k}.Wh_{g}"] for g in GATES},
            b={g: params[f"lstm{k}.b_{g}"] for g in GATES},
        )
        for k in range(len(cfg.layer_dims))
    ]


def init_lstm(cfg: LstmNetConfig, seed: int, d_in: int = N_FEATURES) -> dict:
    init = _Init(seed)
    prev = d_in
    for k, d_h in enumerate(cfg.layer_dims):
        for g in GATES:
            init.uniform(f"lstm{k}.Wx_{g}", (d_h, prev), prev)
            init.uniform(f"lstm{k}.Wh_{g}", (d_h, d_h), d_h)
            init.uniform(f"lstm{k}.b_{g}", (d_h,), d_h)
        prev = d_h
    init.uniform("dense.W", (N_CLASSES, prev), prev)
    init.uniform("dense.b", (N_CLASSES,), prev)
    return init.params


def lstm_net_logits(X, cfg: LstmNetConfig, params: dict):
    cells = lstm_cells(params, cfg)
    h = X
    for k, cell in enumerate(cells):
        h = lstm_layer_forward(h, cell, single_output=(k == len(cells) - 1))
    return linear(h, params["dense.W"], params["dense.b"])


def lstm_net_forward(X, cfg: LstmNetConfig, params: dict):
    """Class probabilities (..., 3)."""
    return softmax(lstm_net_logits(X, cfg, params))


# -- CNN ---------------------------------------------------------------------

def cnn_reshape_input(X, cfg: CnnConfig):
    """(batch, n, 36) -> (batch, n_ic, n, 36 / n_ic).

    With nine channels each channel is one contiguous 4-column block: the
    ego block first, then one per neighbour role.
    """
    d = X.shape[-1]
    if d % cfg.n_ic1:
        raise IndivisibleChannels(f"{d} features do not split into {cfg.n_ic1} channels")
    w = d // cfg.n_ic1
    B, n = X.shape[0], X.shape[1]
    return transpose(reshape(X, (B, n, cfg.n_ic1, w)), (0, 2, 1, 3))


def cnn_temporal_length(n: int, cfg: CnnConfig) -> int:
    return (n // cfg.p_n) // cfg.p_n


def init_cnn(cfg: CnnConfig, seed: int, n_steps: int) -> dict:
    init = _Init(seed)
    w = N_FEATURES // cfg.n_ic1
    k = cfg.k_n
    init.uniform("conv1.K", (cfg.n_oc1, cfg.n_ic1, k, 1), cfg.n_ic1 * k)
    init.uniform("conv1.b", (cfg.n_oc1,), cfg.n_ic1 * k)
    if cfg.batch_norm:
        init.const("bn1.g", (cfg.n_oc1,), 1.0)
        init.const("bn1.b", (cfg.n_oc1,), 0.0)
    init.uniform("conv2.K", (cfg.n_oc2, cfg.n_oc1, k, 1), cfg.n_oc1 * k)
    init.uniform("conv2.b", (cfg.n_oc2,), cfg.n_oc1 * k)
    if cfg.batch_norm:
        init.const("bn2.g", (cfg.n_oc2,), 1.0)
        init.const("bn2.b", (cfg.n_oc2,), 0.0)
    flat = cfg.n_oc2 * cnn_temporal_length(n_steps, cfg) * w
    if flat == 0:
        raise ShapeMismatch(f"n={n_steps} too short for two pools of {cfg.p_n}")
    init.uniform("ff1.W", (cfg.n_ff1, flat), flat)
    init.uniform("ff1.b", (cfg.n_ff1,), flat)
    init.uniform("ff2.W", (cfg.n_ff2, cfg.n_ff1), cfg.n_ff1)
    init.uniform("ff2.b", (cfg.n_ff2,), cfg.n_ff1)
    init.uniform("out.W", (N_CLASSES, cfg.n_ff2), cfg.n_ff2)
    init.uniform("out.b", (N_CLASSES,), cfg.n_ff2)
    return init.params


def cnn_buffers(cfg: CnnConfig) -> dict:
    if not cfg.batch_norm:
        return {}
    return {"bn1": BatchNormState(cfg.n_oc1), "bn2": BatchNormState(cfg.n_oc2)}


def cnn_logits(X, cfg: CnnConfig, params: dict, buffers: dict, train: bool = False, rng=None):
    h = cnn_reshape_input(X, cfg)
    for k in (1, 2):
        h = conv_time(h, params[f"conv{k}.K"], params[f"conv{k}.b"])
        if cfg.batch_norm:
            h = batch_norm_time(h, params[f"bn{k}.g"], params[f"bn{k}.b"], buffers[f"bn{k}"], train)
        h = max_pool_time(relu(h), cfg.p_n)
    h = reshape(h, (h.shape[0], -1))
    h = relu(linear(h, params["ff1.W"], params["ff1.b"]))
    h = dropout(h, cfg.ff_dropout, train, rng)
    h = relu(linear(h, params["ff2.W"], params["ff2.b"]))
    return linear(h, params["out.W"], params["out.b"])


def cnn_forward(X, cfg: CnnConfig, params: dict, buffers: dict, train: bool = False, rng=None):
    """Class probabilities (batch, 3)."""
    return softmax(cnn_logits(X, cfg, params, buffers, train, rng))


# -- transformer ---------------------------------------------------------------

def positional_encoding(n: int, d_emb: int) -> np.ndarray:
    """Sinusoidal table with base 1000: for 1-indexed (i, j), odd j gives
    sin((i-1) / 1000^((j-1)/d_emb)) and even j gives cos((i-1) / 1000^((j-2)/d_emb))."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    col = np.arange(d_emb)
    expo = (col - (col % 2)) / d_emb
    angle = pos / np.power(1000.0, expo)[None, :]
    return np.where(col % 2 == 0, np.sin(angle), np.cos(angle))


def head_dims(d_emb: int, n_h: int) -> list[int]:
    """Equal heads of floor(d_emb / n_h); the last head absorbs the remainder."""
    if n_h < 1 or d_emb < n_h:
        raise TooManyHeads(f"cannot split d_emb={d_emb} into {n_h} heads")
    d_h = d_emb // n_h
    return [d_h] * (n_h - 1) + [d_emb - (n_h - 1) * d_h]


def _split_heads(t, dims):
    """(B, n, d_emb) -> list of (B, n, d_i), or one (B, h, n, d) when equal."""
    B, n, _ = t.shape
    if len(set(dims)) == 1:
        h, d = len(dims), dims[0]
        return transpose(reshape(t, (B, n, h, d)), (0, 2, 1, 3))
    cuts = np.cumsum([0] + dims)
    return [t[..., int(a) : int(b)] for a, b in zip(cuts[:-1], cuts[1:])]


def multi_head_attention(X, params: dict, cfg: TnConfig, prefix: str = "enc0", weights_out=None):
    """Multi-head self-attention (B, n, d_emb) -> (B, n, d_emb).

    The per-head projections W_{q,i} are stored stacked row-wise in one
    (d_emb, d_emb) matrix ``W_qh`` (same for k and v); head i owns rows
    ``sum(dims[:i])`` to ``sum(dims[:i+1])``. Each head is scaled by its own
    dimension. Attention weights are appended to ``weights_out`` if given.
    """
    dims = head_dims(cfg.d_emb, cfg.n_h)
    if X.shape[-1] != cfg.d_emb:
        raise ShapeMismatch(f"attention expects d_emb={cfg.d_emb}, got {X.shape[-1]}")
    Q = linear(X, params[f"{prefix}.W_Q"])
    K = linear(X, params[f"{prefix}.W_K"])
    V = linear(X, params[f"{prefix}.W_V"])
    qh = _split_heads(linear(Q, params[f"{prefix}.W_qh"]), dims)
    kh = _split_heads(linear(K, params[f"{prefix}.W_kh"]), dims)
    vh = _split_heads(linear(V, params[f"{prefix}.W_vh"]), dims)
    B, n = X.shape[0], X.shape[1]
    if isinstance(qh, Tensor):
        scores = mul(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dims[0]))
        w = softmax(scores)
        if weights_out is not None:
            weights_out.append(w.data)
        heads = transpose(matmul(w, vh), (0, 2, 1, 3))
        cat = reshape(heads, (B, n, cfg.d_emb))
    else:
        outs = []
        for q, k, v, d in zip(qh, kh, vh, dims):
            w = softmax(mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d)))
            if weights_out is not None:
                weights_out.append(w.data)
            outs.append(matmul(w, v))
        cat = concat(outs, axis=-1)
    return linear(cat, params[f"{prefix}.W_A"])


def encoder_forward(X, params: dict, cfg: TnConfig, prefix: str = "enc0", weights_out=None):
    """Norm(Norm(A + X) + FF(Norm(A + X)))."""
    A = multi_head_attention(X, params, cfg, prefix, weights_out)
    n1 = layer_norm(add(A, X), params[f"{prefix}.norm1.g"], params[f"{prefix}.norm1.b"])
    ff = linear(
        relu(linear(n1, params[f"{prefix}.ff1.W"], params[f"{prefix}.ff1.b"])),
        params[f"{prefix}.ff2.W"],
        params[f"{prefix}.ff2.b"],
    )
    return layer_norm(add(n1, ff), params[f"{prefix}.norm2.g"], params[f"{prefix}.norm2.b"])


def init_tn(cfg: TnConfig, seed: int, d_in: int = N_FEATURES) -> dict:
    init = _Init(seed)
    d = cfg.d_emb
    head_dims(d, cfg.n_h)
    init.uniform("emb.W", (d, d_in), d_in)
    init.uniform("emb.b", (d,), d_in)
    for layer in range(cfg.encoder_layers):
        p = f"enc{layer}"
        for name in ("W_Q", "W_K", "W_V", "W_qh", "W_kh", "W_vh", "W_A"):
            init.uniform(f"{p}.{name}", (d, d), d)
        init.const(f"{p}.norm1.g", (d,), 1.0)
        init.const(f"{p}.norm1.b", (d,), 0.0)
        init.uniform(f"{p}.ff1.W", (cfg.w_ff, d), d)
        init.uniform(f"{p}.ff1.b", (cfg.w_ff,), d)
        init.uniform(f"{p}.ff2.W", (d, cfg.w_ff), cfg.w_ff)
        init.uniform(f"{p}.ff2.b", (d,), cfg.w_ff)
        init.const(f"{p}.norm2.g", (d,), 1.0)
        init.const(f"{p}.norm2.b", (d,), 0.0)
    init.uniform("head.W", (N_CLASSES, d), d)
    init.uniform("head.b", (N_CLASSES,), d)
    return init.params


def tn_forward(X, cfg: TnConfig, params: dict, train: bool = False, rng=None,
               positional: bool = True, weights_out=None):
    """Raw class scores (batch, 3); the predicted class is their argmax."""
    n = X.shape[-2]
    h = linear(X, params["emb.W"], params["emb.b"])
    if positional:
        pe = Tensor(positional_encoding(n, cfg.d_emb).astype(X.dtype))
        h = add(h, dropout(pe, cfg.pe_dropout, train, rng))
    for layer in range(cfg.encoder_layers):
        h = encoder_forward(h, params, cfg, f"enc{layer}", weights_out)
    pooled = mean(h, axis=-2)
    return linear(pooled, params["head.W"], params["head.b"])


# -- uniform wrapper -----------------------------------------------------------

@dataclass
class Model:
    """A configuration plus its parameters and non-trainable buffers."""

    name: str
    config: object
    n_steps: int
    params: dict
    buffers: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def arch(self) -> str:
        return arch_of(self.config)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def logits(self, X, train: bool = False, rng=None):
        """Scores fed to the cross-entropy loss."""
        if not isinstance(X, Tensor):
            X = Tensor(np.asarray(X, dtype=self.dtype))
        if self.arch == "lstm":
            return lstm_net_logits(X, self.config, self.params)
        if self.arch == "cnn":
            return cnn_logits(X, self.config, self.params, self.buffers, train, rng)
        return tn_forward(X, self.config, self.params, train, rng)

    def output(self, X, train: bool = False, rng=None):
        """Probabilities for LSTM/CNN, raw scores for the transformer."""
        z = self.logits(X, train, rng)
        return z if self.arch == "tn" else softmax(z)

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        X = np.asarray(X)
        out = []
        for i in range(0, len(X), batch_size):
            out.append(self.logits(X[i : i + batch_size]).data.argmax(axis=-1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def astype(self, dtype) -> Model:
        for t in self.params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        for st in self.buffers.values():
            st.running_mean = st.running_mean.astype(dtype)
            st.running_var = st.running_var.astype(dtype)
        return self

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as named arrays (checkpoint order)."""
        out = {k: t.data for k, t in self.params.items()}
        for name, st in self.buffers.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for k, t in self.params.items():
            t.data = np.array(arrays[k], dtype=t.dtype).reshape(t.shape)
        for name, st in self.buffers.items():
            st.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=st.running_mean.dtype)
            st.running_var = np.array(arrays[f"{name}.running_var"], dtype=st.running_var.dtype)


def build_model(name: str, n_steps: int, seed: int = 0, dtype=np.float64) -> Model:
    cfg = CONFIGS[name]
    arch = arch_of(cfg)
    if arch == "lstm":
        params, buffers = init_lstm(cfg, seed), {}
    elif arch == "cnn":
        params, buffers = init_cnn(cfg, seed, n_steps), cnn_buffers(cfg)
    else:
        params, buffers = init_tn(cfg, seed), {}
    return Model(name, cfg, n_steps, params, buffers, seed).astype(dtype)


def save_model(model: Model, path, extra: dict | None = None):
    meta = {
        "architecture": model.arch,
        "config": model.name,
        "n_steps": model.n_steps,
        "seed": model.seed,
    }
    if extra:
        meta["extra"] = extra
    return save_checkpoint(path, model.state_arrays(), meta)


def load_model(path, dtype=np.float32) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns it with the manifest."""
    arrays, meta = load_checkpoint(path)
    model = build_model(meta["config"], meta["n_steps"], meta["seed"], dtype)
    model.load_state_arrays(arrays)
    return model, meta
