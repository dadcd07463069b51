"""Attention-based GRU encoder-decoder with a direction head and a gait head.

Everything is plain numpy with hand-written backpropagation through time.
Batches are arrays of shape (B, T, input_dim); a single profile is the
B = 1 case.

Data flow for one batch::

    u      = x W_p^T + b_p                       (B, T, P)  input projection
    h_x    = BiGRU(u)                            (B, T, 2H) top-layer states
    s^0_l  = fwd_l[T] + bwd_l[T]                 per-layer decoder init
    for n, head in ((1, direction), (2, gait)):
        w^n = softmax_t(v . tanh(A s^{n-1}_top + E h_x^t))
        c^n = sum_t w^n_t h_x^t
        s^n = GRU_dec(s^{n-1}, c^n)
        logits_n = head(s^n_top)
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import LabelError, LengthError, NumericError, ParameterError, StateError


@dataclass
class ModelConfig:
    input_dim: int = 768
    projected_dim: int = 256
    hidden_dim: int = 1024
    n_layers: int = 3
    n_directions_out: int = 8
    n_subjects_out: int = 8
    dropout_rate: float = 0.2
    noise_std_train: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        for f in ("input_dim", "projected_dim", "hidden_dim", "n_layers", "n_subjects_out"):
            if getattr(self, f) < 1:
                raise ParameterError(f"{f} must be >= 1")
        if self.n_directions_out != 8:
            raise ParameterError("direction head is fixed at 8 compass directions")
        if not 0 <= self.dropout_rate < 1:
            raise ParameterError("dropout_rate must be in [0, 1)")
        if self.noise_std_train < 0:
            raise ParameterError("noise_std_train must be nonnegative")

    @property
    def attention_dim(self) -> int:
        return self.hidden_dim

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    H, P, A = cfg.hidden_dim, cfg.projected_dim, cfg.attention_dim
    shapes = {"proj.W": (P, cfg.input_dim), "proj.b": (P,)}
    for l in range(cfg.n_layers):
        n_in = P if l == 0 else 2 * H
        for d in ("fwd", "bwd"):
            shapes[f"enc.{l}.{d}.W"] = (3 * H, n_in)
            shapes[f"enc.{l}.{d}.U"] = (3 * H, H)
            shapes[f"enc.{l}.{d}.b"] = (3 * H,)
    for l in range(cfg.n_layers):
        n_in = 2 * H if l == 0 else H
        shapes[f"dec.{l}.W"] = (3 * H, n_in)
        shapes[f"dec.{l}.U"] = (3 * H, H)
        shapes[f"dec.{l}.b"] = (3 * H,)
    shapes["attn.W_dec"] = (A, H)
    shapes["attn.W_enc"] = (A, 2 * H)
    shapes["attn.v"] = (A,)
    shapes["head_dir.W"] = (cfg.n_directions_out, H)
    shapes["head_dir.b"] = (cfg.n_directions_out,)
    shapes["head_gait.W"] = (cfg.n_subjects_out, H)
    shapes["head_gait.b"] = (cfg.n_subjects_out,)
    return shapes


class ModelParams(dict):
    """Named parameter tensors (a dict of arrays) checked against a ModelConfig."""

    def __init__(self, cfg: ModelConfig, tensors: dict | None = None):
        super().__init__(tensors or {})
        self.cfg = cfg

    @classmethod
    def initialize(cls, cfg: ModelConfig, dtype=np.float64, seed: int | None = None) -> "ModelParams":
        rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
        params = cls(cfg)
        for name, shape in expected_shapes(cfg).items():
            fan_in = shape[1] if len(shape) == 2 else cfg.hidden_dim
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            elif name == "proj.W" or name.startswith("head") or name.startswith("attn.W"):
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-bound, bound, shape).astype(dtype)
            else:
                bound = 1.0 / np.sqrt(max(fan_in, cfg.hidden_dim))
                params[name] = rng.uniform(-bound, bound, shape).astype(dtype)
        return params

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.astype(dtype) for k, v in self.items()})

    def check(self):
        want = expected_shapes(self.cfg)
        if set(want) != set(self):
            raise ParameterError(f"parameter names differ: {sorted(set(want) ^ set(self))}")
        for k, shape in want.items():
            if self[k].shape != shape:
                raise ParameterError(f"{k}: shape {self[k].shape}, expected {shape}")
            if not np.all(np.isfinite(self[k])):
                raise NumericError(f"{k} has non-finite entries")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    s = x - x.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


# --- gated recurrent cell -------------------------------------------------


def gated_cell_step(W, U, b, h_prev, x, cache=False):
    """One GRU update ``h = (1 - z) * h_prev + z * n``.

    ``z`` (update) and ``r`` (reset) are logistic gates and the candidate is
    ``n = tanh(W_n x + r * (U_n h_prev) + b_n)``. Gate blocks are stacked
    in the order z, r, n along the first axis of ``W``, ``U`` and ``b``.
    """
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h_prev))):
        raise NumericError("non-finite input to recurrent cell")
    xw = x @ W.T + b
    return _cell_from_projection(U, h_prev, xw, cache)


def _cell_from_projection(U, h_prev, xw, cache=False):
    H = h_prev.shape[-1]
    hu = h_prev @ U.T
    z = sigmoid(xw[..., :H] + hu[..., :H])
    r = sigmoid(xw[..., H:2 * H] + hu[..., H:2 * H])
    n = np.tanh(xw[..., 2 * H:] + r * hu[..., 2 * H:])
    h = (1.0 - z) * h_prev + z * n
    if cache:
        return h, (h_prev, z, r, n, hu[..., 2 * H:])
    return h


def _cell_backward(U, cache, dh):
    """Gradients w.r.t. the stacked pre-activations and the previous state.

    Returns (d_xw, d_hu, dh_prev) where d_xw feeds W/b/x and d_hu feeds U.
    """
    h_prev, z, r, n, hu_n = cache
    dn = dh * z
    dz = dh * (n - h_prev)
    dan = dn * (1.0 - n * n)
    daz = dz * z * (1.0 - z)
    dar = dan * hu_n * r * (1.0 - r)
    d_xw = np.concatenate([daz, dar, dan], axis=-1)
    d_hu = np.concatenate([daz, dar, dan * r], axis=-1)
    dh_prev = dh * (1.0 - z) + d_hu @ U
    return d_xw, d_hu, dh_prev


def gated_cell_backward(W, U, b, x, cache, dh):
    """Parameter and input gradients of one ``gated_cell_step``."""
    d_xw, d_hu, dh_prev = _cell_backward(U, cache, dh)
    h_prev = cache[0]
    grads = {
        "W": d_xw.reshape(-1, d_xw.shape[-1]).T @ x.reshape(-1, x.shape[-1]),
        "U": d_hu.reshape(-1, d_hu.shape[-1]).T @ h_prev.reshape(-1, h_prev.shape[-1]),
        "b": d_xw.reshape(-1, d_xw.shape[-1]).sum(axis=0),
    }
    return grads, d_xw @ W, dh_prev


def _run_direction(params, prefix, inputs, reverse):
    W, U, b = params[prefix + ".W"], params[prefix + ".U"], params[prefix + ".b"]
    B, T, _ = inputs.shape
    H = U.shape[1]
    xw = inputs @ W.T + b
    states = np.empty((B, T, H), dtype=inputs.dtype)
    caches = [None] * T
    h = np.zeros((B, H), dtype=inputs.dtype)
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        h, caches[t] = _cell_from_projection(U, h, xw[:, t], cache=True)
        states[:, t] = h
    return states, caches


def _backprop_direction(params, prefix, inputs, caches, d_states, reverse, grads):
    """BPTT for one direction; ``d_states`` (B, T, H) holds the external grads."""
    U = params[prefix + ".U"]
    B, T, H = d_states.shape
    d_xw = np.empty((B, T, 3 * H), dtype=d_states.dtype)
    d_hu = np.empty_like(d_xw)
    h_prev = np.empty((B, T, H), dtype=d_states.dtype)
    carry = np.zeros((B, H), dtype=d_states.dtype)
    for t in (range(T) if reverse else range(T - 1, -1, -1)):
        d_xw[:, t], d_hu[:, t], carry = _cell_backward(U, caches[t], d_states[:, t] + carry)
        h_prev[:, t] = caches[t][0]
    flat = d_xw.reshape(-1, 3 * H)
    grads[prefix + ".W"] += flat.T @ inputs.reshape(-1, inputs.shape[-1])
    grads[prefix + ".U"] += d_hu.reshape(-1, 3 * H).T @ h_prev.reshape(-1, H)
    grads[prefix + ".b"] += flat.sum(axis=0)
    return d_xw @ params[prefix + ".W"]


# --- attention --------------------------------------------------------------


def attention_step(params, h_dec_prev, h_x, enc_proj=None, cache=False):
    """Additive attention of one decoder query over all encoder states.

    ``score_t = v . tanh(W_dec h_dec_prev + W_enc h_x^t)``; returns the
    softmax weights (..., T) and the context ``sum_t w_t h_x^t``.
    """
    if enc_proj is None:
        enc_proj = h_x @ params["attn.W_enc"].T
    pre = np.tanh(enc_proj + (h_dec_prev @ params["attn.W_dec"].T)[..., None, :])
    score = pre @ params["attn.v"]
    w = softmax(score, axis=-1)
    c = np.einsum("...t,...tk->...k", w, h_x)
    if cache:
        return w, c, (h_dec_prev, pre, w)
    return w, c


def _attention_backward(params, h_x, cache, dc, grads):
    q, pre, w = cache
    dw = np.einsum("btk,bk->bt", h_x, dc)
    dh_x = w[:, :, None] * dc[:, None, :]
    dscore = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
    grads["attn.v"] += np.einsum("bt,bta->a", dscore, pre)
    da = dscore[:, :, None] * params["attn.v"] * (1.0 - pre * pre)
    grads["attn.W_enc"] += np.einsum("bta,btk->ak", da, h_x)
    dh_x += da @ params["attn.W_enc"]
    dq_proj = da.sum(axis=1)
    grads["attn.W_dec"] += dq_proj.T @ q
    return dh_x, dq_proj @ params["attn.W_dec"]


# --- full model -------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Everything a backward pass needs, plus the outputs worth inspecting."""

    x: np.ndarray
    enc_inputs: list
    enc_states: list  # per layer: (fwd (B,T,H), bwd (B,T,H))
    enc_caches: list
    h_x: np.ndarray
    dec_states: list  # step n = 0, 1, 2: list of per-layer (B,H)
    dec_inputs: list  # step n = 1, 2: list of per-layer inputs
    dec_caches: list
    attn_caches: list
    head_inputs: list
    masks: dict = field(default_factory=dict)
    weights: np.ndarray | None = None  # (B, 2, T)
    contexts: np.ndarray | None = None  # (B, 2, 2H)
    logits_dir: np.ndarray | None = None
    logits_gait: np.ndarray | None = None

    @property
    def prob_dir(self):
        return softmax(self.logits_dir)

    @property
    def prob_gait(self):
        return softmax(self.logits_gait)


def _dropout(rng, shape, rate, dtype):
    if rng is None or rate <= 0:
        return None
    return (rng.random(shape) >= rate).astype(dtype) / (1.0 - rate)


def encode(params: ModelParams, x: np.ndarray, rng=None, trace: dict | None = None):
    """Bidirectional multi-layer GRU over the projected inputs.

    ``x`` is (B, T, input_dim) or (T, input_dim). Returns the top-layer
    states (B, T, 2H) and, per layer, the (forward, backward) state arrays.
    """
    cfg = params.cfg
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1] < 2:
        raise LengthError("sequences need at least two time steps")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite profile values")
    rate = cfg.dropout_rate
    inputs = x @ params["proj.W"].T + params["proj.b"]
    masks = {}
    enc_inputs, enc_states, enc_caches = [], [], []
    for l in range(cfg.n_layers):
        m = _dropout(rng, inputs.shape, rate, inputs.dtype)
        if m is not None:
            masks[f"enc_in.{l}"] = m
            inputs = inputs * m
        enc_inputs.append(inputs)
        fwd, cf = _run_direction(params, f"enc.{l}.fwd", inputs, reverse=False)
        bwd, cb = _run_direction(params, f"enc.{l}.bwd", inputs, reverse=True)
        enc_states.append((fwd, bwd))
        enc_caches.append((cf, cb))
        inputs = np.concatenate([fwd, bwd], axis=-1)
    if trace is not None:
        trace.update(enc_inputs=enc_inputs, enc_caches=enc_caches, masks=masks)
    h_x = inputs[0] if single else inputs
    return h_x, enc_states


def forward(params: ModelParams, x: np.ndarray, rng=None) -> ForwardTrace:
    """Full forward pass; pass a Generator as ``rng`` to enable dropout."""
    cfg = params.cfg
    if x.ndim == 2:
        x = x[None]
    parts: dict = {}
    h_x, enc_states = encode(params, x, rng, parts)
    masks = parts["masks"]
    rate = cfg.dropout_rate
    T = h_x.shape[1]
    enc_proj = h_x @ params["attn.W_enc"].T

    state = [fwd[:, T - 1] + bwd[:, T - 1] for fwd, bwd in enc_states]
    dec_states, dec_inputs, dec_caches, attn_caches, head_inputs = [state], [], [], [], []
    weights, contexts, logits = [], [], []
    for n, head in ((1, "head_dir"), (2, "head_gait")):
        w, c, ac = attention_step(params, state[-1], h_x, enc_proj, cache=True)
        weights.append(w)
        contexts.append(c)
        attn_caches.append(ac)
        new_state, step_inputs, step_caches = [], [], []
        inp = c
        for l in range(cfg.n_layers):
            if l > 0:
                m = _dropout(rng, inp.shape, rate, inp.dtype)
                if m is not None:
                    masks[f"dec_in.{n}.{l}"] = m
                    inp = inp * m
            step_inputs.append(inp)
            xw = inp @ params[f"dec.{l}.W"].T + params[f"dec.{l}.b"]
            h, cache = _cell_from_projection(params[f"dec.{l}.U"], state[l], xw, cache=True)
            new_state.append(h)
            step_caches.append(cache)
            inp = h
        m = _dropout(rng, inp.shape, rate, inp.dtype)
        if m is not None:
            masks[f"head.{n}"] = m
            inp = inp * m
        head_inputs.append(inp)
        logits.append(inp @ params[head + ".W"].T + params[head + ".b"])
        dec_states.append(new_state)
        dec_inputs.append(step_inputs)
        dec_caches.append(step_caches)
        state = new_state

    return ForwardTrace(
        x=x, enc_inputs=parts["enc_inputs"], enc_states=enc_states, enc_caches=parts["enc_caches"],
        h_x=h_x, dec_states=dec_states, dec_inputs=dec_inputs, dec_caches=dec_caches,
        attn_caches=attn_caches, head_inputs=head_inputs, masks=masks,
        weights=np.stack(weights, axis=1), contexts=np.stack(contexts, axis=1),
        logits_dir=logits[0], logits_gait=logits[1])


def cross_entropy(logits, labels):
    """Per-sample cross-entropy from a stable log-softmax."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[-1]:
        raise LabelError(f"labels must lie in [0, {logits.shape[-1]})")
    return -np.take_along_axis(log_softmax(logits), labels[..., None], axis=-1)[..., 0]


def loss(logits_dir, logits_gait, dir_labels, gait_labels, task_weights=(1.0, 1.0)) -> float:
    """Batch mean of the summed direction and gait cross-entropies."""
    ce_d = cross_entropy(np.atleast_2d(logits_dir), np.atleast_1d(dir_labels))
    ce_g = cross_entropy(np.atleast_2d(logits_gait), np.atleast_1d(gait_labels))
    return float(np.mean(task_weights[0] * ce_d + task_weights[1] * ce_g))


def logit_gradient(logits, labels, scale=1.0):
    """d CE / d logits = softmax(logits) - onehot(labels), times ``scale``."""
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g * scale


def backward(params: ModelParams, trace: ForwardTrace | None, dir_labels, gait_labels,
             task_weights=(1.0, 1.0)) -> dict[str, np.ndarray]:
    """Exact gradients of ``loss`` for the batch that produced ``trace``."""
    if trace is None or trace.logits_dir is None:
        raise StateError("backward needs the trace of a completed forward pass")
    cfg = params.cfg
    dir_labels = np.atleast_1d(dir_labels)
    gait_labels = np.atleast_1d(gait_labels)
    cross_entropy(trace.logits_dir, dir_labels)
    cross_entropy(trace.logits_gait, gait_labels)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    B = trace.x.shape[0]
    L = cfg.n_layers
    h_x = trace.h_x
    dh_x = np.zeros_like(h_x)

    d_logits = [logit_gradient(trace.logits_dir, dir_labels, task_weights[0] / B),
                logit_gradient(trace.logits_gait, gait_labels, task_weights[1] / B)]
    # d_state[l]: running gradient w.r.t. the decoder state of layer l at the current step
    d_state = [np.zeros((B, cfg.hidden_dim), dtype=h_x.dtype) for _ in range(L)]
    for idx in (1, 0):
        n = idx + 1
        head = ("head_dir", "head_gait")[idx]
        hin = trace.head_inputs[idx]
        grads[head + ".W"] += d_logits[idx].T @ hin
        grads[head + ".b"] += d_logits[idx].sum(axis=0)
        d_top = d_logits[idx] @ params[head + ".W"]
        if f"head.{n}" in trace.masks:
            d_top = d_top * trace.masks[f"head.{n}"]
        d_state[L - 1] = d_state[L - 1] + d_top
        d_inp = None
        for l in range(L - 1, -1, -1):
            dh = d_state[l] if d_inp is None else d_state[l] + d_inp
            d_xw, d_hu, dh_prev = _cell_backward(params[f"dec.{l}.U"], trace.dec_caches[idx][l], dh)
            grads[f"dec.{l}.W"] += d_xw.T @ trace.dec_inputs[idx][l]
            grads[f"dec.{l}.U"] += d_hu.T @ trace.dec_caches[idx][l][0]
            grads[f"dec.{l}.b"] += d_xw.sum(axis=0)
            d_inp = d_xw @ params[f"dec.{l}.W"]
            if l > 0 and f"dec_in.{n}.{l}" in trace.masks:
                d_inp = d_inp * trace.masks[f"dec_in.{n}.{l}"]
            d_state[l] = dh_prev
        # d_inp is now the gradient w.r.t. the context c^n
        dh_x_att, d_query = _attention_backward(params, h_x, trace.attn_caches[idx], d_inp, grads)
        dh_x += dh_x_att
        d_state[L - 1] = d_state[L - 1] + d_query

    T = h_x.shape[1]
    H = cfg.hidden_dim
    d_out = dh_x
    for l in range(L - 1, -1, -1):
        d_fwd = d_out[..., :H].copy()
        d_bwd = d_out[..., H:].copy()
        d_fwd[:, T - 1] += d_state[l]
        d_bwd[:, T - 1] += d_state[l]
        cf, cb = trace.enc_caches[l]
        inputs = trace.enc_inputs[l]
        d_in = _backprop_direction(params, f"enc.{l}.fwd", inputs, cf, d_fwd, False, grads)
        d_in += _backprop_direction(params, f"enc.{l}.bwd", inputs, cb, d_bwd, True, grads)
        if f"enc_in.{l}" in trace.masks:
            d_in = d_in * trace.masks[f"enc_in.{l}"]
        d_out = d_in
    x = trace.x
    grads["proj.W"] += d_out.reshape(-1, d_out.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    grads["proj.b"] += d_out.reshape(-1, d_out.shape[-1]).sum(axis=0)
    return grads


def predict(params: ModelParams, x: np.ndarray):
    """Labels and attention rows for one profile (T, D) or a batch (B, T, D).

    Ties in the head probabilities go to the lowest class index.
    """
    trace = forward(params, x)
    d = np.argmax(trace.logits_dir, axis=-1)
    g = np.argmax(trace.logits_gait, axis=-1)
    w1, w2 = trace.weights[:, 0], trace.weights[:, 1]
    if x.ndim == 2:
        return int(d[0]), int(g[0]), w1[0], w2[0]
    return d, g, w1, w2
