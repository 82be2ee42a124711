"""Base recurrent language model with explicit forward and backward passes.

Supports Elman (tanh) and LSTM cells, stacked layers, optional weight tying
between the embedding table and the output projection, and inverted dropout
on the embedding output and each layer's output. Recurrent connections are
never dropped: the state passed to the next timestep keeps the pre-dropout
activations. The hidden state starts at zero, is carried across sentence
boundaries, and truncated backprop cuts gradient flow at block boundaries
only.

Every backward formula here is hand-derived and checked against the
central-difference oracle in `kernels`; there is no autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

CELL_KINDS = ("elman", "lstm")


@dataclass
class HiddenState:
    """Per-layer recurrent state; arrays have shape (batch, D_h)."""

    h: list
    c: list | None = None

    @property
    def batch_size(self) -> int:
        return self.h[0].shape[0]

    def copy(self) -> "HiddenState":
        return HiddenState(
            [a.copy() for a in self.h],
            None if self.c is None else [a.copy() for a in self.c],
        )


@dataclass
class DropoutMasks:
    """Inverted-dropout masks, one per dropout site, reused for every
    timestep of one truncated-backprop block."""

    emb: np.ndarray
    layers: list


class LMParams:
    """Parameters of the base language model.

    The embedding table is stored as (V, D_e) and read by row lookup; the
    output projection is (V, D_h). With `tie_weights` the projection *is*
    the embedding array (same storage, requires D_e == D_h), so mutating one
    mutates the other and the tied storage is counted and trained once.
    """

    def __init__(self, embedding, cells, out_weight, out_bias, cell_kind, tie_weights):
        if cell_kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {cell_kind!r}, expected one of {CELL_KINDS}")
        self.embedding = embedding
        self.cells = cells
        self.out_bias = out_bias
        self.cell_kind = cell_kind
        self.tie_weights = bool(tie_weights)
        self._out_weight = None if self.tie_weights else out_weight

    @property
    def out_weight(self) -> np.ndarray:
        return self.embedding if self.tie_weights else self._out_weight

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def d_e(self) -> int:
        return self.embedding.shape[1]

    @property
    def d_h(self) -> int:
        return self.out_weight.shape[1]

    @property
    def layer_count(self) -> int:
        return len(self.cells)

    @property
    def dtype(self):
        return self.embedding.dtype

    def named_arrays(self) -> dict:
        """Ordered mapping of trainable storages (tied storage appears once)."""
        out = {"embedding": self.embedding}
        for i, cell in enumerate(self.cells):
            for key, arr in cell.items():
                out[f"cell{i}.{key}"] = arr
        if not self.tie_weights:
            out["out_weight"] = self._out_weight
        out["out_bias"] = self.out_bias
        return out

    def param_count(self) -> int:
        return sum(a.size for a in self.named_arrays().values())

    def copy(self) -> "LMParams":
        cells = [{k: v.copy() for k, v in cell.items()} for cell in self.cells]
        return LMParams(
            self.embedding.copy(),
            cells,
            None if self.tie_weights else self._out_weight.copy(),
            self.out_bias.copy(),
            self.cell_kind,
            self.tie_weights,
        )

    def replace_arrays(self, named: dict) -> "LMParams":
        """New LMParams with the same structure but the given storages."""
        cells = []
        for i, cell in enumerate(self.cells):
            cells.append({k: named[f"cell{i}.{k}"] for k in cell})
        return LMParams(
            named["embedding"],
            cells,
            None if self.tie_weights else named["out_weight"],
            named["out_bias"],
            self.cell_kind,
            self.tie_weights,
        )


def init_params(vocab_size, d_e, d_h, layers=1, cell_kind="lstm", tie_weights=False,
                seed=0, dtype=np.float32, init_scale=0.1) -> LMParams:
    """Uniform [-init_scale, init_scale] initialization from a seeded
    generator; the LSTM forget-gate bias block is then set to 1.0."""
    if cell_kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {cell_kind!r}, expected one of {CELL_KINDS}")
    if min(vocab_size, d_e, d_h, layers) < 1:
        raise ValueError(
            f"dimensions must be positive: V={vocab_size}, D_e={d_e}, D_h={d_h}, layers={layers}"
        )
    if tie_weights and d_e != d_h:
        raise ValueError(f"weight tying requires D_e == D_h, got {d_e} != {d_h}")
    rng = np.random.default_rng(seed)

    def uniform(*shape):
        return rng.uniform(-init_scale, init_scale, size=shape).astype(dtype)

    embedding = uniform(vocab_size, d_e)
    cells = []
    for layer in range(layers):
        d_in = d_e if layer == 0 else d_h
        if cell_kind == "lstm":
            bias = uniform(4 * d_h)
            bias[d_h:2 * d_h] = 1.0  # forget gate opens at init
            cells.append({"weight": uniform(4 * d_h, d_in + d_h), "bias": bias})
        else:
            cells.append({
                "w_xh": uniform(d_h, d_in),
                "w_hh": uniform(d_h, d_h),
                "bias": uniform(d_h),
            })
    out_weight = None if tie_weights else uniform(vocab_size, d_h)
    out_bias = uniform(vocab_size)
    return LMParams(embedding, cells, out_weight, out_bias, cell_kind, tie_weights)


def initial_state(params: LMParams, batch_size: int = 1) -> HiddenState:
    d_h = params.d_h
    zeros = lambda: np.zeros((batch_size, d_h), dtype=params.dtype)
    h = [zeros() for _ in range(params.layer_count)]
    c = [zeros() for _ in range(params.layer_count)] if params.cell_kind == "lstm" else None
    return HiddenState(h, c)


def sample_dropout_masks(params: LMParams, rate: float, batch_size: int, rng) -> DropoutMasks | None:
    """Fresh inverted-dropout masks for one block; None when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return None
    keep = 1.0 - rate

    def mask(dim):
        return (rng.random((batch_size, dim)) >= rate).astype(params.dtype) / keep

    return DropoutMasks(mask(params.d_e), [mask(params.d_h) for _ in range(params.layer_count)])


# ---------------------------------------------------------------------------
# Cell primitives (shared with the gate module's LSTM variant)

def lstm_cell_forward(weight, bias, x, h_prev, c_prev):
    d = h_prev.shape[1]
    z = np.concatenate([x, h_prev], axis=1)
    pre = z @ weight.T + bias
    i = kernels.sigmoid(pre[:, :d])
    f = kernels.sigmoid(pre[:, d:2 * d])
    g = np.tanh(pre[:, 2 * d:3 * d])
    o = kernels.sigmoid(pre[:, 3 * d:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (z, i, f, g, o, c_prev, tc)


def lstm_cell_backward(weight, cache, dh, dc_in):
    z, i, f, g, o, c_prev, tc = cache
    d = i.shape[1]
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dweight = dpre.T @ z
    dbias = dpre.sum(axis=0)
    dz = dpre @ weight
    d_in = z.shape[1] - d
    return dweight, dbias, dz[:, :d_in], dz[:, d_in:], dc * f


def elman_cell_forward(w_xh, w_hh, bias, x, h_prev):
    h = np.tanh(x @ w_xh.T + h_prev @ w_hh.T + bias)
    return h, (x, h_prev, h)


def elman_cell_backward(w_xh, w_hh, cache, dh):
    x, h_prev, h = cache
    dpre = dh * (1.0 - h * h)
    return dpre.T @ x, dpre.T @ h_prev, dpre.sum(axis=0), dpre @ w_xh, dpre @ w_hh


# ---------------------------------------------------------------------------
# Stepwise forward / blockwise backward

@dataclass
class StepTrace:
    """Activations of one timestep retained for the backward pass."""

    inputs: np.ndarray      # (B,) vocab indices
    caches: list            # per-layer cell caches
    top: np.ndarray         # (B, D_h) post-dropout input to the output layer
    logits: np.ndarray      # (B, V)
    masks: DropoutMasks | None


def _check_inputs(params, inputs):
    inputs = np.atleast_1d(np.asarray(inputs))
    if inputs.dtype.kind not in "iu":
        raise ValueError(f"inputs must be integer vocab indices, got dtype {inputs.dtype}")
    if inputs.ndim != 1:
        raise ValueError(f"inputs must be a scalar or 1-d index array, got shape {inputs.shape}")
    if ((inputs < 0) | (inputs >= params.vocab_size)).any():
        raise ValueError(
            f"input index out of range [0, {params.vocab_size}): {inputs.tolist()}"
        )
    return inputs


def forward_step(params: LMParams, state: HiddenState, inputs, masks=None):
    """One timestep: embedding lookup, recurrent cells, output logits.

    Returns (logits (B, V), new HiddenState, StepTrace). Pure: the incoming
    state is never mutated, so identical calls give bit-identical outputs.
    """
    inputs = _check_inputs(params, inputs)
    if state.batch_size != inputs.shape[0]:
        raise ValueError(
            f"batch mismatch: state has batch {state.batch_size}, inputs {inputs.shape[0]}"
        )
    x = params.embedding[inputs]
    if masks is not None:
        x = x * masks.emb
    new_h, new_c, caches = [], [], []
    for layer, cell in enumerate(params.cells):
        if params.cell_kind == "lstm":
            h, c, cache = lstm_cell_forward(
                cell["weight"], cell["bias"], x, state.h[layer], state.c[layer]
            )
            new_c.append(c)
        else:
            h, cache = elman_cell_forward(
                cell["w_xh"], cell["w_hh"], cell["bias"], x, state.h[layer]
            )
        new_h.append(h)
        caches.append(cache)
        x = h * masks.layers[layer] if masks is not None else h
    logits = x @ params.out_weight.T + params.out_bias
    new_state = HiddenState(new_h, new_c if params.cell_kind == "lstm" else None)
    return logits, new_state, StepTrace(inputs, caches, x, logits, masks)


def predict_distribution(params: LMParams, state: HiddenState, input_index: int):
    """Next-word distribution for a single input token; never applies dropout.

    Returns (probabilities (V,), new HiddenState).
    """
    logits, new_state, _ = forward_step(params, state, int(input_index))
    return kernels.softmax_stable(logits[0]), new_state


def sequence_loss(trace: list, targets) -> float:
    """Mean cross-entropy over a block, accumulated in float64."""
    targets = np.asarray(targets)
    if len(trace) == 0:
        raise ValueError("cannot compute a loss over an empty trace")
    batch = trace[0].inputs.shape[0]
    if targets.shape != (batch, len(trace)):
        raise ValueError(
            f"targets shape {targets.shape} does not match trace ({batch}, {len(trace)})"
        )
    total = 0.0
    for t, entry in enumerate(trace):
        lp = kernels.log_softmax(entry.logits)
        total -= lp[np.arange(batch), targets[:, t]].sum()
    return float(total / targets.size)


def backward_sequence(params: LMParams, trace: list, targets):
    """Exact gradients of the block's mean cross-entropy w.r.t. every
    trainable storage, walking the stored trace in reverse.

    No gradient flows into the state that preceded the block; the would-be
    gradient w.r.t. that incoming state is returned alongside so callers can
    see what the truncation discarded. Tied weights accumulate both the
    lookup-side and projection-side contributions into the shared storage.
    """
    targets = np.asarray(targets)
    if len(trace) == 0:
        raise ValueError("cannot backpropagate over an empty trace")
    batch = trace[0].inputs.shape[0]
    steps = len(trace)
    if targets.shape != (batch, steps):
        raise ValueError(
            f"targets shape {targets.shape} does not match trace ({batch}, {steps})"
        )
    dtype = params.dtype
    grads = {k: np.zeros_like(a) for k, a in params.named_arrays().items()}
    layers = params.layer_count
    is_lstm = params.cell_kind == "lstm"
    dh_next = [np.zeros((batch, params.d_h), dtype=dtype) for _ in range(layers)]
    dc_next = [np.zeros((batch, params.d_h), dtype=dtype) for _ in range(layers)] if is_lstm else None
    out_w = params.out_weight
    out_w_grad = grads["embedding"] if params.tie_weights else grads["out_weight"]
    scale = 1.0 / targets.size

    for t in reversed(range(steps)):
        entry = trace[t]
        p = kernels.softmax_stable(entry.logits)
        p[np.arange(batch), targets[:, t]] -= 1.0
        dlogits = (p * scale).astype(dtype, copy=False)

        out_w_grad += dlogits.T @ entry.top
        grads["out_bias"] += dlogits.sum(axis=0)
        dx = dlogits @ out_w

        for layer in reversed(range(layers)):
            mask = entry.masks.layers[layer] if entry.masks is not None else None
            dh = (dx * mask if mask is not None else dx) + dh_next[layer]
            if is_lstm:
                dw, db, dx, dh_prev, dc_prev = lstm_cell_backward(
                    params.cells[layer]["weight"], entry.caches[layer], dh, dc_next[layer]
                )
                grads[f"cell{layer}.weight"] += dw
                grads[f"cell{layer}.bias"] += db
                dc_next[layer] = dc_prev
            else:
                dwxh, dwhh, db, dx, dh_prev = elman_cell_backward(
                    params.cells[layer]["w_xh"],
                    params.cells[layer]["w_hh"],
                    entry.caches[layer],
                    dh,
                )
                grads[f"cell{layer}.w_xh"] += dwxh
                grads[f"cell{layer}.w_hh"] += dwhh
                grads[f"cell{layer}.bias"] += db
            dh_next[layer] = dh_prev

        de = dx * entry.masks.emb if entry.masks is not None else dx
        np.add.at(grads["embedding"], entry.inputs, de.astype(dtype, copy=False))

    state_grad = HiddenState(dh_next, dc_next)
    return grads, state_grad


def hidden_sequence(params: LMParams, inputs, state: HiddenState):
    """Top-layer hidden vectors for a run of timesteps, without computing
    logits. Evaluation-only fast path (no dropout, no trace); uses the same
    cell primitives as `forward_step`.

    Returns (tops (T, D_h), new HiddenState) for a (T,) index array and a
    batch-1 state.
    """
    inputs = _check_inputs(params, inputs)
    if state.batch_size != 1:
        raise ValueError("hidden_sequence expects a batch-1 state")
    steps = inputs.shape[0]
    tops = np.empty((steps, params.d_h), dtype=params.dtype)
    h = list(state.h)
    c = list(state.c) if state.c is not None else None
    for t in range(steps):
        x = params.embedding[inputs[t:t + 1]]
        for layer, cell in enumerate(params.cells):
            if params.cell_kind == "lstm":
                x, c[layer], _ = lstm_cell_forward(
                    cell["weight"], cell["bias"], x, h[layer], c[layer]
                )
            else:
                x, _ = elman_cell_forward(
                    cell["w_xh"], cell["w_hh"], cell["bias"], x, h[layer]
                )
            h[layer] = x
        tops[t] = x[0]
    return tops, HiddenState(h, c)
