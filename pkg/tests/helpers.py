"""Shared test utilities: float64 gradient-check harnesses that compare the
hand-written backward passes against the central-difference oracle."""

import numpy as np

from ioglm import gate as gate_mod
from ioglm import kernels, model

# Central differences at 1e-5 in float64 leave ~1e-10 absolute noise, so a
# 1e-6 floor in the relative error keeps near-zero coordinates meaningful.
FD_EPSILON = 1e-5
REL_FLOOR = 1e-6


def random_inputs(rng, vocab_size, batch, steps):
    inputs = rng.integers(0, vocab_size, size=(batch, steps))
    targets = rng.integers(0, vocab_size, size=(batch, steps))
    return inputs, targets


def run_lm_block(params, inputs, masks=None, state=None):
    if state is None:
        state = model.initial_state(params, inputs.shape[0])
    trace = []
    for t in range(inputs.shape[1]):
        _, state, entry = model.forward_step(params, state, inputs[:, t], masks)
        trace.append(entry)
    return trace, state


def lm_gradient_error(params, inputs, targets, masks=None, max_coords=300, rng=None):
    """Max relative error between analytic and finite-difference gradients of
    the block's mean cross-entropy w.r.t. every base-model parameter."""
    assert params.dtype == np.float64, "gradient checks run the whole model in float64"
    named = params.named_arrays()
    flat, spec = kernels.pack_arrays(named)

    def loss(theta):
        rebuilt = params.replace_arrays(kernels.unpack_arrays(theta, spec))
        trace, _ = run_lm_block(rebuilt, inputs, masks)
        return model.sequence_loss(trace, targets)

    trace, _ = run_lm_block(params, inputs, masks)
    grads, _ = model.backward_sequence(params, trace, targets)
    analytic, _ = kernels.pack_arrays({k: grads[k] for k in named})

    coords = _sample_coords(flat.size, max_coords, rng)
    fd = kernels.finite_difference_gradient(loss, flat, epsilon=FD_EPSILON, coords=coords)
    return kernels.max_relative_error(analytic[coords], fd, floor=REL_FLOOR)


def run_gated_block(base, gate, inputs, mask=None):
    state = model.initial_state(base, inputs.shape[0])
    gstate = (
        gate_mod.initial_gate_state(gate, inputs.shape[0])
        if gate.variant == "lstm_gate"
        else None
    )
    trace, base_logits = [], []
    for t in range(inputs.shape[1]):
        logits, state, _ = model.forward_step(base, state, inputs[:, t])
        g, entry = gate_mod.compute_gate(
            gate,
            inputs[:, t],
            base_hidden=state.h[-1] if gate.variant == "with_hidden" else None,
            state=gstate,
            mask=mask,
        )
        if gate.variant == "lstm_gate":
            gstate = entry.state
        trace.append(entry)
        base_logits.append(logits)
    return trace, base_logits


def gate_gradient_error(base, gate, inputs, targets, mask=None, max_coords=300, rng=None):
    """Max relative error between analytic and finite-difference gradients of
    the gated block loss w.r.t. the gate parameters only."""
    assert gate.dtype == np.float64
    named = gate.named_arrays()
    flat, spec = kernels.pack_arrays(named)

    def loss(theta):
        rebuilt = gate.replace_arrays(kernels.unpack_arrays(theta, spec))
        trace, base_logits = run_gated_block(base, rebuilt, inputs, mask)
        return gate_mod.gated_sequence_loss(trace, base_logits, targets)

    trace, base_logits = run_gated_block(base, gate, inputs, mask)
    grads = gate_mod.gate_backward(gate, trace, base_logits, targets)
    analytic, _ = kernels.pack_arrays({k: grads[k] for k in named})

    coords = _sample_coords(flat.size, max_coords, rng)
    fd = kernels.finite_difference_gradient(loss, flat, epsilon=FD_EPSILON, coords=coords)
    return kernels.max_relative_error(analytic[coords], fd, floor=REL_FLOOR)


def _sample_coords(size, max_coords, rng):
    if size <= max_coords:
        return np.arange(size)
    if rng is None:
        rng = np.random.default_rng(0)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def params64(vocab_size, d_e, d_h, layers=1, cell_kind="lstm", tie_weights=False, seed=0):
    return model.init_params(
        vocab_size, d_e, d_h, layers=layers, cell_kind=cell_kind,
        tie_weights=tie_weights, seed=seed, dtype=np.float64,
    )


def gate64(vocab_size, d_g, variant="input_only", d_h=None, seed=0, bias_init=0.5):
    # A small non-saturating bias keeps gradient-check coordinates well away
    # from sigmoid saturation.
    return gate_mod.init_gate(
        vocab_size, d_g=d_g, variant=variant, d_h=d_h, seed=seed,
        dtype=np.float64, weight_scale=0.2, bias_init=bias_init,
    )
