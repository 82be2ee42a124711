"""Perplexity evaluation, ensembling with one shared gate, and the gate
architecture comparison harness.

Evaluation conventions: the first token of a stream is conditioned on and
never scored, so a stream of T tokens scores N = T - 1 predictions; the
hidden state runs continuously through the whole stream (no truncation at
evaluation time); negative log-likelihood is summed in float64; no dropout.

Scoring is chunked: the recurrence advances one timestep at a time but the
output-layer work for a whole chunk is done as one matrix product, which
changes nothing but rounding at the last bit, so chunked and stepwise
evaluation agree to far better than the 1e-4 relative tolerance promised in
the contract.

An ensemble averages the member models' probability distributions. With a
gate, a single shared gate vector per timestep multiplies every member's
logits before that member's softmax: the gate is one object, advanced once
per timestep, identical across members by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import gate as gate_mod
from . import kernels, model


@dataclass
class EvalReport:
    tokens: int
    nll: float
    perplexity: float
    members: list | None = None

    def to_dict(self) -> dict:
        out = {"tokens": self.tokens, "nll": self.nll, "perplexity": self.perplexity}
        if self.members is not None:
            out["members"] = self.members
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def ensemble_distribution(member_probs) -> np.ndarray:
    """Arithmetic mean of member probability distributions (float64)."""
    member_probs = list(member_probs)
    if not member_probs:
        raise ValueError("ensemble of zero members")
    length = np.asarray(member_probs[0]).shape
    stacked = []
    for p in member_probs:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != length:
            raise ValueError(f"member distribution shape {p.shape} != {length}")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"member distribution sums to {p.sum()!r}, not 1")
        stacked.append(p)
    return np.mean(stacked, axis=0)


def _gate_chunk(gate, inputs, member_tops, gstate):
    """Gate vectors for a chunk of timesteps: (C, V) plus the advanced state.

    For the with_hidden variant the hidden state of the *first* member
    drives the gate, keeping a single gate stream shared by every member.
    """
    if gate.variant == "input_only":
        e = gate.embedding[inputs]
        pre = e @ gate.weight.T + gate.bias
        return kernels.sigmoid(pre), gstate
    if gate.variant == "with_hidden":
        e = gate.embedding[inputs]
        concat = np.concatenate([member_tops[0], e], axis=1)
        pre = concat @ gate.hidden_weight.T + gate.bias
        return kernels.sigmoid(pre), gstate
    rows = []
    for t in range(inputs.shape[0]):
        g_row, entry = gate_mod.compute_gate(gate, inputs[t:t + 1], state=gstate)
        gstate = entry.state
        rows.append(g_row[0])
    return np.stack(rows), gstate


def _evaluate(members, stream, gate=None, identity_gate=False, chunk=128, gate_probe=None):
    stream = np.asarray(stream)
    if stream.ndim != 1 or stream.shape[0] < 2:
        raise ValueError(
            f"evaluation needs a stream of at least 2 tokens, got shape {stream.shape}"
        )
    if not members:
        raise ValueError("no models to evaluate")
    vocab_size = members[0].vocab_size
    for m in members:
        if m.vocab_size != vocab_size:
            raise ValueError(
                f"ensemble members disagree on vocabulary size: {m.vocab_size} != {vocab_size}"
            )
    if gate is not None and gate.vocab_size != vocab_size:
        raise ValueError(
            f"gate vocabulary {gate.vocab_size} != model vocabulary {vocab_size}"
        )
    if chunk < 1:
        raise ValueError(f"chunk must be positive, got {chunk}")

    inputs = stream[:-1]
    targets = stream[1:]
    n = inputs.shape[0]
    m_count = len(members)
    states = [model.initial_state(m, 1) for m in members]
    gstate = (
        gate_mod.initial_gate_state(gate, 1)
        if gate is not None and gate.variant == "lstm_gate" and not identity_gate
        else None
    )
    member_nll = np.zeros(m_count, dtype=np.float64)
    ensemble_nll = 0.0
    log_m = math.log(m_count)

    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        idx = inputs[start:stop]
        tgt = targets[start:stop]
        width = stop - start

        tops = []
        for k, member in enumerate(members):
            top, states[k] = model.hidden_sequence(member, idx, states[k])
            tops.append(top)

        if gate is not None:
            if identity_gate:
                g = np.ones((width, vocab_size), dtype=members[0].dtype)
            else:
                g, gstate = _gate_chunk(gate, idx, tops, gstate)
        else:
            g = None

        rows = np.arange(width)
        target_lp = np.empty((m_count, width), dtype=np.float64)
        for k, member in enumerate(members):
            logits = tops[k] @ member.out_weight.T + member.out_bias
            if g is not None:
                if gate_probe is not None:
                    for t in range(width):
                        gate_probe(start + t, k, g[t])
                logits = g * logits
            lp = kernels.log_softmax(logits)
            target_lp[k] = lp[rows, tgt]
        member_nll -= target_lp.sum(axis=1)
        # log of the mean member probability, stable in log space; for a
        # single member this reduces exactly to its own log-probability.
        mix = np.logaddexp.reduce(target_lp, axis=0) - log_m
        ensemble_nll -= float(mix.sum())

    member_reports = [
        {
            "index": k,
            "tokens": int(n),
            "nll": float(member_nll[k]),
            "perplexity": float(math.exp(member_nll[k] / n)),
        }
        for k in range(m_count)
    ]
    return EvalReport(
        tokens=int(n),
        nll=float(ensemble_nll),
        perplexity=float(math.exp(ensemble_nll / n)),
        members=member_reports,
    )


def perplexity(params: model.LMParams, stream, gate=None, identity_gate=False,
               chunk=128) -> EvalReport:
    """Perplexity of one model (optionally gated) over a token stream."""
    report = _evaluate([params], stream, gate=gate, identity_gate=identity_gate, chunk=chunk)
    report.members = None
    return report


def ensemble_perplexity(members, stream, gate=None, identity_gate=False, chunk=128,
                        gate_probe=None) -> EvalReport:
    """Perplexity of an ensemble that averages member distributions.

    With a gate, the same gate vector multiplies every member's logits at
    each timestep before that member's softmax. `gate_probe(t, member, g_t)`
    is invoked for every (timestep, member) pair when supplied, so callers
    can verify the sharing. The report carries each member's standalone
    (gated) perplexity.
    """
    return _evaluate(
        members, stream, gate=gate, identity_gate=identity_gate, chunk=chunk,
        gate_probe=gate_probe,
    )


def run_variant_comparison(base: model.LMParams, train_stream, valid_stream, test_stream,
                           variants, config, gate_seed: int = 0, verbose: bool = False):
    """Train each gate architecture with an identical config and seed against
    the same frozen base; report validation/test perplexity and the
    parameter-count delta relative to the input-conditioned gate."""
    from . import training

    reference = gate_mod.gate_param_count_for(
        base.vocab_size, config.d_g, "input_only", d_h=base.d_h
    )
    rows = []
    for variant in variants:
        g = gate_mod.init_gate(
            base.vocab_size, d_g=config.d_g, variant=variant, d_h=base.d_h, seed=gate_seed
        )
        cfg = training.TrainConfig(**{**config.to_dict(), "gate_variant": variant}).validate()
        best, _ = training.train_iog(cfg, train_stream, valid_stream, base, g, verbose=verbose)
        rows.append(
            {
                "variant": variant,
                "gate_params": best.param_count(),
                "delta_vs_input_only": best.param_count() - reference,
                "valid_ppl": perplexity(base, valid_stream, gate=best).perplexity,
                "test_ppl": perplexity(base, test_stream, gate=best).perplexity,
            }
        )
    return rows


def format_comparison_table(rows) -> str:
    header = f"{'variant':<14}{'gate-params':>12}{'delta':>10}{'valid-ppl':>12}{'test-ppl':>12}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['variant']:<14}{r['gate_params']:>12}{r['delta_vs_input_only']:>10}"
            f"{r['valid_ppl']:>12.3f}{r['test_ppl']:>12.3f}"
        )
    return "\n".join(lines)
