"""Recurrent cells (GRU, peephole LSTM, IndRNN), two-layer stacking, the
windowed attention wrapper, and the 2-neuron output head.

Cells operate on batched rows: inputs are B x d nodes, hidden states B x h.
Weight layout follows the fully connected convention (out x in), so the input
matrices are h x d and every recurrent matrix is h x h.  Peephole terms and
the IndRNN recurrent weight are elementwise vectors of length h.

The attention wrapper keeps a ring buffer of the last ``window`` outputs.
Scores over that history are s_i = v . tanh(W1 out_i + W2 q_t) with q_t the
top layer's memory state after the inner step (the cell state for LSTM, the
hidden state otherwise); softmax(s) weights the history sum.  The attention
state joins the raw input before the inner cells and the raw output after,
each through a learned linear map.  With an empty history (sequence start)
the attention vector is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node


def init_uniform(rng, shape, fan_in, dtype, gain=np.sqrt(3.0)):
    """Uniform fan-in init; the default gain keeps pre-activation variance at
    the input variance (He-style callers pass sqrt(6) for relu layers)."""
    limit = gain / np.sqrt(fan_in)
    return ad.leaf(rng.uniform(-limit, limit, size=shape), dtype=dtype)


def init_bias(value, size, dtype):
    return ad.leaf(np.full(size, float(value)), dtype=dtype)


def init_truncated_normal(rng, shape, stddev, dtype):
    """Normal(0, stddev) with samples beyond 2 stddev redrawn."""
    out = rng.normal(0.0, stddev, size=shape)
    bad = np.abs(out) > 2 * stddev
    while bad.any():
        out[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(out) > 2 * stddev
    return ad.leaf(out, dtype=dtype)


def zeros(shape, dtype):
    return ad.leaf(np.zeros(shape), dtype=dtype)


def _linear(x, w):
    """x (B x n) @ w.T for out x in weight layout."""
    return ad.matmul(x, ad.transpose(w, (1, 0)))


# ---------------------------------------------------------------------------
# Parameter containers and step functions


@dataclass
class GruParams:
    w_z: Node
    u_z: Node
    b_z: Node
    w_r: Node
    u_r: Node
    b_r: Node
    w_c: Node
    u_c: Node  # candidate path has no bias


def gru_step(params: GruParams, x, h_prev):
    """One GRU update: update gate z, reset gate r, candidate h', then
    h_t = z*h_prev + (1-z)*h'."""
    z = ad.sigmoid(ad.add(ad.add(_linear(x, params.w_z), _linear(h_prev, params.u_z)),
                          params.b_z))
    r = ad.sigmoid(ad.add(ad.add(_linear(x, params.w_r), _linear(h_prev, params.u_r)),
                          params.b_r))
    cand = ad.tanh(ad.add(_linear(x, params.w_c),
                          ad.mul(r, _linear(h_prev, params.u_c))))
    keep = ad.mul(z, h_prev)
    new = ad.mul(ad.shift(ad.neg(z), 1.0), cand)
    return ad.add(keep, new)


@dataclass
class LstmParams:
    w_ix: Node
    u_i: Node
    b_i: Node
    w_fx: Node
    u_f: Node
    b_f: Node
    w_g: Node
    u_g: Node
    b_g: Node
    w_ox: Node
    u_o: Node
    b_o: Node
    w_ic: Node  # peepholes: diagonal, applied elementwise
    w_fc: Node
    w_oc: Node
    peepholes: bool = True


def lstm_step(params: LstmParams, x, state):
    """One LSTM update with optional peephole terms.

    Input and forget gates see the previous cell state; the output gate sees
    the freshly computed one.
    """
    h_prev, c_prev = state
    i_pre = ad.add(ad.add(_linear(x, params.w_ix), _linear(h_prev, params.u_i)), params.b_i)
    f_pre = ad.add(ad.add(_linear(x, params.w_fx), _linear(h_prev, params.u_f)), params.b_f)
    if params.peepholes:
        i_pre = ad.add(i_pre, ad.mul(params.w_ic, c_prev))
        f_pre = ad.add(f_pre, ad.mul(params.w_fc, c_prev))
    i = ad.sigmoid(i_pre)
    f = ad.sigmoid(f_pre)
    g = ad.tanh(ad.add(ad.add(_linear(x, params.w_g), _linear(h_prev, params.u_g)),
                       params.b_g))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    o_pre = ad.add(ad.add(_linear(x, params.w_ox), _linear(h_prev, params.u_o)), params.b_o)
    if params.peepholes:
        o_pre = ad.add(o_pre, ad.mul(params.w_oc, c))
    o = ad.sigmoid(o_pre)
    h = ad.mul(o, ad.tanh(c))
    return h, c


@dataclass
class IndRnnParams:
    w: Node
    u: Node  # length-h vector: each neuron only sees itself across time
    b: Node
    recurrent_max: float


def indrnn_step(params: IndRnnParams, x, h_prev):
    """h_t = relu(W x + u * h_prev + b); |u| is clipped by the optimizer."""
    return ad.relu(ad.add(ad.add(_linear(x, params.w), ad.mul(params.u, h_prev)),
                          params.b))


# ---------------------------------------------------------------------------
# Cells with named parameters


class GruCell:
    state_is_pair = False

    def __init__(self, input_size, hidden_size, rng, dtype=np.float32, name="gru"):
        self.hidden_size = hidden_size
        self.name = name
        d, h = input_size, hidden_size
        # update-gate bias starts negative so early steps favor fresh input
        self.params = GruParams(
            w_z=init_uniform(rng, (h, d), d, dtype),
            u_z=init_uniform(rng, (h, h), h, dtype),
            b_z=init_bias(-1.0, h, dtype),
            w_r=init_uniform(rng, (h, d), d, dtype),
            u_r=init_uniform(rng, (h, h), h, dtype),
            b_r=zeros(h, dtype),
            w_c=init_uniform(rng, (h, d), d, dtype),
            u_c=init_uniform(rng, (h, h), h, dtype),
        )

    def named_params(self):
        p = self.params
        return {f"{self.name}/{k}": getattr(p, k)
                for k in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_c", "u_c")}

    def init_state(self, batch, dtype):
        return ad.constant(np.zeros((batch, self.hidden_size)), dtype=dtype)

    def step(self, x, state):
        h = gru_step(self.params, x, state)
        return h, h

    @staticmethod
    def memory(state):
        return state


class LstmCell:
    state_is_pair = True

    def __init__(self, input_size, hidden_size, rng, dtype=np.float32,
                 peepholes=True, name="lstm"):
        self.hidden_size = hidden_size
        self.name = name
        d, h = input_size, hidden_size
        # forget-gate bias starts at one, the usual keep-the-cell default
        self.params = LstmParams(
            w_ix=init_uniform(rng, (h, d), d, dtype),
            u_i=init_uniform(rng, (h, h), h, dtype),
            b_i=zeros(h, dtype),
            w_fx=init_uniform(rng, (h, d), d, dtype),
            u_f=init_uniform(rng, (h, h), h, dtype),
            b_f=init_bias(1.0, h, dtype),
            w_g=init_uniform(rng, (h, d), d, dtype),
            u_g=init_uniform(rng, (h, h), h, dtype),
            b_g=zeros(h, dtype),
            w_ox=init_uniform(rng, (h, d), d, dtype),
            u_o=init_uniform(rng, (h, h), h, dtype),
            b_o=zeros(h, dtype),
            w_ic=init_uniform(rng, h, h, dtype),
            w_fc=init_uniform(rng, h, h, dtype),
            w_oc=init_uniform(rng, h, h, dtype),
            peepholes=peepholes,
        )

    def named_params(self):
        p = self.params
        names = ("w_ix", "u_i", "b_i", "w_fx", "u_f", "b_f", "w_g", "u_g", "b_g",
                 "w_ox", "u_o", "b_o", "w_ic", "w_fc", "w_oc")
        return {f"{self.name}/{k}": getattr(p, k) for k in names}

    def init_state(self, batch, dtype):
        z = np.zeros((batch, self.hidden_size))
        return (ad.constant(z, dtype=dtype), ad.constant(z.copy(), dtype=dtype))

    def step(self, x, state):
        h, c = lstm_step(self.params, x, state)
        return h, (h, c)

    @staticmethod
    def memory(state):
        return state[1]


class IndRnnCell:
    state_is_pair = False

    def __init__(self, input_size, hidden_size, rng, seq_length,
                 dtype=np.float32, name="indrnn"):
        self.hidden_size = hidden_size
        self.name = name
        self.recurrent_max = float(2.0 ** (1.0 / seq_length))
        d, h = input_size, hidden_size
        self.params = IndRnnParams(
            w=init_uniform(rng, (h, d), d, dtype),
            u=ad.leaf(rng.uniform(-self.recurrent_max, self.recurrent_max, size=h),
                      dtype=dtype),
            b=zeros(h, dtype),
            recurrent_max=self.recurrent_max,
        )

    def named_params(self):
        p = self.params
        return {f"{self.name}/{k}": getattr(p, k) for k in ("w", "u", "b")}

    def recurrent_clips(self):
        return {f"{self.name}/u": self.recurrent_max}

    def init_state(self, batch, dtype):
        return ad.constant(np.zeros((batch, self.hidden_size)), dtype=dtype)

    def step(self, x, state):
        h = indrnn_step(self.params, x, state)
        return h, h

    @staticmethod
    def memory(state):
        return state


class StackedCells:
    """Layered cells; each layer consumes the previous layer's step output."""

    def __init__(self, cells):
        if not cells:
            raise ad.GraphError("StackedCells: need at least one cell")
        self.cells = list(cells)
        self.hidden_size = self.cells[-1].hidden_size

    def named_params(self):
        out = {}
        for cell in self.cells:
            out.update(cell.named_params())
        return out

    def recurrent_clips(self):
        out = {}
        for cell in self.cells:
            if hasattr(cell, "recurrent_clips"):
                out.update(cell.recurrent_clips())
        return out

    def init_state(self, batch, dtype):
        return [cell.init_state(batch, dtype) for cell in self.cells]

    def step(self, x, states):
        new_states = []
        out = x
        for cell, state in zip(self.cells, states):
            out, new = cell.step(out, state)
            new_states.append(new)
        return out, new_states

    def memory(self, states):
        return self.cells[-1].memory(states[-1])


# ---------------------------------------------------------------------------
# Attention


@dataclass
class AttentionParams:
    v: Node        # length a
    w1: Node       # a x h, projects history outputs
    w2: Node       # a x h, projects the query state
    w_in: Node     # d x (d+h), input mixing
    b_in: Node
    w_out: Node    # h x (2h), output mixing
    b_out: Node
    window: int


def attention_scores(params: AttentionParams, history, query):
    """softmax over s_i = v . tanh(W1 out_i + W2 query) for the history."""
    batch = query.value.shape[0]
    k = len(history)
    a = params.v.value.shape[0]
    h = history[0].value.shape[1]
    stacked = ad.concat([ad.reshape(o, (batch, 1, h)) for o in history], axis=1)
    proj = ad.reshape(_linear(ad.reshape(stacked, (batch * k, h)), params.w1),
                      (batch, k, a))
    qp = ad.reshape(_linear(query, params.w2), (batch, 1, a))
    pre = ad.tanh(ad.add(proj, qp))
    scores = ad.reshape(ad.matmul(ad.reshape(pre, (batch * k, a)),
                                  ad.reshape(params.v, (a, 1))), (batch, k))
    return ad.softmax(scores, axis=1), stacked


def attention_step(params: AttentionParams, inner: StackedCells, x, state):
    """One wrapper update around the whole stacked block.

    ``state`` is (inner states, previous attention vector, history tuple).
    Returns the mixed output and the advanced state; the new output is pushed
    onto the history, keeping at most ``window`` entries.
    """
    inner_states, atten, history = state
    batch = x.value.shape[0]
    h = inner.hidden_size

    mixed_in = ad.dense(ad.concat([x, atten], axis=1), params.w_in, params.b_in)
    out, new_inner = inner.step(mixed_in, inner_states)
    query = inner.memory(new_inner)

    if history:
        weights, stacked = attention_scores(params, history, query)
        k = len(history)
        new_atten = ad.sum_(ad.mul(ad.reshape(weights, (batch, k, 1)), stacked), axis=1)
    else:
        new_atten = ad.constant(np.zeros((batch, h)), dtype=x.value.dtype)

    y = ad.dense(ad.concat([out, new_atten], axis=1), params.w_out, params.b_out)
    new_history = (history + (y,))[-params.window:]
    return y, (new_inner, new_atten, new_history)


class AttentionWrapper:
    """The mixing projections start as identity-on-raw / zero-on-attention,
    so a fresh wrapper passes inputs and outputs through unchanged and the
    attention pathway fades in as it is learned."""

    def __init__(self, inner: StackedCells, input_size, rng, window=30,
                 attn_size=None, dtype=np.float32, name="attn"):
        self.inner = inner
        self.name = name
        self.hidden_size = inner.hidden_size
        h = inner.hidden_size
        a = attn_size or h
        d = input_size
        w_in = np.concatenate([np.eye(d), np.zeros((d, h))], axis=1)
        w_out = np.concatenate([np.eye(h), np.zeros((h, h))], axis=1)
        self.params = AttentionParams(
            v=init_uniform(rng, a, a, dtype),
            w1=init_uniform(rng, (a, h), h, dtype),
            w2=init_uniform(rng, (a, h), h, dtype),
            w_in=ad.leaf(w_in, dtype=dtype),
            b_in=zeros(d, dtype),
            w_out=ad.leaf(w_out, dtype=dtype),
            b_out=zeros(h, dtype),
            window=window,
        )

    def named_params(self):
        p = self.params
        return {**self.inner.named_params(),
                **{f"{self.name}/{k}": getattr(p, k)
                   for k in ("v", "w1", "w2", "w_in", "b_in", "w_out", "b_out")}}

    def recurrent_clips(self):
        return self.inner.recurrent_clips()

    def init_state(self, batch, dtype):
        return (self.inner.init_state(batch, dtype),
                ad.constant(np.zeros((batch, self.hidden_size)), dtype=dtype),
                ())

    def step(self, x, state):
        return attention_step(self.params, self.inner, x, state)


# ---------------------------------------------------------------------------
# Unroll and output head


def unroll(cell, sequence):
    """Run ``cell`` over a B x L x d sequence node from zero initial state.

    Output at step t depends only on inputs 1..t.  Returns B x L x h.
    """
    batch, length = sequence.value.shape[0], sequence.value.shape[1]
    if length == 0:
        raise ad.GraphError("unroll: empty sequence")
    d = sequence.value.shape[2]
    state = cell.init_state(batch, sequence.value.dtype)
    outputs = []
    for t in range(length):
        x_t = ad.reshape(ad.slice_axis(sequence, 1, t, t + 1), (batch, d))
        y, state = cell.step(x_t, state)
        outputs.append(ad.reshape(y, (batch, 1, cell.hidden_size)))
    return ad.concat(outputs, axis=1)


class FcHead:
    """Final linear map to one valence and one arousal output per frame.

    Raw linear outputs, no squashing; predictions landing in [-1, 1] is a
    property of trained models, not an architectural clamp.
    """

    def __init__(self, input_size, rng, outputs=2, dtype=np.float32, name="fc"):
        self.name = name
        self.w = init_truncated_normal(rng, (outputs, input_size), 0.1, dtype)
        self.b = zeros(outputs, dtype)
        self.outputs = outputs

    def named_params(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}

    def __call__(self, features, batch, length):
        out = ad.dense(features, self.w, self.b)
        return ad.reshape(out, (batch, length, self.outputs))


def fc_head(features, weights, bias, batch, length):
    """Functional form: (B*L) x h features -> B x L x outputs predictions."""
    out = ad.dense(features, weights, bias)
    return ad.reshape(out, (batch, length, weights.value.shape[0]))
