"""Hand-rolled LSTM cells and a bidirectional multi-layer sequence engine.

Gate layout is fixed as [input, forget, candidate, output] blocks of size
`hidden_dim` in every weight/bias tensor. The sequence engine processes L
independent "lanes" at once (lane = one direction of one model), which is
what makes training several small single-channel regressors affordable in
plain numpy: all per-timestep work happens on contiguous [L, batch, ...]
slices of time-major buffers, weight-gradient products go through
preallocated-output GEMMs, and callers may pass a workspace dict so large
buffers are reused across steps instead of being re-faulted every batch.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .params import Param

__all__ = [
    "LstmCellParams",
    "lstm_cell_step",
    "bilstm_forward",
    "bilstm_multi_forward",
    "bilstm_multi_backward",
    "lstm_seq_forward",
    "lstm_seq_backward",
]


class LstmCellParams:
    """Weights for one LSTM direction: W_ih [4H, in], W_hh [4H, H], b [4H].

    The forget-gate bias block starts at 1.0, everything else at 0; weight
    matrices use uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator | None = None):
        if input_dim < 1 or hidden_dim < 1:
            raise ValueError(f"LstmCellParams: bad dims input={input_dim}, hidden={hidden_dim}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        h4 = 4 * hidden_dim
        if rng is None:
            self.W_ih = Param.zeros(h4, input_dim)
            self.W_hh = Param.zeros(h4, hidden_dim)
        else:
            self.W_ih = Param.uniform((h4, input_dim), input_dim, rng)
            self.W_hh = Param.uniform((h4, hidden_dim), hidden_dim, rng)
        b = np.zeros(h4)
        b[hidden_dim : 2 * hidden_dim] = 1.0
        self.b = Param(b)

    def params(self):
        return [self.W_ih, self.W_hh, self.b]


def lstm_cell_step(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LstmCellParams):
    """One LSTM step on a batch: returns (h_t, c_t).

    i = sigma(.), f = sigma(.), g = tanh(.), o = sigma(.);
    c_t = f*c_prev + i*g; h_t = o*tanh(c_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    hd = p.hidden_dim
    if x_t.ndim != 2 or x_t.shape[1] != p.input_dim:
        raise ValueError(
            f"lstm_cell_step: x_t shape {x_t.shape} does not match input_dim {p.input_dim}"
        )
    if h_prev.shape != (x_t.shape[0], hd) or c_prev.shape != (x_t.shape[0], hd):
        raise ValueError(
            f"lstm_cell_step: state shapes {h_prev.shape}/{c_prev.shape} do not match "
            f"(batch={x_t.shape[0]}, hidden={hd})"
        )
    z = x_t @ p.W_ih.value.T + h_prev @ p.W_hh.value.T + p.b.value
    i = expit(z[:, :hd])
    f = expit(z[:, hd : 2 * hd])
    g = np.tanh(z[:, 2 * hd : 3 * hd])
    o = expit(z[:, 3 * hd :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _ws_get(ws, key, shape):
    """Fetch a reusable buffer from the workspace (or allocate fresh)."""
    if ws is None:
        return np.empty(shape)
    arr = ws.get(key)
    if arr is None or arr.shape != shape:
        arr = np.empty(shape)
        ws[key] = arr
    return arr


def _stack_lane_weights(lanes):
    w_ih = np.stack([p.W_ih.value for p in lanes])
    w_hh = np.stack([p.W_hh.value for p in lanes])
    b = np.stack([p.b.value for p in lanes])
    return w_ih, w_hh, b


def _step_activations(z, hd):
    expit(z[:, :, : 2 * hd], out=z[:, :, : 2 * hd])
    np.tanh(z[:, :, 2 * hd : 3 * hd], out=z[:, :, 2 * hd : 3 * hd])
    expit(z[:, :, 3 * hd :], out=z[:, :, 3 * hd :])


def lstm_seq_forward(x_tm, w_ih, w_hh, b, want_cache=True, ws=None, tag=0):
    """Run L independent LSTM lanes over a full sequence (time-major).

    x_tm: [T, L, B, in]; w_ih: [L, 4H, in]; w_hh: [L, 4H, H]; b: [L, 4H].
    Returns (h_seq [T, L, B, H], cache). With want_cache the cache holds
    the post-activation gates, cell states and h_seq — everything the
    backward pass needs; otherwise cache is None and only h_seq survives.
    """
    tt, ll, bb, dd = x_tm.shape
    h4 = w_ih.shape[1]
    hd = h4 // 4
    w_ih_t = np.ascontiguousarray(w_ih.transpose(0, 2, 1))
    w_hh_t = np.ascontiguousarray(w_hh.transpose(0, 2, 1))
    b_row = b[:, None, :]
    h_seq = _ws_get(ws, (tag, "hseq"), (tt, ll, bb, hd))
    scratch = _ws_get(ws, (tag, "scratch"), (ll, bb, h4))
    tc = _ws_get(ws, (tag, "tc"), (ll, bb, hd))
    h = np.zeros((ll, bb, hd))
    c = np.zeros((ll, bb, hd))
    if want_cache:
        gates = _ws_get(ws, (tag, "gates"), (tt, ll, bb, h4))
        cells = _ws_get(ws, (tag, "cells"), (tt, ll, bb, hd))
        for t in range(tt):
            z = gates[t]
            np.matmul(x_tm[t], w_ih_t, out=z)
            np.matmul(h, w_hh_t, out=scratch)
            z += scratch
            z += b_row
            _step_activations(z, hd)
            ct = cells[t]
            np.multiply(z[:, :, hd : 2 * hd], c, out=ct)
            ct += z[:, :, :hd] * z[:, :, 2 * hd : 3 * hd]
            c = ct
            np.tanh(c, out=tc)
            h = np.multiply(z[:, :, 3 * hd :], tc, out=h_seq[t])
        return h_seq, (x_tm, gates, cells, h_seq)
    z = _ws_get(ws, (tag, "zstep"), (ll, bb, h4))
    c_buf = np.empty((ll, bb, hd))
    for t in range(tt):
        np.matmul(x_tm[t], w_ih_t, out=z)
        np.matmul(h, w_hh_t, out=scratch)
        z += scratch
        z += b_row
        _step_activations(z, hd)
        np.multiply(z[:, :, hd : 2 * hd], c, out=c_buf)
        c_buf += z[:, :, :hd] * z[:, :, 2 * hd : 3 * hd]
        c, c_buf = c_buf, c
        np.tanh(c, out=tc)
        h = np.multiply(z[:, :, 3 * hd :], tc, out=h_seq[t])
    return h_seq, None


def lstm_seq_backward(cache, w_ih, w_hh, d_hseq=None, d_hlast=None, want_dx=True, ws=None, tag=0):
    """Backpropagate through a cached `lstm_seq_forward`.

    At least one of d_hseq [T,L,B,H] / d_hlast [L,B,H] must be given;
    d_hlast applies only to the final timestep. Destroys the gate cache
    (reused to hold pre-activation gradients).
    Returns (dx [T,L,B,in] or None, dw_ih, dw_hh, db).
    """
    x_tm, gates, cells, h_seq = cache
    tt, ll, bb, h4 = gates.shape
    hd = h4 // 4
    dd = x_tm.shape[-1]
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros((ll, h4))
    scr_ih = np.empty_like(w_ih)
    scr_hh = np.empty_like(w_hh)
    dx = _ws_get(ws, (tag, "dx"), (tt, ll, bb, dd)) if want_dx else None
    dh = np.zeros((ll, bb, hd))
    dc = np.zeros((ll, bb, hd))
    dc_buf = np.empty((ll, bb, hd))
    if d_hlast is not None:
        dh += d_hlast
    for t in range(tt - 1, -1, -1):
        if d_hseq is not None:
            dh += d_hseq[t]
        z = gates[t]
        i = z[:, :, :hd]
        f = z[:, :, hd : 2 * hd]
        g = z[:, :, 2 * hd : 3 * hd]
        o = z[:, :, 3 * hd :]
        tc = np.tanh(cells[t])
        # through h_t = o * tanh(c_t)
        do_ = dh * tc
        dct = dh * o
        dct *= 1.0 - tc * tc
        dc += dct
        # through c_t = f*c_prev + i*g
        di = dc * g
        dg = dc * i
        df = dc * cells[t - 1] if t > 0 else None
        np.multiply(dc, f, out=dc_buf)
        dc, dc_buf = dc_buf, dc
        # pre-activation gradients, written back into the gate buffer
        z[:, :, :hd] = di * (i * (1.0 - i))
        z[:, :, 2 * hd : 3 * hd] = dg * (1.0 - g * g)
        z[:, :, 3 * hd :] = do_ * (o * (1.0 - o))
        if t > 0:
            z[:, :, hd : 2 * hd] = df * (f * (1.0 - f))
        else:
            z[:, :, hd : 2 * hd] = 0.0
        np.matmul(z, w_hh, out=dh)
        zt = z.transpose(0, 2, 1)
        np.matmul(zt, x_tm[t], out=scr_ih)
        dw_ih += scr_ih
        if t > 0:
            np.matmul(zt, h_seq[t - 1], out=scr_hh)
            dw_hh += scr_hh
        db += z.sum(axis=1)
        if want_dx:
            np.matmul(z, w_ih, out=dx[t])
    return dx, dw_ih, dw_hh, db


def _check_layer_dims(layers):
    prev_out = None
    for idx, (fwd, bwd) in enumerate(layers):
        if fwd.input_dim != bwd.input_dim or fwd.hidden_dim != bwd.hidden_dim:
            raise ValueError(f"bilstm: layer {idx} direction dims disagree")
        if prev_out is not None and fwd.input_dim != prev_out:
            raise ValueError(
                f"bilstm: layer {idx} input_dim {fwd.input_dim} != 2*hidden "
                f"of layer {idx - 1} ({prev_out})"
            )
        prev_out = 2 * fwd.hidden_dim


def _layer_lanes(models_layers, li):
    lanes = []
    for layers in models_layers:
        lanes.extend(layers[li])
    return lanes


def bilstm_multi_forward(x_models, models_layers, want_cache=False, ws=None):
    """Run M parallel bidirectional stacks; x_models is [M, B, T, in].

    models_layers: per model, a list of (forward, backward) LstmCellParams.
    Output: [M, B, 2H] — per model, the forward direction's final hidden
    state concatenated with the backward direction's final hidden state.
    """
    x_models = np.asarray(x_models, dtype=np.float64)
    mm = len(models_layers)
    if x_models.ndim != 4 or x_models.shape[0] != mm:
        raise ValueError(
            f"bilstm: expected input [{mm}, B, T, in], got shape {x_models.shape}"
        )
    n_layers = len(models_layers[0])
    for layers in models_layers:
        _check_layer_dims(layers)
        if len(layers) != n_layers:
            raise ValueError("bilstm: models have differing layer counts")
    if x_models.shape[-1] != models_layers[0][0][0].input_dim:
        raise ValueError(
            f"bilstm: input feature dim {x_models.shape[-1]} != layer-0 input_dim "
            f"{models_layers[0][0][0].input_dim}"
        )
    bb, tt = x_models.shape[1], x_models.shape[2]
    cur = np.ascontiguousarray(np.transpose(x_models, (2, 0, 1, 3)))  # [T, M, B, D]
    caches = []
    h_seq = None
    for li in range(n_layers):
        lanes = _layer_lanes(models_layers, li)
        w_ih, w_hh, b = _stack_lane_weights(lanes)
        x_lanes = _ws_get(ws, (li, "xlanes"), (tt, 2 * mm, bb, cur.shape[-1]))
        for m in range(mm):
            x_lanes[:, 2 * m] = cur[:, m]
            x_lanes[:, 2 * m + 1] = cur[::-1, m]
        h_seq, cache = lstm_seq_forward(x_lanes, w_ih, w_hh, b, want_cache=want_cache, ws=ws, tag=li)
        caches.append(cache)
        if li < n_layers - 1:
            hd = h_seq.shape[-1]
            cur = _ws_get(ws, (li, "concat"), (tt, mm, bb, 2 * hd))
            for m in range(mm):
                cur[:, m, :, :hd] = h_seq[:, 2 * m]
                cur[:, m, :, hd:] = h_seq[::-1, 2 * m + 1]
    hd = h_seq.shape[-1]
    out = np.empty((mm, bb, 2 * hd))
    for m in range(mm):
        out[m, :, :hd] = h_seq[-1, 2 * m]
        out[m, :, hd:] = h_seq[-1, 2 * m + 1]
    return (out, caches) if want_cache else out


def bilstm_multi_backward(d_out, caches, models_layers, want_dx=False, ws=None):
    """Backward companion of `bilstm_multi_forward` (accumulates into .grad).

    d_out: [M, B, 2H] gradient w.r.t. the concatenated final states.
    Consumes the caches. Returns gradient w.r.t. the input [M, B, T, in]
    when want_dx.
    """
    mm = len(models_layers)
    n_layers = len(models_layers[0])
    hd = models_layers[0][-1][0].hidden_dim
    bb = d_out.shape[1]
    d_hlast = np.empty((2 * mm, bb, hd))
    for m in range(mm):
        d_hlast[2 * m] = d_out[m, :, :hd]
        d_hlast[2 * m + 1] = d_out[m, :, hd:]
    d_hseq = None
    dx_models = None
    for li in range(n_layers - 1, -1, -1):
        lanes = _layer_lanes(models_layers, li)
        w_ih = np.stack([p.W_ih.value for p in lanes])
        w_hh = np.stack([p.W_hh.value for p in lanes])
        need_dx = li > 0 or want_dx
        dx, dw_ih, dw_hh, db = lstm_seq_backward(
            caches[li], w_ih, w_hh, d_hseq=d_hseq, d_hlast=d_hlast,
            want_dx=need_dx, ws=ws, tag=li,
        )
        caches[li] = None
        for j, p in enumerate(lanes):
            p.W_ih.grad += dw_ih[j]
            p.W_hh.grad += dw_hh[j]
            p.b.grad += db[j]
        if li > 0:
            hprev = models_layers[0][li - 1][0].hidden_dim
            tt = dx.shape[0]
            d_hseq = _ws_get(ws, (li, "dhseq"), (tt, 2 * mm, bb, hprev))
            for m in range(mm):
                d_in = dx[:, 2 * m] + dx[::-1, 2 * m + 1]
                d_hseq[:, 2 * m] = d_in[:, :, :hprev]
                d_hseq[:, 2 * m + 1] = d_in[::-1, :, hprev:]
            d_hlast = None
        elif want_dx:
            dx_models = np.empty((mm, bb) + dx.shape[0:1] + dx.shape[3:])
            for m in range(mm):
                d_in = dx[:, 2 * m] + dx[::-1, 2 * m + 1]
                dx_models[m] = d_in.transpose(1, 0, 2)
    return dx_models


def bilstm_forward(x, layers, want_cache=False):
    """Single-model bidirectional stack: x [B, T, in] -> [B, 2H]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"bilstm_forward: expected [batch, T, in], got {x.shape}")
    res = bilstm_multi_forward(x[None], [list(layers)], want_cache=want_cache)
    if want_cache:
        out, caches = res
        return out[0], caches
    return res[0]
