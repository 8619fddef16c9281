"""Pure-numpy kernels; the reference the compiled extension must match."""

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward(xproj, whh):
    """Run the LSTM recurrence given precomputed input projections.

    xproj: [T, B, 4H] (x @ W_ih + b), whh: [H, 4H]. Zero initial state.
    Returns hidden states, cell states and activated gates (i, f, g, o).
    """
    t_len, batch, four_h = xproj.shape
    hid = four_h // 4
    dtype = xproj.dtype
    hs = np.empty((t_len, batch, hid), dtype=dtype)
    cs = np.empty((t_len, batch, hid), dtype=dtype)
    acts = np.empty_like(xproj)
    h = np.zeros((batch, hid), dtype=dtype)
    c = np.zeros((batch, hid), dtype=dtype)
    for t in range(t_len):
        gates = xproj[t] + h @ whh
        a = acts[t]
        a[:, :hid] = sigmoid(gates[:, :hid])
        a[:, hid:2 * hid] = sigmoid(gates[:, hid:2 * hid])
        a[:, 2 * hid:3 * hid] = np.tanh(gates[:, 2 * hid:3 * hid])
        a[:, 3 * hid:] = sigmoid(gates[:, 3 * hid:])
        c = a[:, hid:2 * hid] * c + a[:, :hid] * a[:, 2 * hid:3 * hid]
        h = a[:, 3 * hid:] * np.tanh(c)
        cs[t] = c
        hs[t] = h
    return hs, cs, acts


def lstm_backward(dh_seq, cs, acts, whh):
    """Backpropagate through time; returns pre-activation gate grads [T, B, 4H]."""
    t_len, batch, hid = dh_seq.shape
    dtype = dh_seq.dtype
    dgates = np.empty((t_len, batch, 4 * hid), dtype=dtype)
    dh_next = np.zeros((batch, hid), dtype=dtype)
    dc_next = np.zeros((batch, hid), dtype=dtype)
    zeros = np.zeros((batch, hid), dtype=dtype)
    for t in range(t_len - 1, -1, -1):
        a = acts[t]
        i, f, g, o = a[:, :hid], a[:, hid:2 * hid], a[:, 2 * hid:3 * hid], a[:, 3 * hid:]
        c_prev = cs[t - 1] if t > 0 else zeros
        tc = np.tanh(cs[t])
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dgates[t]
        d[:, :hid] = dc * g * i * (1.0 - i)
        d[:, hid:2 * hid] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * hid:3 * hid] = dc * i * (1.0 - g * g)
        d[:, 3 * hid:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ whh.T
    return dgates


def unfold(x, kernel, stride, dilation):
    """[B, T, C] -> [B, Tout, K, C] copy of sliding windows."""
    b, n, c = x.shape
    span = dilation * (kernel - 1) + 1
    t_out = 1 + (n - span) // stride
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, t_out, kernel, c), strides=(s0, s1 * stride, s1 * dilation, s2), writeable=False)
    return np.ascontiguousarray(view)


def fold(frames, length, stride, dilation):
    """Overlap-add [B, Tout, K, C] into [B, length, C] (adjoint of unfold)."""
    b, t_out, kernel, c = frames.shape
    out = np.zeros((b, length, c), dtype=frames.dtype)
    if dilation == 1 and kernel % stride == 0 and kernel // stride <= t_out:
        # frame t covers blocks t .. t + K/stride - 1 of ``stride`` samples each
        n_blocks = t_out + kernel // stride - 1
        blocks = out[:, :n_blocks * stride].reshape(b, n_blocks, stride, c)
        for j in range(kernel // stride):
            blocks[:, j:j + t_out] += frames[:, :, j * stride:(j + 1) * stride, :]
        return out
    if kernel <= t_out:
        for k in range(kernel):
            start = k * dilation
            out[:, start:start + stride * (t_out - 1) + 1:stride] += frames[:, :, k, :]
    else:
        for t in range(t_out):
            start = t * stride
            out[:, start:start + dilation * (kernel - 1) + 1:dilation] += frames[:, t]
    return out
