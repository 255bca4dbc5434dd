"""Hot numeric kernels for the per-visit recurrences.

Every kernel is written once, in a numba-compilable subset of numpy, and
compiled with ``@njit`` unless the environment variable ``MEMSTAGE_NUMBA=0``
is set (or numba is unavailable), in which case the plain numpy version runs.
``USING_NUMBA`` reports which path is active; ``benchmarks/bench_kernels.py``
times the two paths against each other.

All arrays are float64 and C-contiguous.  Gate block order for the LSTM
kernels is input, forget, output, candidate.
"""

import os

import numpy as np

_COS_EPS = 1e-12


def lstm_forward(x, h_prev, c_prev, wx, wh, b):
    """One LSTM step.  Returns (h, c, i, f, o, g); gates are kept for backward."""
    n = h_prev.shape[0]
    pre = np.dot(wx, x) + np.dot(wh, h_prev) + b
    i = 1.0 / (1.0 + np.exp(-pre[:n]))
    f = 1.0 / (1.0 + np.exp(-pre[n:2 * n]))
    o = 1.0 / (1.0 + np.exp(-pre[2 * n:3 * n]))
    g = np.tanh(pre[3 * n:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, i, f, o, g


def lstm_backward(dh, dc_carry, x, h_prev, c_prev, i, f, o, g, c, wx, wh):
    """Backward of one LSTM step given d(loss)/dh and the carried d(loss)/dc.

    Returns (dx, dh_prev, dc_prev, dwx, dwh, db).
    """
    tc = np.tanh(c)
    do = dh * tc
    dc = dc_carry + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dpre = np.concatenate((
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        do * o * (1.0 - o),
        dg * (1.0 - g * g),
    ))
    dwx = dpre.reshape(dpre.shape[0], 1) * x.reshape(1, x.shape[0])
    dwh = dpre.reshape(dpre.shape[0], 1) * h_prev.reshape(1, h_prev.shape[0])
    dx = np.dot(dpre, wx)
    dh_prev = np.dot(dpre, wh)
    return dx, dh_prev, dc_prev, dwx, dwh, dpre


def memory_read_forward(slots, occupied, strengths, key, mul_scores):
    """Similarity-weighted read over the occupied prefix of the slot matrix.

    Scores are strength + cosine(key, slot) passed through a softmax
    (default), or exp(strength) * cosine normalised by its own sum when
    ``mul_scores`` is set.  An empty bank reads as zeros.
    """
    n_slots, width = slots.shape
    e = np.zeros(width)
    w = np.zeros(n_slots)
    if occupied == 0:
        return e, w
    cos = np.zeros(occupied)
    nk = np.sqrt(np.sum(key * key))
    for l in range(occupied):
        nm = np.sqrt(np.sum(slots[l] * slots[l]))
        if nk > _COS_EPS and nm > _COS_EPS:
            cos[l] = np.sum(key * slots[l]) / (nk * nm)
    if mul_scores:
        s = np.exp(strengths[:occupied]) * cos
        tot = np.sum(s)
        if np.abs(tot) < _COS_EPS:
            w[:occupied] = 1.0 / occupied
        else:
            w[:occupied] = s / tot
    else:
        s = strengths[:occupied] + cos
        ex = np.exp(s - np.max(s))
        w[:occupied] = ex / np.sum(ex)
    for l in range(occupied):
        e += w[l] * slots[l]
    return e, w


def memory_read_backward(slots, occupied, strengths, key, w, de, mul_scores):
    """Backward of memory_read_forward given d(loss)/de.

    Returns (dslots, dkey, dstrengths).  Cosines and norms are recomputed
    from the inputs rather than cached.
    """
    n_slots, width = slots.shape
    dslots = np.zeros((n_slots, width))
    dkey = np.zeros(key.shape[0])
    dstr = np.zeros(n_slots)
    if occupied == 0:
        return dslots, dkey, dstr
    dw = np.zeros(occupied)
    for l in range(occupied):
        dw[l] = np.sum(de * slots[l])
        dslots[l] += w[l] * de
    cos = np.zeros(occupied)
    nm = np.zeros(occupied)
    nk = np.sqrt(np.sum(key * key))
    for l in range(occupied):
        nm[l] = np.sqrt(np.sum(slots[l] * slots[l]))
        if nk > _COS_EPS and nm[l] > _COS_EPS:
            cos[l] = np.sum(key * slots[l]) / (nk * nm[l])
    if mul_scores:
        s = np.exp(strengths[:occupied]) * cos
        tot = np.sum(s)
        if np.abs(tot) < _COS_EPS:
            return dslots, dkey, dstr  # uniform fallback is constant in the inputs
        wd = np.sum(dw * w[:occupied])
        ds = (dw - wd) / tot
        dstr[:occupied] += ds * s
        dcos = ds * np.exp(strengths[:occupied])
    else:
        wd = np.sum(dw * w[:occupied])
        ds = w[:occupied] * (dw - wd)
        dstr[:occupied] += ds
        dcos = ds
    for l in range(occupied):
        if nk > _COS_EPS and nm[l] > _COS_EPS:
            dkey += dcos[l] * (slots[l] / (nk * nm[l]) - cos[l] * key / (nk * nk))
            dslots[l] += dcos[l] * (key / (nk * nm[l]) - cos[l] * slots[l] / (nm[l] * nm[l]))
    return dslots, dkey, dstr


def memory_write_forward(m_old, x_in, proj, gate_w, gate_b):
    """Gated slot update: m_new = r * m_old + v * (proj @ x_in).

    The gates (r, v) are logistic outputs of a linear map on [x_in, m_old].
    Returns (m_new, r, v, a) with a = proj @ x_in.
    """
    width = m_old.shape[0]
    a = np.dot(proj, x_in)
    gi = np.concatenate((x_in, m_old))
    pre = np.dot(gate_w, gi) + gate_b
    r = 1.0 / (1.0 + np.exp(-pre[:width]))
    v = 1.0 / (1.0 + np.exp(-pre[width:]))
    m_new = r * m_old + v * a
    return m_new, r, v, a


def memory_write_backward(dm_new, m_old, x_in, r, v, a, proj, gate_w):
    """Backward of memory_write_forward given d(loss)/dm_new.

    Returns (dm_old, dx_in, dproj, dgate_w, dgate_b).
    """
    n_in = x_in.shape[0]
    dr = dm_new * m_old
    dv = dm_new * a
    dm_old = dm_new * r
    da = dm_new * v
    dpre = np.concatenate((dr * r * (1.0 - r), dv * v * (1.0 - v)))
    gi = np.concatenate((x_in, m_old))
    dgate_w = dpre.reshape(dpre.shape[0], 1) * gi.reshape(1, gi.shape[0])
    dgi = np.dot(dpre, gate_w)
    dx_in = dgi[:n_in] + np.dot(da, proj)
    dm_old = dm_old + dgi[n_in:]
    dproj = da.reshape(da.shape[0], 1) * x_in.reshape(1, n_in)
    return dm_old, dx_in, dproj, dgate_w, dpre


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam step on flat views; t is the step after increment."""
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * g * g
    p[:] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


PURE = {
    "lstm_forward": lstm_forward,
    "lstm_backward": lstm_backward,
    "memory_read_forward": memory_read_forward,
    "memory_read_backward": memory_read_backward,
    "memory_write_forward": memory_write_forward,
    "memory_write_backward": memory_write_backward,
    "adam_update": adam_update,
}

USING_NUMBA = False
JITTED = {}

_flag = os.environ.get("MEMSTAGE_NUMBA", "1").strip().lower()
if _flag not in ("0", "false", "off", "no"):
    try:
        from numba import njit

        for _name, _fn in PURE.items():
            JITTED[_name] = njit(cache=True, nogil=True)(_fn)
        lstm_forward = JITTED["lstm_forward"]
        lstm_backward = JITTED["lstm_backward"]
        memory_read_forward = JITTED["memory_read_forward"]
        memory_read_backward = JITTED["memory_read_backward"]
        memory_write_forward = JITTED["memory_write_forward"]
        memory_write_backward = JITTED["memory_write_backward"]
        adam_update = JITTED["adam_update"]
        USING_NUMBA = True
    except ImportError:
        pass
