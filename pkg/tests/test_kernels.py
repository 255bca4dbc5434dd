"""The jitted kernels and the pure-numpy fallbacks must agree closely."""

import numpy as np
import pytest

from memstage import _kernels

pytestmark = pytest.mark.skipif(
    not _kernels.USING_NUMBA, reason="numba disabled; only one path to compare"
)

ATOL = 1e-12
RTOL = 1e-10


def _pair(name):
    return _kernels.PURE[name], _kernels.JITTED[name]


def test_lstm_forward_paths_agree():
    rng = np.random.default_rng(0)
    pure, jit = _pair("lstm_forward")
    for _ in range(20):
        n_in, n = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        args = (rng.normal(size=n_in), rng.normal(size=n), rng.normal(size=n),
                rng.normal(size=(4 * n, n_in)), rng.normal(size=(4 * n, n)),
                rng.normal(size=4 * n))
        for a, b in zip(pure(*args), jit(*args)):
            np.testing.assert_allclose(a, b, atol=ATOL, rtol=RTOL)


def test_lstm_backward_paths_agree():
    rng = np.random.default_rng(1)
    fwd = _kernels.PURE["lstm_forward"]
    pure, jit = _pair("lstm_backward")
    for _ in range(20):
        n_in, n = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x, hp, cp = rng.normal(size=n_in), rng.normal(size=n), rng.normal(size=n)
        wx, wh, b = rng.normal(size=(4 * n, n_in)), rng.normal(size=(4 * n, n)), rng.normal(size=4 * n)
        h, c, i, f, o, g = fwd(x, hp, cp, wx, wh, b)
        args = (rng.normal(size=n), rng.normal(size=n), x, hp, cp, i, f, o, g, c, wx, wh)
        for a, bb in zip(pure(*args), jit(*args)):
            np.testing.assert_allclose(a, bb, atol=ATOL, rtol=RTOL)


@pytest.mark.parametrize("mul", [False, True])
def test_memory_read_paths_agree(mul):
    rng = np.random.default_rng(2)
    fpure, fjit = _pair("memory_read_forward")
    bpure, bjit = _pair("memory_read_backward")
    for _ in range(20):
        L, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        occupied = int(rng.integers(0, L + 1))
        slots = np.zeros((L, d))
        slots[:occupied] = rng.normal(size=(occupied, d))
        strengths, key = rng.normal(size=L), rng.normal(size=d)
        e1, w1 = fpure(slots, occupied, strengths, key, mul)
        e2, w2 = fjit(slots, occupied, strengths, key, mul)
        np.testing.assert_allclose(e1, e2, atol=ATOL, rtol=RTOL)
        np.testing.assert_allclose(w1, w2, atol=ATOL, rtol=RTOL)
        de = rng.normal(size=d)
        for a, b in zip(bpure(slots, occupied, strengths, key, w1, de, mul),
                        bjit(slots, occupied, strengths, key, w1, de, mul)):
            np.testing.assert_allclose(a, b, atol=ATOL, rtol=RTOL)


def test_memory_write_paths_agree():
    rng = np.random.default_rng(3)
    fpure, fjit = _pair("memory_write_forward")
    bpure, bjit = _pair("memory_write_backward")
    for _ in range(20):
        d, n_in = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        m_old, x_in = rng.normal(size=d), rng.normal(size=n_in)
        proj = rng.normal(size=(d, n_in))
        gw, gb = rng.normal(size=(2 * d, n_in + d)), rng.normal(size=2 * d)
        out1 = fpure(m_old, x_in, proj, gw, gb)
        out2 = fjit(m_old, x_in, proj, gw, gb)
        for a, b in zip(out1, out2):
            np.testing.assert_allclose(a, b, atol=ATOL, rtol=RTOL)
        m_new, r, v, a_vec = out1
        dm = rng.normal(size=d)
        for a, b in zip(bpure(dm, m_old, x_in, r, v, a_vec, proj, gw),
                        bjit(dm, m_old, x_in, r, v, a_vec, proj, gw)):
            np.testing.assert_allclose(a, b, atol=ATOL, rtol=RTOL)


def test_adam_paths_agree():
    rng = np.random.default_rng(4)
    pure, jit = _pair("adam_update")
    p1 = rng.normal(size=12)
    p2 = p1.copy()
    m1 = np.zeros(12); v1 = np.zeros(12)
    m2 = np.zeros(12); v2 = np.zeros(12)
    for t in range(1, 6):
        g = rng.normal(size=12)
        pure(p1, g, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8)
        jit(p2, g, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(p1, p2, atol=ATOL, rtol=RTOL)
    np.testing.assert_allclose(m1, m2, atol=ATOL, rtol=RTOL)
    np.testing.assert_allclose(v1, v2, atol=ATOL, rtol=RTOL)
