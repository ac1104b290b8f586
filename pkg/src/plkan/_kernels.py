"""Hot loops for batch evaluation and per-record training.

Both kernels walk the model's flat parameter buffer using the layout
arrays built by ``KanModel``.  They are compiled ``nogil`` so that the
round workers of the parallel trainer run truly concurrently; keep any
``fastmath``-style reassociation off, the test suite relies on
bit-reproducible arithmetic.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _locate(y_min, delta, nc, y):
    lo = y_min
    hi = y_min + delta * (nc - 1)
    if y < lo:
        y = lo
    elif y > hi:
        y = hi
    s = (y - lo) / delta
    k = int(np.floor(s))
    if k > nc - 2:
        k = nc - 2
    f = s - k
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    return k, f


@njit(cache=True, nogil=True)
def forward_batch(values, layer_m, layer_n, layer_val_off, layer_row_stride,
                  layer_col_off, col_nc, col_ymin, col_delta, col_row_off,
                  X, out):
    L = layer_m.shape[0]
    max_dim = X.shape[1]
    for l in range(L):
        if layer_m[l] > max_dim:
            max_dim = layer_m[l]
    cur = np.empty(max_dim)
    nxt = np.empty(max_dim)
    q = layer_m[L - 1]
    for rec in range(X.shape[0]):
        for j in range(X.shape[1]):
            cur[j] = X[rec, j]
        for l in range(L):
            n = layer_n[l]
            m = layer_m[l]
            cbase = layer_col_off[l]
            voff = layer_val_off[l]
            stride = layer_row_stride[l]
            for i in range(m):
                row = voff + i * stride
                acc = 0.0
                for j in range(n):
                    c = cbase + j
                    k, f = _locate(col_ymin[c], col_delta[c], col_nc[c], cur[j])
                    p0 = row + col_row_off[c] + k
                    acc += (1.0 - f) * values[p0] + f * values[p0 + 1]
                nxt[i] = acc
            tmp = cur
            cur = nxt
            nxt = tmp
        for i in range(q):
            out[rec, i] = cur[i]


@njit(cache=True, nogil=True)
def train_batch(values, layer_m, layer_n, layer_val_off, layer_row_stride,
                layer_col_off, col_nc, col_ymin, col_delta, col_row_off,
                X, Z, order, mu, prior_norms):
    """Apply the per-record damped update to every record in ``order``.

    For each record: forward pass caching the active segments, output
    residual, residual propagation through all layers via the segment
    slopes of the pre-update parameters, then the two-node update of
    every function with the layer's residual share ``mu / in_dim``.
    Stores the pre-update residual norm of record ``t`` in
    ``prior_norms[t]`` and mutates ``values`` in place.
    """
    L = layer_m.shape[0]
    max_dim = X.shape[1]
    max_n = X.shape[1]
    for l in range(L):
        if layer_m[l] > max_dim:
            max_dim = layer_m[l]
        if layer_n[l] > max_n:
            max_n = layer_n[l]
    act = np.empty((L + 1, max_dim))
    kk = np.empty((L, max_n), dtype=np.int64)
    ff = np.empty((L, max_n))
    resid = np.empty((L, max_dim))
    q = layer_m[L - 1]
    for t in range(order.shape[0]):
        rec = order[t]
        for j in range(X.shape[1]):
            act[0, j] = X[rec, j]
        for l in range(L):
            n = layer_n[l]
            m = layer_m[l]
            cbase = layer_col_off[l]
            voff = layer_val_off[l]
            stride = layer_row_stride[l]
            for j in range(n):
                c = cbase + j
                k, f = _locate(col_ymin[c], col_delta[c], col_nc[c], act[l, j])
                kk[l, j] = k
                ff[l, j] = f
            for i in range(m):
                row = voff + i * stride
                acc = 0.0
                for j in range(n):
                    c = cbase + j
                    p0 = row + col_row_off[c] + kk[l, j]
                    f = ff[l, j]
                    acc += (1.0 - f) * values[p0] + f * values[p0 + 1]
                act[l + 1, i] = acc
        norm2 = 0.0
        for i in range(q):
            r = Z[rec, i] - act[L, i]
            resid[L - 1, i] = r
            norm2 += r * r
        prior_norms[t] = np.sqrt(norm2)
        # residuals for all layers come from pre-update parameters
        for l in range(L - 1, 0, -1):
            n = layer_n[l]
            m = layer_m[l]
            cbase = layer_col_off[l]
            voff = layer_val_off[l]
            stride = layer_row_stride[l]
            for j in range(n):
                c = cbase + j
                p0 = col_row_off[c] + kk[l, j]
                acc = 0.0
                for i in range(m):
                    pi = voff + i * stride + p0
                    acc += (values[pi + 1] - values[pi]) * resid[l, i]
                resid[l - 1, j] = acc / col_delta[c]
        for l in range(L):
            n = layer_n[l]
            m = layer_m[l]
            cbase = layer_col_off[l]
            voff = layer_val_off[l]
            stride = layer_row_stride[l]
            mu_eff = mu / n
            for i in range(m):
                d = mu_eff * resid[l, i]
                row = voff + i * stride
                for j in range(n):
                    c = cbase + j
                    p0 = row + col_row_off[c] + kk[l, j]
                    f = ff[l, j]
                    values[p0] += d * (1.0 - f)
                    values[p0 + 1] += d * f


@njit(cache=True, nogil=True)
def spin(n):
    """Pure arithmetic burn loop, used to probe hardware thread scaling."""
    s = 0.0
    for i in range(n):
        s += i * 1e-9
        s *= 0.9999999
    return s


def warmup() -> None:
    """Force JIT compilation so timed sections never pay for it.

    Both kernels get called with contiguous arrays and with strided
    column views of a record block (the layout ``Dataset`` feeds them),
    covering every signature the trainers use.
    """
    values = np.zeros(4)
    meta_i = np.array([1], dtype=np.int64)
    zero_i = np.array([0], dtype=np.int64)
    nc = np.array([4], dtype=np.int64)
    ymin = np.array([0.0])
    delta = np.array([1.0])
    stride = np.array([4], dtype=np.int64)
    records = np.zeros((2, 3))
    order = np.zeros(2, dtype=np.int64)
    for X, Z in ((records[:, :1], records[:, 1:2]),
                 (np.zeros((2, 1)), np.zeros((2, 1)))):
        forward_batch(values, meta_i, meta_i, zero_i, stride, zero_i,
                      nc, ymin, delta, zero_i, X, np.empty((2, 1)))
        train_batch(values, meta_i, meta_i, zero_i, stride, zero_i,
                    nc, ymin, delta, zero_i, X, Z, order, 0.5, np.empty(2))
