"""Numba-fused attention softmax (optional fast path).

The causal softmax and its backward are the bandwidth hogs of training: the
[B*H, T, T] score tensor otherwise takes seven separate numpy passes. The
fused kernels do one triangular pass per row and zero the future positions,
which the backward relies on. Set SCHEMAKIT_NO_NUMBA=1 (or run without numba
installed) to fall back to the pure-numpy implementation in nn.py; results
are identical to float rounding.
"""

from __future__ import annotations

import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("SCHEMAKIT_NO_NUMBA"):
    try:
        import numba
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=False, cache=True)
    def _causal_softmax(score, scale):
        R, T, _ = score.shape
        for r in prange(R):
            for t in range(T):
                row = score[r, t]
                m = row[0] * scale
                for j in range(1, t + 1):
                    v = row[j] * scale
                    if v > m:
                        m = v
                total = 0.0
                for j in range(t + 1):
                    e = np.exp(row[j] * scale - m)
                    row[j] = e
                    total += e
                inv = 1.0 / total
                for j in range(t + 1):
                    row[j] *= inv
                for j in range(t + 1, T):
                    row[j] = 0.0

    @njit(parallel=True, fastmath=False, cache=True)
    def _causal_softmax_grad(att, datt, scale):
        R, T, _ = att.shape
        out = np.empty_like(att)
        for r in prange(R):
            for t in range(T):
                arow = att[r, t]
                drow = datt[r, t]
                dot = 0.0
                for j in range(t + 1):
                    dot += arow[j] * drow[j]
                orow = out[r, t]
                for j in range(t + 1):
                    orow[j] = arow[j] * (drow[j] - dot) * scale
                for j in range(t + 1, T):
                    orow[j] = 0.0
        return out

    @njit(parallel=True, fastmath=False, cache=True)
    def _layernorm(x2d, g, b, eps):
        R, D = x2d.shape
        out = np.empty_like(x2d)
        xhat = np.empty_like(x2d)
        inv = np.empty(R, dtype=x2d.dtype)
        for r in prange(R):
            row = x2d[r]
            mu = 0.0
            for d in range(D):
                mu += row[d]
            mu /= D
            var = 0.0
            for d in range(D):
                c = row[d] - mu
                var += c * c
            var /= D
            iv = 1.0 / np.sqrt(var + eps)
            inv[r] = iv
            for d in range(D):
                h = (row[d] - mu) * iv
                xhat[r, d] = h
                out[r, d] = h * g[d] + b[d]
        return out, xhat, inv

    @njit(parallel=False, fastmath=False, cache=True)
    def _layernorm_bwd(dout2d, xhat2d, inv, g):
        R, D = dout2d.shape
        dx = np.empty_like(dout2d)
        dg = np.zeros(D, dtype=np.float64)
        db = np.zeros(D, dtype=np.float64)
        for r in range(R):
            m1 = 0.0
            m2 = 0.0
            for d in range(D):
                dh = dout2d[r, d] * g[d]
                m1 += dh
                m2 += dh * xhat2d[r, d]
                dg[d] += dout2d[r, d] * xhat2d[r, d]
                db[d] += dout2d[r, d]
            m1 /= D
            m2 /= D
            iv = inv[r]
            for d in range(D):
                dh = dout2d[r, d] * g[d]
                dx[r, d] = iv * (dh - m1 - xhat2d[r, d] * m2)
        return dx, dg, db

    def causal_softmax_(scores4d, scale: float) -> None:
        """In-place causal softmax over the last two dims of [B, H, T, T]."""
        b, h, t, _ = scores4d.shape
        _causal_softmax(scores4d.reshape(b * h, t, t), scores4d.dtype.type(scale))

    def causal_softmax_grad(att4d, datt4d, scale: float):
        b, h, t, _ = att4d.shape
        out = _causal_softmax_grad(
            att4d.reshape(b * h, t, t), datt4d.reshape(b * h, t, t), att4d.dtype.type(scale)
        )
        return out.reshape(b, h, t, t)

    def layernorm(x, g, b, eps: float):
        shape = x.shape
        out, xhat, inv = _layernorm(x.reshape(-1, shape[-1]), g, b, x.dtype.type(eps))
        return (
            out.reshape(shape),
            xhat.reshape(shape),
            inv.reshape(shape[:-1] + (1,)),
        )

    def layernorm_bwd(dout, xhat, inv, g):
        shape = dout.shape
        dx, dg, db = _layernorm_bwd(
            dout.reshape(-1, shape[-1]), xhat.reshape(-1, shape[-1]), inv.ravel(), g
        )
        return dx.reshape(shape), dg.astype(dout.dtype), db.astype(dout.dtype)

else:
    causal_softmax_ = None
    causal_softmax_grad = None
    layernorm = None
    layernorm_bwd = None
