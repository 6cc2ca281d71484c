"""Hot loops of the edge-featured attention layer.

Each kernel exists twice: a numba ``@njit`` loop version and a vectorized
numpy version. Set ``SKAN_NUMBA=0`` in the environment (before import) to
make the numpy path the default; it is also the default when numba is not
importable. Passing ``use_numba`` explicitly overrides the default.

Shapes (B graphs, H heads, n nodes, m attention width)::

    src, dst : [B, H, n, m]     per-node projections of the centre / neighbour state
    rel      : [B, H, n, n, m]  projected relation features, rel[b,h,i,k]
    mask     : [B, n, n] bool   attention support, must include the diagonal
    att      : [H, m]           attention vector
    gamma    : [B, H, n, n]     row-stochastic over mask
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("SKAN_NUMBA", "1") != "0"


def _forward_numpy(src, dst, rel, mask, att, slope):
    z = src[:, :, :, None, :] + dst[:, :, None, :, :] + rel
    lz = np.where(z > 0, z, slope * z)
    logits = np.einsum("bhikm,hm->bhik", lz, att)
    logits = np.where(mask[:, None], logits, -np.inf)
    logits -= logits.max(axis=3, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=3, keepdims=True)


def _backward_numpy(g_gamma, gamma, src, dst, rel, mask, att, slope):
    g_logits = gamma * (g_gamma - (gamma * g_gamma).sum(axis=3, keepdims=True))
    z = src[:, :, :, None, :] + dst[:, :, None, :, :] + rel
    pos = z > 0
    lz = np.where(pos, z, slope * z)
    g_att = np.einsum("bhik,bhikm->hm", g_logits, lz)
    g_z = g_logits[..., None] * att[None, :, None, None, :]
    g_z *= np.where(pos, 1.0, slope)
    return g_z.sum(axis=3), g_z.sum(axis=2), g_z, g_att


if numba is not None:

    @numba.njit(cache=True)
    def _forward_numba(src, dst, rel, mask, att, slope):
        B, H, n, m = src.shape
        gamma = np.zeros((B, H, n, n))
        row = np.empty(n)
        for b in range(B):
            for h in range(H):
                for i in range(n):
                    best = -np.inf
                    for k in range(n):
                        if not mask[b, i, k]:
                            continue
                        s = 0.0
                        for q in range(m):
                            z = src[b, h, i, q] + dst[b, h, k, q] + rel[b, h, i, k, q]
                            if z <= 0.0:
                                z *= slope
                            s += att[h, q] * z
                        row[k] = s
                        if s > best:
                            best = s
                    total = 0.0
                    for k in range(n):
                        if mask[b, i, k]:
                            e = np.exp(row[k] - best)
                            gamma[b, h, i, k] = e
                            total += e
                    for k in range(n):
                        gamma[b, h, i, k] /= total
        return gamma

    @numba.njit(cache=True)
    def _backward_numba(g_gamma, gamma, src, dst, rel, mask, att, slope):
        B, H, n, m = src.shape
        g_src = np.zeros((B, H, n, m))
        g_dst = np.zeros((B, H, n, m))
        g_rel = np.zeros((B, H, n, n, m))
        g_att = np.zeros((H, m))
        for b in range(B):
            for h in range(H):
                for i in range(n):
                    dot = 0.0
                    for k in range(n):
                        dot += gamma[b, h, i, k] * g_gamma[b, h, i, k]
                    for k in range(n):
                        if not mask[b, i, k]:
                            continue
                        g_l = gamma[b, h, i, k] * (g_gamma[b, h, i, k] - dot)
                        for q in range(m):
                            z = src[b, h, i, q] + dst[b, h, k, q] + rel[b, h, i, k, q]
                            if z > 0.0:
                                g_att[h, q] += g_l * z
                                g_z = g_l * att[h, q]
                            else:
                                g_att[h, q] += g_l * slope * z
                                g_z = g_l * att[h, q] * slope
                            g_src[b, h, i, q] += g_z
                            g_dst[b, h, k, q] += g_z
                            g_rel[b, h, i, k, q] = g_z
        return g_src, g_dst, g_rel, g_att


def _require_numba():
    if numba is None:
        raise RuntimeError("numba kernels requested but numba is not installed")


def attention_forward(src, dst, rel, mask, att, slope, use_numba=None):
    """Masked softmax over ``att . LeakyReLU(src_i + dst_k + rel_ik)``."""
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        _require_numba()
        return _forward_numba(src, dst, rel, mask, att, float(slope))
    return _forward_numpy(src, dst, rel, mask, att, slope)


def attention_backward(g_gamma, gamma, src, dst, rel, mask, att, slope, use_numba=None):
    """Gradients of a scalar w.r.t. ``src, dst, rel, att`` given ``dL/dgamma``.

    The LeakyReLU derivative at exactly zero is taken as ``slope``.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        _require_numba()
        return _backward_numba(g_gamma, gamma, src, dst, rel, mask, att, float(slope))
    return _backward_numpy(g_gamma, gamma, src, dst, rel, mask, att, slope)
