"""Shared test oracles: central finite differences and brute-force KNN."""

import numpy as np

from gibrss.autodiff import Tensor, backward


def finite_difference(fn, arrays, eps=1e-5):
    """Central-difference gradients of scalar fn(*arrays) wrt each array."""
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*arrays)
            flat[i] = orig - eps
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def autodiff_gradients(fn, arrays):
    """Gradients of scalar fn(*tensors) via the tape."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss, tensors)
    return [t.grad for t in tensors]


def max_rel_error(a, b):
    """Max |a-b| / max(1, |b|), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def check_gradients(build_loss, arrays, rtol=1e-4, eps=1e-5):
    """Compare tape gradients of build_loss against central differences.

    build_loss receives Tensors when differentiating on the tape and raw
    arrays (wrapped on the fly) for the finite-difference probe; it must
    return a scalar. Returns the worst relative error seen.
    """
    def numeric(*arrs):
        out = build_loss(*[Tensor(a) for a in arrs])
        return float(out.data)

    fd = finite_difference(numeric, [a.copy() for a in arrays], eps=eps)
    ad_grads = autodiff_gradients(build_loss, arrays)
    worst = 0.0
    for g_ad, g_fd in zip(ad_grads, fd):
        worst = max(worst, max_rel_error(g_ad, g_fd))
    assert worst < rtol, f"gradient mismatch: {worst:.3g} >= {rtol}"
    return worst


def reference_ge_block(x, in_neighbors, params):
    """Slow reference of the attention block over adjacency lists.

    Independent of the package's dense slot layout: plain Python loops,
    per-destination softmax over (in-neighbors + self), mean-scaled
    neighbor messages plus the self term, per-head update, residual
    projection and FFN. `in_neighbors[i]` lists the kept sources of i.
    """
    def leaky(v, slope=0.2):
        return np.where(v > 0, v, slope * v)

    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    h = params.heads
    hd = d // h
    xin = x @ params.w_in.data
    head_outs = []
    for k in range(h):
        xk = xin[:, k * hd:(k + 1) * hd]
        w = params.attn[k].data.reshape(-1)
        out_k = np.zeros((n, hd))
        for i in range(n):
            neigh = list(in_neighbors[i])
            scores = [float(np.concatenate([xk[i], xk[j]]) @ w) for j in neigh]
            scores.append(float(np.concatenate([xk[i], xk[i]]) @ w))
            e = np.exp(np.array(scores) - max(scores))
            omega = e / e.sum()
            acc = np.zeros(hd)
            for idx, j in enumerate(neigh):
                acc += omega[idx] * (xk[j] @ params.w_theta1[k].data)
            if neigh:
                acc /= len(neigh)
            acc += omega[-1] * (xk[i] @ params.w_theta2[k].data)
            out_k[i] = leaky(acc)
        head_outs.append(out_k @ params.w_update[k].data)
    conv = np.concatenate(head_outs, axis=1)
    y = leaky(conv) @ params.w_out.data + x
    return leaky(y @ params.w_ffn1.data) @ params.w_ffn2.data + y


def brute_force_knn(features, k):
    """O(n^2) nearest-neighbor edge set with explicit index tie-breaks.

    Returns a sorted list of (src, dst) pairs; independent of the
    package's vectorized implementation.
    """
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    kk = min(k, n - 1)
    edges = []
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            d = float(((feats[i] - feats[j]) ** 2).sum())
            dists.append((d, j))
        dists.sort(key=lambda t: (t[0], t[1]))
        for d, j in dists[:kk]:
            edges.append((j, i))
    return sorted(edges)
