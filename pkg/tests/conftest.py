"""Shared test utilities: finite-difference gradients and brute-force oracles.

Oracles here are deliberately written with plain Python loops and math-module
scalar functions so they share no code path with the vectorized
implementations they check.
"""

import math

import numpy as np
import pytest


def finite_difference_gradients(f, params, h=1e-5, reset=None):
    """Central finite differences of the scalar ``f()`` w.r.t. each param's data.

    ``reset`` (when given) runs before every evaluation of ``f`` so stochastic
    layers can re-seed and produce identical masks on both sides of the stencil.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            if reset is not None:
                reset()
            f_plus = f()
            flat[k] = orig - h
            if reset is not None:
                reset()
            f_minus = f()
            flat[k] = orig
            g[k] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g.reshape(p.data.shape))
    if reset is not None:
        reset()
    return grads


def relative_gradient_error(analytic, numeric):
    """Max elementwise gap, normalized by the largest gradient magnitude."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.zeros_like(n) if a is None else a
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0) / scale))
    return worst


def assert_gradients_match(analytic, numeric, rtol=1e-4):
    err = relative_gradient_error(analytic, numeric)
    assert err < rtol, f"gradient mismatch: relative error {err:.3e} >= {rtol}"


# -- brute-force oracles -------------------------------------------------------


def matmul_oracle(a, b):
    """Naive triple-loop matrix multiply."""
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def mae_oracle(y, y_hat):
    n, t = np.shape(y)
    total = 0.0
    for i in range(n):
        for j in range(t):
            total += abs(y[i][j] - y_hat[i][j])
    return total / (n * t)


def mse_oracle(y, y_hat):
    n, t = np.shape(y)
    total = 0.0
    for i in range(n):
        for j in range(t):
            total += (y[i][j] - y_hat[i][j]) ** 2
    return total / (n * t)


def bell_oracle(y, y_hat, sigma, gamma, scale):
    n, t = np.shape(y)
    total = 0.0
    for i in range(n):
        for j in range(t):
            r = scale * (y[i][j] - y_hat[i][j])
            total += gamma * (1.0 - math.exp(-(r * r) / (2.0 * sigma * sigma)))
    return total / (n * t)


def ms_pairs_oracle(labels, extremes, sims, cfg):
    """Exhaustive per-anchor pair enumeration following the mining rule."""
    rows, traits = np.shape(labels)
    out = {}
    for j in range(traits):
        for i in range(rows):
            if cfg.extreme_anchors_only and not extremes[i][j]:
                continue
            pos = [k for k in range(rows) if k != i and labels[k][j] == labels[i][j]]
            neg = [k for k in range(rows) if labels[k][j] != labels[i][j]]
            if not pos or not neg:
                continue
            weakest_pos = min(sims[i][k] for k in pos)
            hardest_neg = max(sims[i][k] for k in neg)
            mined_neg = [k for k in neg if sims[i][k] > weakest_pos - cfg.mining_margin]
            mined_pos = [k for k in pos if sims[i][k] < hardest_neg + cfg.mining_margin]
            if not mined_pos or not mined_neg:
                continue
            out[(i, j)] = (mined_pos, mined_neg)
    return out


def ms_loss_oracle(embeddings, labels, cfg, extremes=None, n_samples=None):
    """Direct-formula MS loss: python loops, scalar math, no vectorization."""
    emb = [list(map(float, row)) for row in np.asarray(embeddings)]
    rows = len(emb)
    if cfg.normalize_embeddings:
        emb = [[v / math.sqrt(sum(x * x for x in row)) for v in row] for row in emb]
    labels = np.asarray(labels)
    if extremes is None:
        extremes = [[labels[i][j] in (1, 4) for j in range(labels.shape[1])]
                    for i in range(rows)]
    sims = [[sum(a * b for a, b in zip(emb[i], emb[k])) for k in range(rows)]
            for i in range(rows)]
    pairs = ms_pairs_oracle(labels, extremes, sims, cfg)
    total = 0.0
    for (i, _j), (pos, neg) in pairs.items():
        pos_sum = sum(math.exp(-cfg.alpha * (sims[i][k] - cfg.lam)) for k in pos)
        neg_sum = sum(math.exp(cfg.beta * (sims[i][k] - cfg.lam)) for k in neg)
        total += math.log(1.0 + pos_sum) / cfg.alpha
        total += math.log(1.0 + neg_sum) / cfg.beta
    if not pairs:
        return 0.0
    if cfg.literal_normalization:
        return total / (5.0 * (n_samples if n_samples is not None else rows))
    return total / len(pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
