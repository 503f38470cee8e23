"""Compiled inner loops for the episode simulators.

The kernels take every random number pre-drawn (uniforms for the environment,
uniforms or standard normals for the policy) so that they consume exactly the
same streams as the pure-Python episode loops and produce identical traces.
"""

import math

import numpy as np
from numba import njit

SAA, TS, RANDOM, TABLE = 0, 1, 2, 3
OK, NOT_PD, ZERO_LIKELIHOOD = 0, 1, 2


@njit(cache=True)
def _next_state(cum_row, u):
    j = 0
    last = cum_row.shape[0] - 1
    while j < last and u >= cum_row[j]:
        j += 1
    return j


@njit(cache=True)
def _ts_pick(x, B_inv, f, z, scale):
    """Sample each arm's score ``x . theta`` and return the argmin arm.

    ``x . theta`` with ``theta ~ N(B^-1 f, scale^2 B^-1)`` is normal with mean
    ``x . B^-1 f`` and variance ``scale^2 x' B^-1 x``; sampling that scalar
    directly is equivalent for the argmin. Returns -1 on a non-positive
    variance.
    """
    A, D = f.shape
    best = 0
    best_score = np.inf
    for a in range(A):
        mean = 0.0
        var = 0.0
        for k in range(D):
            bx = 0.0
            bf = 0.0
            for l in range(D):
                bx += B_inv[a, k, l] * x[l]
                bf += B_inv[a, k, l] * f[a, l]
            mean += x[k] * bf
            var += x[k] * bx
        if not var > 0.0:
            return -1
        score = mean + scale * math.sqrt(var) * z[a]
        if score < best_score:
            best_score = score
            best = a
    return best


@njit(cache=True)
def _ts_update(x, a, value, B, B_inv, f):
    D = x.shape[0]
    bx = np.zeros(D)
    for k in range(D):
        acc = 0.0
        for l in range(D):
            acc += B_inv[a, k, l] * x[l]
        bx[k] = acc
    denom = 1.0
    for k in range(D):
        denom += x[k] * bx[k]
    for k in range(D):
        f[a, k] += x[k] * value
        for l in range(D):
            B[a, k, l] += x[k] * x[l]
            B_inv[a, k, l] -= bx[k] * bx[l] / denom


@njit(cache=True)
def dsa_episode(p_cum, s0, u_env, p_miss, miss_index, contexts, ties, n_ties,
                loss_table, kind, u_pol, z_pol, scale, B, B_inv, f, table):
    """Run one spectrum-access episode.

    Observation indices ``0..K-1`` mean "saw state i"; ``miss_index`` is the
    all-zeros observation. The policy always sees the previous observation.
    Returns ``(status, states, observations, actions, losses)``.
    """
    n = u_env.shape[0]
    A = loss_table.shape[1]
    states = np.empty(n, np.int64)
    obs = np.empty(n, np.int64)
    acts = np.empty(n, np.int64)
    losses = np.empty(n)
    s = s0
    o = s0
    for t in range(n):
        if kind == SAA:
            m = n_ties[o]
            k = int(u_pol[t] * m)
            if k >= m:
                k = m - 1
            a = ties[o, k]
        elif kind == TS:
            a = _ts_pick(contexts[o], B_inv, f, z_pol[t], scale)
            if a < 0:
                return NOT_PD, states[:t], obs[:t], acts[:t], losses[:t]
        elif kind == RANDOM:
            a = int(u_pol[t] * A)
            if a >= A:
                a = A - 1
        else:
            a = table[o]
        prev = o
        s = _next_state(p_cum[s], u_env[t, 0])
        value = loss_table[s, a]
        if u_env[t, 1] < p_miss:
            o = miss_index
        else:
            o = s
        if kind == TS:
            _ts_update(contexts[prev], a, value, B, B_inv, f)
        states[t] = s
        obs[t] = o
        acts[t] = a
        losses[t] = value
    return OK, states, obs, acts, losses


@njit(cache=True)
def _mode_product(b, mat, k, pre, post):
    """``b`` viewed as (pre, k, post); contract the middle axis with ``mat``."""
    out = np.zeros_like(b)
    for p in range(pre):
        for i in range(k):
            base_in = (p * k + i) * post
            for j in range(k):
                w = mat[i, j]
                if w == 0.0:
                    continue
                base_out = (p * k + j) * post
                for q in range(post):
                    out[base_out + q] += w * b[base_in + q]
    return out


@njit(cache=True)
def predict_belief(b, mats, dims):
    """``b @ kron(P_1, ..., P_M)`` without forming the Kronecker product."""
    M = dims.shape[0]
    total = b.shape[0]
    pre = 1
    out = b
    for m in range(M):
        k = dims[m]
        post = total // (pre * k)
        out = _mode_product(out, mats[m, :k, :k], k, pre, post)
        pre *= k
    return out


@njit(cache=True)
def observation_likelihood(q, a, obs, dims):
    """Vector ``prod_m q_m(a)[i_m, o_m]`` over composite states ``i``."""
    M = dims.shape[0]
    lik = np.ones(1)
    for m in range(M):
        k = dims[m]
        col = q[a, m, :k, obs[m]]
        nxt = np.empty(lik.shape[0] * k)
        for p in range(lik.shape[0]):
            for i in range(k):
                nxt[p * k + i] = lik[p] * col[i]
        lik = nxt
    return lik


@njit(cache=True)
def tracking_episode(mats, cums, dims, s0, q, q_cum, loss_table, u_env,
                     kind, lookup, buckets, n_buckets, u_pol, z_pol, scale,
                     B, B_inv, f):
    """Run one multi-target tracking episode with an exact belief filter.

    The policy acts on the predicted belief for the coming CPI. ``u_env[t]``
    holds M transition uniforms followed by M observation uniforms. Returns
    ``(status, states, observations, actions, losses)``.
    """
    n = u_env.shape[0]
    M = dims.shape[0]
    K = loss_table.shape[0]
    A = loss_table.shape[1]
    strides = np.ones(M, np.int64)
    for m in range(M - 2, -1, -1):
        strides[m] = strides[m + 1] * dims[m + 1]
    states = np.empty(n, np.int64)
    observed = np.empty(n, np.int64)
    acts = np.empty(n, np.int64)
    losses = np.empty(n)
    b = predict_belief(np.full(K, 1.0 / K), mats, dims)
    s = s0.copy()
    o = np.zeros(M, np.int64)
    x = np.zeros(n_buckets + 1)
    for t in range(n):
        if kind == TS:
            x[:] = 0.0
            for i in range(K):
                x[buckets[i]] += b[i]
            x[n_buckets] = 1.0
            a = _ts_pick(x, B_inv, f, z_pol[t], scale)
            if a < 0:
                return NOT_PD, states[:t], observed[:t], acts[:t], losses[:t]
        elif kind == RANDOM:
            a = int(u_pol[t] * A)
            if a >= A:
                a = A - 1
        else:
            best = 0
            for i in range(1, K):
                if b[i] > b[best]:
                    best = i
            a = lookup[best]
        idx = 0
        for m in range(M):
            s[m] = _next_state(cums[m, s[m], :dims[m]], u_env[t, m])
            idx += s[m] * strides[m]
        value = loss_table[idx, a]
        oidx = 0
        for m in range(M):
            o[m] = _next_state(q_cum[a, m, s[m], :dims[m]], u_env[t, M + m])
            oidx += o[m] * strides[m]
        if kind == TS:
            _ts_update(x, a, value, B, B_inv, f)
        post = b * observation_likelihood(q, a, o, dims)
        total = post.sum()
        if not total > 0.0:
            return ZERO_LIKELIHOOD, states[:t], observed[:t], acts[:t], losses[:t]
        b = predict_belief(post / total, mats, dims)
        states[t] = idx
        observed[t] = oidx
        acts[t] = a
        losses[t] = value
    return OK, states, observed, acts, losses
