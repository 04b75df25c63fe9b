"""Plain-Python reference implementations used as test oracles.

Everything here is written with scalar loops and the ``math`` module only, so
it shares no code path with the vectorised package.
"""

import math


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def vecmat(v, W):
    """Row vector ``v`` times matrix ``W`` given as nested lists."""
    return [sum(v[i] * W[i][j] for i in range(len(v))) for j in range(len(W[0]))]


def gru_scalar(m, s, P):
    """One GRU step with every component computed in its own loop."""
    H = len(s)
    out = []
    for j in range(H):
        def lin(Wi, bi, Wh, bh):
            return (sum(m[k] * P[Wi][k][j] for k in range(len(m))) + P[bi][j]
                    + sum(s[k] * P[Wh][k][j] for k in range(H)) + P[bh][j])

        r = sigmoid(lin("W_ir", "b_ir", "W_hr", "b_hr"))
        z = sigmoid(lin("W_iz", "b_iz", "W_hz", "b_hz"))
        hn = sum(s[k] * P["W_hn"][k][j] for k in range(H)) + P["b_hn"][j]
        n = math.tanh(sum(m[k] * P["W_in"][k][j] for k in range(len(m))) + P["b_in"][j] + r * hn)
        out.append((1 - z) * n + z * s[j])
    return out


def time_encoding(dt, omega, phase):
    return [math.cos(dt * w + b) for w, b in zip(omega, phase)]


def attention(q_state, nbr_states, dts, P, heads, d_head, omega, phase):
    """Returns (per-head alphas, embedding) for one query node."""
    def cols(W, h):
        return [row[h * d_head:(h + 1) * d_head] for row in W]

    head_out, alphas = [], []
    for h in range(heads):
        W1, W2, W3, W4, W6 = (cols(P[n], h) for n in ("W1", "W2", "W3", "W4", "W6"))
        q = vecmat(q_state, W3)
        keys, vals = [], []
        for sj, dt in zip(nbr_states, dts):
            tw = vecmat(time_encoding(dt, omega, phase), W6)
            keys.append([a + b for a, b in zip(vecmat(sj, W4), tw)])
            vals.append([a + b for a, b in zip(vecmat(sj, W2), tw)])
        logits = [dot(q, k) / math.sqrt(d_head) for k in keys]
        if logits:
            mx = max(logits)
            ex = [math.exp(x - mx) for x in logits]
            alpha = [e / sum(ex) for e in ex]
        else:
            alpha = []
        alphas.append(alpha)
        o = vecmat(q_state, W1)
        for a, v in zip(alpha, vals):
            o = [x + a * y for x, y in zip(o, v)]
        head_out.extend(o)
    emb = [x + b for x, b in zip(vecmat(head_out, P["W_comb"]), P["b_comb"])]
    return alphas, emb


def decoder_score(src, dst, P):
    hi = [x + b for x, b in zip(vecmat(src, P["W_i"]), P["b_i"])]
    hj = [x + b for x, b in zip(vecmat(dst, P["W_j"]), P["b_j"])]
    hidden = [max(0.0, x) for x in hi + hj]
    return vecmat(hidden, P["W_out"])[0] + P["b_out"][0]


def softplus(x):
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def bce(pos, neg):
    return sum(softplus(-x) for x in pos) / len(pos) + sum(softplus(x) for x in neg) / len(neg)


def reciprocal_rank_mean(ranks):
    return sum(1.0 / r for r in ranks) / len(ranks)


def ap_from_labels(labels):
    hits, total, count = 0, 0.0, 0
    for i, lab in enumerate(labels, start=1):
        if lab:
            hits += 1
            total += hits / i
            count += 1
    return total / count


def auc_pairs(pos, neg):
    acc = 0.0
    for p in pos:
        for n in neg:
            acc += 1.0 if p > n else 0.5 if p == n else 0.0
    return acc / (len(pos) * len(neg))


def to_lists(params):
    """Parameter tensors -> nested float lists keyed by short name."""
    return {k: p.data.tolist() for k, p in params.items()}
