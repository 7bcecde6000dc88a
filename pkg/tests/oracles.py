"""Straight-line scalar reference implementations used as test oracles.

Nothing here imports the package's numerical code; every formula is written
out with Python floats and the math module.
"""

import math


def matvec_row(x, w):
    """Row vector x (len n) times matrix w (n x m, nested lists)."""
    return [sum(x[i] * w[i][j] for i in range(len(x))) for j in range(len(w[0]))]


def softmax(values):
    m = max(v for v in values if v != -math.inf)
    ex = [0.0 if v == -math.inf else math.exp(v - m) for v in values]
    s = sum(ex)
    return [e / s for e in ex]


def positional(pos, j, d):
    k = j // 2
    angle = pos / 10000.0 ** (2 * k / d)
    return math.sin(angle) if j % 2 == 0 else math.cos(angle)


def encode(tokens, length, p, heads, use_positions=True, residual=False):
    """Returns (e_prime rows, attention[h][i][j], pooling weights, phi).

    ``p`` maps tensor names to nested lists.
    """
    d = len(p["w_q"])
    dk = d // heads
    n = len(tokens)
    x = []
    for i, t in enumerate(tokens):
        row = list(p["word_emb"][t])
        if use_positions:
            row = [row[j] + positional(i, j, d) for j in range(d)]
        x.append(row)
    q = [matvec_row(r, p["w_q"]) for r in x]
    k = [matvec_row(r, p["w_k"]) for r in x]
    v = [matvec_row(r, p["w_v"]) for r in x]
    attn = []
    concat = [[0.0] * d for _ in range(n)]
    for h in range(heads):
        cols = range(h * dk, (h + 1) * dk)
        rows = []
        for i in range(n):
            logits = []
            for j in range(n):
                if j >= length:
                    logits.append(-math.inf)
                else:
                    logits.append(sum(q[i][c] * k[j][c] for c in cols) / math.sqrt(dk))
            a = softmax(logits)
            rows.append(a)
            for c in cols:
                concat[i][c] = sum(a[j] * v[j][c] for j in range(n))
        attn.append(rows)
    e = [matvec_row(r, p["w_o"]) for r in concat]
    if residual:
        e = [[e[i][j] + x[i][j] for j in range(d)] for i in range(n)]
    scores = []
    for i in range(n):
        hid = [math.tanh(sum(p["w_e"][a][b] * e[i][b] for b in range(d)) + p["b_e"][a]) for a in range(d)]
        s = sum(hid[a] * p["h_w"][a] for a in range(d)) / math.sqrt(d)
        scores.append(s if i < length else -math.inf)
    kw = softmax(scores)
    phi = [sum(kw[i] * e[i][j] for i in range(n)) for j in range(d)]
    return e, attn, kw, phi


def log_sigmoid(z):
    return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))


def skipgram_loss(phi, pos, negs):
    loss = -log_sigmoid(sum(a * b for a, b in zip(phi, pos)))
    for n in negs:
        loss -= log_sigmoid(-sum(a * b for a, b in zip(phi, n)))
    return loss


def class_nll(phi, classes, c):
    logits = [sum(a * b for a, b in zip(phi, w)) for w in classes]
    m = max(logits)
    lse = m + math.log(sum(math.exp(z - m) for z in logits))
    return lse - logits[c]


def macro_f1(pred, gold, num_classes):
    total = 0.0
    for c in range(num_classes):
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gold) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / num_classes


def central_difference(f, arrays, eps=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of each numpy array."""
    import numpy as np

    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            hi = f()
            arr[idx] = old - eps
            lo = f()
            arr[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a| + |n|, floor) over all entries."""
    import numpy as np

    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))
