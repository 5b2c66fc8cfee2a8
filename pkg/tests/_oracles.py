"""Straight-line reference implementations used only by the tests."""
import math

import numpy as np


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def naive_conv(x, w, b, stride=1):
    # x: (H, W, C) single item, explicit loops, zero padding 1
    H, W, C = x.shape
    O = w.shape[3]
    Ho, Wo = H // stride, W // stride
    out = np.zeros((Ho, Wo, O))
    for oy in range(Ho):
        for ox in range(Wo):
            for o in range(O):
                acc = b[o]
                for dy in range(3):
                    for dx in range(3):
                        iy, ix = oy * stride + dy - 1, ox * stride + dx - 1
                        if 0 <= iy < H and 0 <= ix < W:
                            for c in range(C):
                                acc += x[iy, ix, c] * w[dy, dx, c, o]
                out[oy, ox, o] = acc
    return out


def naive_silu(a):
    out = np.empty_like(a)
    for idx, v in np.ndenumerate(a):
        out[idx] = v * _sig(v)
    return out


def naive_forward(model, mt, x, sigma):
    """Score for one (H, W) field, written without any shared helpers."""
    a = model.arch
    p = {k: np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    u = (math.log(sigma) - math.log(a.sigma_min)) / (math.log(a.sigma_max) - math.log(a.sigma_min))
    freqs = [0.25 * (64.0 ** (i / (a.n_freq - 1))) for i in range(a.n_freq)]
    feats = [math.sin(math.pi * u * f) for f in freqs] + [math.cos(math.pi * u * f) for f in freqs]
    hid = []
    for j in range(a.emb_hidden):
        v = p["emb1.b"][j] + sum(feats[i] * p["emb1.w"][i, j] for i in range(len(feats)))
        hid.append(v * _sig(v))
    film = [p["emb2.b"][k] + sum(hid[j] * p["emb2.w"][j, k] for j in range(a.emb_hidden))
            for k in range(p["emb2.b"].size)]
    c1, c2 = a.c1, a.c2
    g1, s1 = film[:c1], film[c1:2 * c1]
    g2, s2 = film[2 * c1:2 * c1 + c2], film[2 * c1 + c2:2 * c1 + 2 * c2]
    g3, s3 = film[2 * c1 + 2 * c2:3 * c1 + 2 * c2], film[3 * c1 + 2 * c2:]

    def res(name, h):
        y = naive_conv(naive_silu(h), p[name + ".a.w"], p[name + ".a.b"])
        y = naive_conv(naive_silu(y), p[name + ".b.w"], p[name + ".b.b"])
        return h + y

    def mod(h, g, s):
        out = h.copy()
        for c in range(h.shape[2]):
            out[:, :, c] = h[:, :, c] * (1 + g[c]) + s[c]
        return out

    H, W = mt.shape
    inp = np.zeros((H, W, 2))
    inp[:, :, 0] = mt / math.sqrt(1 + sigma * sigma)
    inp[:, :, 1] = x
    h1 = mod(res("res1", naive_conv(inp, p["conv_in.w"], p["conv_in.b"])), g1, s1)
    d = naive_silu(naive_conv(h1, p["down.w"], p["down.b"], stride=2))
    h2 = mod(res("res2", d), g2, s2)
    up = np.zeros((H, W, c2))
    for i in range(H):
        for j in range(W):
            up[i, j] = h2[i // 2, j // 2]
    cat = np.concatenate([up, h1], axis=2)
    h4 = mod(res("res3", naive_conv(cat, p["up.w"], p["up.b"])), g3, s3)
    zhat = naive_conv(naive_silu(h4), p["out.w"], p["out.b"])[:, :, 0]
    return -zhat / sigma
