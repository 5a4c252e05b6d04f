"""Independent per-location scalar-loop reference implementations.

Everything here is deliberately naive: plain Python loops over (j, k)
locations and channel indices, float arithmetic via the math module,
no vectorized shortcuts shared with the library.  The only numpy usage
is packaging the finished Python-float lists into arrays for easy
comparison.
"""

import math

import numpy as np

AVERAGED = -1


def _f(x) -> float:
    return float(x)


def channel_std(f) -> np.ndarray:
    c, h, w = f.shape
    out = [[0.0] * w for _ in range(h)]
    for j in range(h):
        for k in range(w):
            vals = [_f(f[ch][j][k]) for ch in range(c)]
            mean = sum(vals) / c
            var = sum((v - mean) ** 2 for v in vals) / c
            out[j][k] = math.sqrt(var)
    return np.array(out, dtype=np.float64)


def normalized_std(f, eps: float = 1e-12) -> np.ndarray:
    sigma = channel_std(f)
    h, w = sigma.shape
    total = 0.0
    for j in range(h):
        for k in range(w):
            total += _f(sigma[j][k])
    if total < eps:
        return np.full((h, w), 1.0 / (h * w))
    out = [[_f(sigma[j][k]) / total for k in range(w)] for j in range(h)]
    return np.array(out, dtype=np.float64)


def correlation(f1, f2, eps: float = 1e-12) -> np.ndarray:
    c, h, w = f1.shape
    out = [[0.0] * w for _ in range(h)]
    for j in range(h):
        for k in range(w):
            a = [_f(f1[ch][j][k]) for ch in range(c)]
            b = [_f(f2[ch][j][k]) for ch in range(c)]
            na = math.sqrt(sum(v * v for v in a))
            nb = math.sqrt(sum(v * v for v in b))
            if na < eps or nb < eps:
                out[j][k] = 0.0
            else:
                rho = sum(x * y for x, y in zip(a, b)) / (na * nb)
                out[j][k] = max(-1.0, min(1.0, rho))
    return np.array(out, dtype=np.float64)


def average(branches) -> np.ndarray:
    n = len(branches)
    c, h, w = branches[0].shape
    out = np.zeros((c, h, w), dtype=np.float64)
    for ch in range(c):
        for j in range(h):
            for k in range(w):
                out[ch][j][k] = sum(_f(f[ch][j][k]) for f in branches) / n
    return out


def merge(f1, f2, delta: float, eps: float = 1e-12):
    """Returns (f_eff, codes, rho, sigma_hat_1, sigma_hat_2)."""
    c, h, w = f1.shape
    rho = correlation(f1, f2, eps)
    s1 = normalized_std(f1, eps)
    s2 = normalized_std(f2, eps)
    eff = np.zeros((c, h, w), dtype=np.float64)
    codes = np.zeros((h, w), dtype=np.int32)
    for j in range(h):
        for k in range(w):
            if _f(rho[j][k]) >= delta:
                codes[j][k] = AVERAGED
                for ch in range(c):
                    eff[ch][j][k] = (_f(f1[ch][j][k]) + _f(f2[ch][j][k])) / 2.0
            else:
                winner = 1 if _f(s2[j][k]) > _f(s1[j][k]) else 0
                codes[j][k] = winner
                src = f1 if winner == 0 else f2
                for ch in range(c):
                    eff[ch][j][k] = _f(src[ch][j][k])
    return eff, codes, rho, s1, s2


def unmerge(f1, f2, eff, codes, renormalize: bool, eps: float = 1e-12):
    """Returns the pair of post-unmerge branch features."""
    c, h, w = f1.shape
    sigmas = (channel_std(f1), channel_std(f2))
    datas = (f1, f2)
    outs = [np.zeros((c, h, w), dtype=np.float64) for _ in range(2)]
    for j in range(h):
        for k in range(w):
            code = int(codes[j][k])
            for i in range(2):
                if code == AVERAGED:
                    for ch in range(c):
                        outs[i][ch][j][k] = _f(eff[ch][j][k])
                elif code == i:
                    for ch in range(c):
                        outs[i][ch][j][k] = _f(datas[i][ch][j][k])
                else:
                    if renormalize and _f(sigmas[code][j][k]) >= eps:
                        ratio = _f(sigmas[i][j][k]) / _f(sigmas[code][j][k])
                        for ch in range(c):
                            outs[i][ch][j][k] = ratio * _f(datas[code][ch][j][k])
                    else:
                        for ch in range(c):
                            outs[i][ch][j][k] = _f(datas[i][ch][j][k])
    return outs[0], outs[1]


def fold(branches, delta: float, renormalize: bool, eps: float = 1e-12):
    """Left fold over branches; returns (f_eff, updated list, codes list)."""
    running = branches[0]
    updated = [np.asarray(b, dtype=np.float64) for b in branches]
    codes_list = []
    for i in range(1, len(branches)):
        eff, codes, _, _, _ = merge(running, branches[i], delta, eps)
        u_run, u_i = unmerge(running, branches[i], eff, codes, renormalize, eps)
        updated[0] = u_run
        updated[i] = u_i
        codes_list.append(codes)
        running = eff
    return running, updated, codes_list
