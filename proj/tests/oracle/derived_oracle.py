"""Independent numpy oracle for derived test values. Output is frozen in derived.json.

Run: python3 tests/oracle/derived_oracle.py > tests/oracle/derived.json
"""
import json

import numpy as np

FS = 15.36e6
TS = 1.0 / FS
N = 256


def cjson(z):
    z = np.asarray(z, dtype=complex)
    return {"re": z.real.tolist(), "im": z.imag.tolist()}


def ft_symbols(prbs):
    q = np.repeat(np.asarray(prbs, dtype=float), 2)
    m = len(q)
    s = np.ones(m)
    for i in range(m - 2):
        s[i + 2] = s[i] * q[i]
    return s, q


def correlator():
    rng = np.random.default_rng(20240611)
    prbs = [1, -1, -1, 1, -1, 1, 1, -1]
    s, q = ft_symbols(prbs)
    m = len(s)
    offset = 21
    length = 80
    r = np.zeros(length, dtype=complex)
    r[offset:offset + m] = 0.0625 * s
    r *= np.exp(2j * np.pi * 900.0 * np.arange(length) * TS)
    r += 0.02 * (rng.standard_normal(length) + 1j * rng.standard_normal(length))
    d = (r[:-2] * np.conj(r[2:])).real
    qhat = np.sign(d)
    corr = np.array([qhat[j:j + m - 2] @ q[:m - 2] for j in range(length - m + 1)])
    best = int(np.argmax(np.abs(corr)))
    return {"prbs": prbs, "r": cjson(r), "corr": corr.tolist(), "m0": best, "peak": float(abs(corr[best]))}


def effective_channel():
    taps = [(0.8 + 0j, 0), (0.3 + 0.4j, 2)]
    to_dl, to_ul, dfr, t = 3 * TS, -2 * TS, 40.0, 1.25e-3
    carriers = [-128, -1, 0, 1, 77]

    def h(n, to, sign, tt):
        a = sum(g * np.exp(-2j * np.pi * n * d / N) for g, d in taps)
        return np.exp(2j * np.pi * (sign * dfr * tt + n * FS * to / N)) * a

    return {
        "taps": [[g.real, g.imag, d] for g, d in taps],
        "to_dl_samples": 3,
        "to_ul_samples": -2,
        "dfr_hz": dfr,
        "t_s": t,
        "carriers": carriers,
        "dl": cjson([h(n, to_dl, 1, t) for n in carriers]),
        "ul": cjson([h(n, to_ul, -1, t) for n in carriers]),
    }


def coarse_cfo():
    rng = np.random.default_rng(77)
    m_cfo, l_span, tone, amp, cfo = 256, 512, 4, 0.0625, 1234.5
    m = np.arange(m_cfo + l_span)
    r = amp * np.exp(2j * np.pi * m * tone / N) * np.exp(2j * np.pi * cfo * m * TS)
    r = (0.7 - 0.2j) * r + 0.01 * (rng.standard_normal(len(m)) + 1j * rng.standard_normal(len(m)))
    acc = np.sum(np.conj(r[:m_cfo]) * r[l_span:l_span + m_cfo])
    return {"m_cfo": m_cfo, "l_span": l_span, "r": cjson(r), "estimate_hz": float(np.angle(acc) / (2 * np.pi * TS * l_span))}


def mlp():
    shape = {"in": 2, "h1": 3, "h2": 2, "out": 1}
    rng = np.random.default_rng(6)
    w1 = rng.uniform(-1, 1, (3, 2))
    b1 = rng.uniform(-0.5, 0.5, 3)
    w2 = rng.uniform(-1, 1, (2, 3))
    b2 = rng.uniform(-0.5, 0.5, 2)
    w3 = rng.uniform(-1, 1, (1, 2))
    b3 = rng.uniform(-0.5, 0.5, 1)
    params = np.concatenate([w1.flatten(order="F"), b1, w2.flatten(order="F"), b2, w3.flatten(order="F"), b3])
    x = rng.uniform(0, 1, (2, 4))
    a1 = np.maximum(w1 @ x + b1[:, None], 0)
    a2 = np.maximum(w2 @ a1 + b2[:, None], 0)
    y = w3 @ a2 + b3[:, None]
    return {"shape": shape, "params": params.tolist(), "x": x.flatten(order="F").tolist(), "y": y.flatten().tolist()}


def rss():
    p0, d0, gamma = -40.0, 20.0, 3.0
    sites = [(-100.0, 0.0), (100.0, 0.0)]
    pts = [(50.0, 30.0), (-130.0, -40.0), (0.0, 300.0)]
    out = []
    for x, y in pts:
        out.append(max(p0 - 10 * gamma * np.log10(np.hypot(x - sx, y - sy) / d0) for sx, sy in sites))
    return {"points": pts, "path_loss_dbm": out}


print(json.dumps({
    "correlator": correlator(),
    "effective_channel": effective_channel(),
    "coarse_cfo": coarse_cfo(),
    "mlp": mlp(),
    "rss": rss(),
}, indent=1))
