"""Regenerates oracles.json with an independent NumPy implementation.

Usage: python3 gen_oracle_fixtures.py > oracles.json
"""
import itertools
import json
import math

import numpy as np


def branin3(x1, x2):
    t = x2 - 1.25 * x1**2 / np.pi**2 + 5 * x1 / np.pi - 6
    return t**2 + (10 - 5 / (4 * np.pi)) * np.cos(x1) + 10


def branin2(x1, x2):
    return 10 * np.sqrt(np.maximum(branin3(x1 - 2, x2 - 2), 0)) + 2 * (x1 - 0.5) - 3 * (3 * x2 - 1) - 1


def branin1(x1, x2):
    return branin2(1.2 * (x1 + 2), 1.2 * (x2 + 2)) - 3 * x2 + 1


A = np.array([[10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14],
              [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14]])
P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886], [2329, 4135, 8307, 3736, 1004, 9991],
                     [2348, 1451, 3522, 2883, 3047, 6650], [4047, 8828, 8732, 5743, 1091, 381]])
ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
DELTA = np.array([0.01, -0.01, -0.1, 0.1])


def hartmann(m, X):
    a = ALPHA + (3 - m) * DELTA
    return np.exp(-((X[:, None, :] - P[None]) ** 2 * A[None]).sum(-1)) @ a


COMP = {"A": "T", "T": "A", "C": "G", "G": "C"}


def toy(seq):
    pairs = sum(1 for i in range(len(seq) - 1) if COMP[seq[i]] == seq[i + 1])
    pal = sum(1 for i in range(len(seq) - 3)
              if "".join(COMP[c] for c in reversed(seq[i:i + 4])) == seq[i:i + 4])
    return pairs + 2 * pal


def main():
    out = {"version": 1}
    g = np.arange(100)
    I1, I2 = np.meshgrid(g, g, indexing="ij")
    X1, X2 = -5 + 15 * I1 / 99, 15 * I2 / 99
    f = [branin1(X1, X2), branin2(X1, X2), branin3(X1, X2)]
    t = f[2]
    k = np.unravel_index(np.argmin(t), t.shape)
    out["branin"] = {
        "side": 100,
        "at_origin": [float(v[0, 0]) for v in f],
        "grid_min": float(t.min()),
        "grid_max": float(t.max()),
        "argmin": [int(k[0]), int(k[1])],
        "explained_variance": [float(1 - np.var(t - v) / np.var(t)) for v in f],
    }
    lv = np.linspace(0, 1, 10)
    X = np.array(np.meshgrid(*[lv] * 6, indexing="ij")).reshape(6, -1).T
    h = hartmann(3, X)
    idx = int(np.argmax(h))
    out["hartmann"] = {
        "side": 10,
        "grid_max": float(h.max()),
        "grid_min": float(h.min()),
        "argmax": [int(c) for c in np.unravel_index(idx, (10,) * 6)],
        "m1_at_argmax": float(hartmann(1, X[idx:idx + 1])[0]),
    }
    hi, lo = [], []
    for tup in itertools.product("ACGT", repeat=8):
        s = "".join(tup)
        hi.append(toy(s))
        lo.append(toy(s[:math.ceil(2 * 8 / 3)]))
    hi, lo = np.array(hi, float), np.array(lo, float)
    out["sequence_toy"] = {
        "length": 8,
        "atatatat": toy("ATATATAT"),
        "max": float(hi.max()),
        "argmax_count": int((hi == hi.max()).sum()),
        "mean": float(hi.mean()),
        "fidelity_correlation": float(np.corrcoef(hi, lo)[0, 1]),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
