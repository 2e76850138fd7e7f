"""Independent reference implementations used to derive expected test values.

None of these call into the package; they re-derive each quantity from its
definition by the most direct (and slowest) route available.
"""

import math
from fractions import Fraction

import numpy as np

# 20-row single-covariate dataset with overlapping classes (no separation)
GRID_X = np.linspace(-2.0, 2.0, 20)
GRID_Y = np.array([0, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1], dtype=float)


def loglik(b0, b1, x, y):
    total = 0.0
    for xi, yi in zip(x, y):
        eta = b0 + b1 * xi
        p = 1.0 / (1.0 + math.exp(-eta))
        total += yi * math.log(p) + (1 - yi) * math.log(1 - p)
    return total


def grid_refine_mle(x, y, lo=-10.0, hi=10.0, points=21, tol=1e-9):
    """Maximise the two-parameter logistic log-likelihood by repeated grid refinement."""
    c0 = c1 = (lo + hi) / 2
    half = (hi - lo) / 2
    while half > tol:
        best = None
        for b0 in np.linspace(c0 - half, c0 + half, points):
            for b1 in np.linspace(c1 - half, c1 + half, points):
                ll = loglik(b0, b1, x, y)
                if best is None or ll > best[0]:
                    best = (ll, b0, b1)
        _, c0, c1 = best
        half *= 2.0 / (points - 1)
    return c0, c1


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def ratio_weight(s, eta_treated, eta_control):
    """Weight as the ratio of control-law to treated-law probabilities of the observed S."""
    p1 = sigmoid(eta_treated)
    p0 = sigmoid(eta_control)
    return p0 / p1 if s else (1 - p0) / (1 - p1)


def nearest_rank(values, pct):
    xs = sorted(values)
    if pct == 0:
        return xs[0]
    k = math.ceil(Fraction(pct) * len(xs) / 100)
    return xs[k - 1]


def hajek(y, w):
    return sum(a * b for a, b in zip(y, w)) / sum(w)


def toy_by_enumeration(rows):
    """Estimands from per-patient dicts with keys y10, y11, y00, y01, s0, s1."""
    n = len(rows)

    def mean(vals):
        vals = list(vals)
        return sum(Fraction(v) for v in vals) / len(vals)

    y1 = [r["y11"] if r["s1"] else r["y10"] for r in rows]
    y0 = [r["y01"] if r["s0"] else r["y00"] for r in rows]
    y1s0 = [r["y11"] if r["s0"] else r["y10"] for r in rows]
    never = [i for i in range(n) if not rows[i]["s0"] and not rows[i]["s1"]]
    principal = (mean(y1[i] for i in never) - mean(y0[i] for i in never)) if never else None
    return (mean(y1) - mean(y0), mean(r["y10"] for r in rows) - mean(r["y00"] for r in rows),
            principal, mean(y1s0) - mean(y0))
