"""Slow, independent reference implementations used only by the tests."""

from fractions import Fraction
from itertools import combinations, permutations

import numpy as np


# ---------------------------------------------------------------- networks

def random_network(rng, n, density=None):
    actors = [f"v{k}" for k in range(n)]
    p = rng.random() if density is None else density
    edges = frozenset((a, b) for a in actors for b in actors if a != b and rng.random() < p)
    return actors, edges


def brute_outdeg(y, i, B):
    return 100.0 * sum((i, k) in y for k in B if k != i) / (len(B) - 1)


def brute_trans(y, i, j, B):
    return 100.0 * sum((i, k) in y and (k, j) in y for k in B if k not in (i, j)) / (len(B) - 2)


def brute_shared(y, i, j, B):
    return 100.0 * sum((k, i) in y and (k, j) in y for k in B if k not in (i, j)) / (len(B) - 2)


def brute_global(y, actors):
    """Six summary statistics by explicit enumeration over actors and triples."""
    n = len(actors)
    size = len(y)
    order = sum(any(a in e for e in y) for a in actors)
    mutual = sum((b, a) in y for (a, b) in y)
    und = {frozenset(e) for e in y}
    triangles = sum(all(frozenset(p) in und for p in combinations(t, 2)) for t in combinations(actors, 3))
    # connected triples: paths a-b-c centred at b
    triples = 0
    for b in actors:
        nb = [a for a in actors if a != b and frozenset((a, b)) in und]
        triples += len(nb) * (len(nb) - 1) // 2
    return {
        "size": size,
        "order": order,
        "density": size / (n * (n - 1)),
        "mean_indegree": size / n,
        "reciprocity_share": mutual / size if size else 0.0,
        "transitivity_ratio": 3 * triangles / triples if triples else 0.0,
    }


def edgewise_reconstruct(y_prev, y_plus, y_minus, actors):
    out = set()
    for i, j in permutations(actors, 2):
        if (i, j) in y_prev:
            if (i, j) in y_minus:
                out.add((i, j))
        elif (i, j) in y_plus:
            out.add((i, j))
    return frozenset(out)


# ----------------------------------------------------------------- splines

def cox_de_boor(x, knots, k, degree):
    """Value of the ``k``-th B-spline of ``degree`` at ``x`` (half-open intervals)."""
    if degree == 0:
        return 1.0 if knots[k] <= x < knots[k + 1] else 0.0
    a = knots[k + degree] - knots[k]
    b = knots[k + degree + 1] - knots[k + 1]
    left = (x - knots[k]) / a * cox_de_boor(x, knots, k, degree - 1) if a > 0 else 0.0
    right = (knots[k + degree + 1] - x) / b * cox_de_boor(x, knots, k + 1, degree - 1) if b > 0 else 0.0
    return left + right


def equidistant_knots(lower, upper, dimension, degree):
    h = (upper - lower) / (dimension - degree)
    return [lower + h * m for m in range(-degree, dimension + 1)]


# --------------------------------------------------------------- logistic

def newton_logistic(X, y, tol=1e-13, max_iter=100):
    """Unpenalized logistic MLE by plain Newton on the dense Hessian."""
    X = np.asarray(X, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        g = X.T @ (y - p)
        H = (X * (p * (1 - p))[:, None]).T @ X
        step = np.linalg.solve(H, g)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


# ---------------------------------------------------------------------- AUC

def pair_count_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = Fraction(0)
    for a in pos:
        for b in neg:
            total += 1 if a > b else Fraction(1, 2) if a == b else 0
    return float(total / (len(pos) * len(neg)))


def threshold_sweep_pr(scores, labels):
    """Step PR area: for each distinct threshold (high to low), precision
    times the recall gained by lowering the threshold to it."""
    n_pos = sum(labels)
    area = Fraction(0)
    prev_recall = Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, l in zip(scores, labels) if s >= thr and l == 1)
        k = sum(1 for s in scores if s >= thr)
        recall = Fraction(tp, n_pos)
        area += (recall - prev_recall) * Fraction(tp, k)
        prev_recall = recall
    return float(area)


# --------------------------------------------------------------------- FPCA

def svd_fpca(values, length):
    """Eigen-decomposition of the discretized covariance operator through an
    SVD of the centred data matrix."""
    N, T = values.shape
    w = length / T
    C = values - values.mean(axis=0)
    _, s, vt = np.linalg.svd(C, full_matrices=False)
    eig = w * s ** 2 / N
    xi = vt / np.sqrt(w)
    return eig, xi
