"""Lagged dyadic statistics and whole-network summary statistics.

The per-dyad functions take a network as a set of ``(sender, receiver)``
pairs. :func:`dyad_matrices` computes the same quantities for every ordered
dyad at once from a boolean adjacency matrix; the fitter uses that path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, InputError
from .netpanel import CovariateTables, poldiff
from .transition import TransitionData, adjacency

DYAD_FIELDS = ("sender_outdeg", "receiver_outdeg", "recip", "trans", "shared_sup", "alliance",
               "poldiff", "gdp_i", "gdp_j", "distance", "milex_i", "milex_j")


def _check_members(B, *actors):
    for a in actors:
        if a not in B:
            raise ContractError(f"actor {a} not in actor set")


def outdegree(y, i, B) -> float:
    B = frozenset(B)
    if len(B) < 2:
        raise ContractError("outdegree needs at least 2 actors")
    _check_members(B, i)
    count = sum(1 for (a, b) in y if a == i and b in B and b != i)
    return 100.0 * count / (len(B) - 1)


def reciprocity(y, i, j) -> int:
    if i == j:
        raise ContractError("reciprocity undefined for i == j")
    return int((j, i) in y)


def _two_step(y, i, j, B, first, second) -> float:
    B = frozenset(B)
    if len(B) < 3:
        raise ContractError("statistic needs at least 3 actors")
    if i == j:
        raise ContractError("statistic undefined for i == j")
    _check_members(B, i, j)
    y = frozenset(y)
    count = sum(1 for k in B if k != i and k != j and first(k) in y and second(k) in y)
    return 100.0 * count / (len(B) - 2)


def transitivity_stat(y, i, j, B) -> float:
    """Percentage of possible intermediaries ``k`` with ``i -> k -> j``."""
    return _two_step(y, i, j, B, lambda k: (i, k), lambda k: (k, j))


def shared_suppliers(y, i, j, B) -> float:
    """Percentage of third actors exporting to both ``i`` and ``j``."""
    return _two_step(y, i, j, B, lambda k: (k, i), lambda k: (k, j))


@dataclass(frozen=True)
class DyadCovariateRow:
    sender_outdeg: float
    receiver_outdeg: float
    recip: int
    trans: float
    shared_sup: float
    alliance: int
    poldiff: float
    gdp_i: float
    gdp_j: float
    distance: float
    milex_i: float
    milex_j: float

    def as_dict(self):
        return asdict(self)


def dyad_matrices(Y: np.ndarray) -> dict[str, np.ndarray]:
    """Network statistics for all ordered dyads of a lagged adjacency matrix."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if n < 3:
        raise ContractError("statistics need at least 3 actors")
    np.fill_diagonal(Y, 0.0)
    out = 100.0 * Y.sum(axis=1) / (n - 1)
    stats = {
        "sender_outdeg": np.repeat(out[:, None], n, axis=1),
        "receiver_outdeg": np.repeat(out[None, :], n, axis=0),
        "recip": Y.T.copy(),
        # the zero diagonal removes k == i and k == j from both products
        "trans": 100.0 * (Y @ Y) / (n - 2),
        "shared_sup": 100.0 * (Y.T @ Y) / (n - 2),
    }
    for v in stats.values():
        np.fill_diagonal(v, 0.0)  # i == j is not a dyad
    return stats


def covariate_matrices(transition: TransitionData, covariates: CovariateTables) -> dict[str, np.ndarray]:
    """Exogenous covariates at the lagged period for all ordered dyads.

    Expects log-transformed tables (see ``prepare_covariates``).
    """
    if not covariates.transformed:
        raise ContractError("covariates must be prepared (log-transformed) first")
    prev = transition.prev
    src = list(transition.lag_source)
    mono = covariates.monadic_arrays(prev, src)
    dy = covariates.dyadic_arrays(prev, src)
    n = transition.n
    col = lambda v: np.repeat(v[:, None], n, axis=1)
    row = lambda v: np.repeat(v[None, :], n, axis=0)
    return {
        "alliance": dy["alliance"],
        "poldiff": poldiff(col(mono["polity"]), row(mono["polity"])),
        "gdp_i": col(mono["gdp"]),
        "gdp_j": row(mono["gdp"]),
        "distance": dy["distance"],
        "milex_i": col(mono["milex"]),
        "milex_j": row(mono["milex"]),
    }


def dyad_row(transition: TransitionData, covariates: CovariateTables, i: str, j: str) -> DyadCovariateRow:
    """All regressors of one formation or persistence dyad."""
    if i == j or i not in transition.actors or j not in transition.actors:
        raise ContractError(f"({i}, {j}) is not a dyad of step {transition.prev}->{transition.t}")
    y = transition.lagged_network()
    src = dict(zip(transition.actors, transition.lag_source))
    B = frozenset(transition.lag_source)
    si, sj = src[i], src[j]
    try:
        cov = covariate_matrices(transition, covariates)
    except InputError as exc:
        raise ContractError(f"missing covariate: {exc}") from None
    a, b = transition.actors.index(i), transition.actors.index(j)
    return DyadCovariateRow(
        sender_outdeg=outdegree(y, si, B),
        receiver_outdeg=outdegree(y, sj, B),
        recip=reciprocity(y, si, sj),
        trans=transitivity_stat(y, si, sj, B),
        shared_sup=shared_suppliers(y, si, sj, B),
        alliance=int(cov["alliance"][a, b]),
        poldiff=float(cov["poldiff"][a, b]),
        gdp_i=float(cov["gdp_i"][a, b]),
        gdp_j=float(cov["gdp_j"][a, b]),
        distance=float(cov["distance"][a, b]),
        milex_i=float(cov["milex_i"][a, b]),
        milex_j=float(cov["milex_j"][a, b]),
    )


GOF_FIELDS = ("size", "order", "density", "mean_indegree", "reciprocity_share", "transitivity_ratio")


@dataclass(frozen=True)
class GofStats:
    size: int
    order: int
    density: float
    mean_indegree: float
    reciprocity_share: float
    transitivity_ratio: float

    def as_tuple(self):
        return tuple(getattr(self, f) for f in GOF_FIELDS)


def global_stats_matrix(Y: np.ndarray) -> GofStats:
    """Six summary statistics of a directed network given as adjacency matrix."""
    Y = np.asarray(Y, dtype=bool).copy()
    n = Y.shape[0]
    if n < 2:
        raise ContractError("global statistics need n >= 2")
    np.fill_diagonal(Y, False)
    size = int(Y.sum())
    active = Y.any(axis=0) | Y.any(axis=1)
    mutual = int((Y & Y.T).sum())
    U = (Y | Y.T).astype(np.int64)
    deg = U.sum(axis=1)
    triples = int((deg * (deg - 1) // 2).sum())
    closed = int(np.einsum("ij,jk,ki->", U, U, U))  # 6 x number of triangles
    return GofStats(
        size=size,
        order=int(active.sum()),
        density=size / (n * (n - 1)),
        mean_indegree=size / n,
        reciprocity_share=mutual / size if size else 0.0,
        transitivity_ratio=(closed / 2) / triples if triples else 0.0,
    )


def global_stats(y, n: int, actors=None) -> GofStats:
    """Summary statistics of an edge set over ``n`` actors.

    ``actors`` fixes the node labels; by default the labels appearing in
    ``y`` are used and the remaining ``n - len(labels)`` nodes are isolates.
    """
    if n < 2:
        raise ContractError("global statistics need n >= 2")
    labels = sorted(actors) if actors is not None else sorted({a for e in y for a in e})
    if len(labels) > n:
        raise ContractError("more labelled actors than n")
    labels = labels + [("__isolate__", k) for k in range(n - len(labels))]
    return global_stats_matrix(adjacency(y, labels))
