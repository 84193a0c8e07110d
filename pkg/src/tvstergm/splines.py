"""P-spline machinery: B-spline bases, difference penalties, design blocks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError


def _knots(lower: float, upper: float, dimension: int, degree: int) -> np.ndarray:
    n_inner = dimension - degree  # number of intervals on [lower, upper]
    h = (upper - lower) / n_inner
    return lower + h * np.arange(-degree, n_inner + degree + 1)


def _basis_rows(x: np.ndarray, knots: np.ndarray, dimension: int, degree: int) -> np.ndarray:
    """Evaluate all B-splines at ``x`` by the triangular de Boor scheme."""
    x = np.asarray(x, dtype=float)
    n_int = dimension - degree
    lo, hi = knots[degree], knots[degree + n_int]
    h = (hi - lo) / n_int
    # interval index, right end belongs to the last interval
    s = np.clip(np.floor((x - lo) / h).astype(np.int64), 0, n_int - 1) + degree
    # keep x inside its knot interval so rounding cannot produce negative weights
    x = np.clip(x, knots[s], knots[s + 1])
    B = np.zeros((x.size, degree + 1))
    B[:, 0] = 1.0
    for d in range(1, degree + 1):
        new = np.zeros_like(B)
        for r in range(d):
            left = knots[s + r + 1 - d]
            right = knots[s + r + 1]
            w = B[:, r] / (right - left)
            new[:, r] += (right - x) * w
            new[:, r + 1] += (x - left) * w
        B = new
    out = np.zeros((x.size, dimension))
    rows = np.arange(x.size)
    for r in range(degree + 1):
        out[rows, s - degree + r] = B[:, r]
    return out


@dataclass(frozen=True)
class SplineBasis:
    """Equidistant B-spline basis on ``[lower, upper]``.

    ``dimension`` basis functions of the given ``degree``; the knots extend
    ``degree`` steps beyond each boundary. ``penalty_order`` selects the
    difference penalty returned by :meth:`penalty`.
    """

    lower: float
    upper: float
    dimension: int
    degree: int = 2
    penalty_order: int = 1

    def __post_init__(self):
        if self.degree < 0:
            raise ContractError("degree must be >= 0")
        if self.dimension < self.degree + 1:
            raise ContractError(f"dimension {self.dimension} < degree + 1 = {self.degree + 1}")
        if not self.upper > self.lower and self.dimension > 1:
            raise ContractError("basis range must have positive length")

    @property
    def knots(self) -> np.ndarray:
        return _knots(self.lower, self.upper, self.dimension, self.degree)

    def evaluate(self, points, clamp: bool = False) -> np.ndarray:
        x = np.atleast_1d(np.asarray(points, dtype=float))
        if self.dimension == 1:
            return np.ones((x.size, 1))
        if clamp:
            x = np.clip(x, self.lower, self.upper)
        else:
            tol = 1e-9 * (self.upper - self.lower)
            bad = (x < self.lower - tol) | (x > self.upper + tol)
            if bad.any():
                raise ContractError(f"point {x[bad][0]} outside basis range [{self.lower}, {self.upper}]")
            x = np.clip(x, self.lower, self.upper)
        return _basis_rows(x, self.knots, self.dimension, self.degree)

    def penalty(self) -> np.ndarray:
        if self.dimension <= self.penalty_order:
            return np.zeros((self.dimension, self.dimension))
        return difference_penalty(self.dimension, self.penalty_order)

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "dimension": self.dimension,
                "degree": self.degree, "penalty_order": self.penalty_order}


def bspline_basis(points, dimension: int, degree: int, lower: Optional[float] = None,
                  upper: Optional[float] = None) -> np.ndarray:
    """B-spline design matrix with equidistant knots.

    The coverage interval defaults to ``[min(points), max(points)]``; points
    outside an explicitly given interval raise :class:`ContractError`.
    """
    x = np.asarray(points, dtype=float)
    lower = float(x.min()) if lower is None else float(lower)
    upper = float(x.max()) if upper is None else float(upper)
    return SplineBasis(lower, upper, dimension, degree).evaluate(x)


def difference_penalty(dimension: int, order: int) -> np.ndarray:
    if order < 1 or dimension <= order:
        raise ContractError(f"need dimension > order >= 1, got dimension={dimension}, order={order}")
    D = np.diff(np.eye(dimension), n=order, axis=0)
    return D.T @ D


@dataclass(frozen=True)
class DesignBlock:
    """Columns of one model term with their penalties.

    ``columns`` is a dense array or a scipy sparse matrix. ``penalties`` is a
    list of PSD matrices, each carrying its own smoothing parameter; an empty
    list marks an unpenalized block. ``constraint`` is the matrix ``Z`` with
    raw coefficients ``u = Z v`` when a centering constraint was applied.
    """

    label: str
    columns: object
    penalties: list = field(default_factory=list)
    constraint: Optional[np.ndarray] = None
    kind: str = "constant"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.columns.shape[1]
        for S in self.penalties:
            if S.shape != (p, p):
                raise ContractError(f"block {self.label}: penalty shape {S.shape} does not match {p} columns")

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.columns)


def varying_coeff_block(covariate, times, basis: SplineBasis, label: str = "x", clamp: bool = False) -> DesignBlock:
    """Column block for ``covariate * theta(time)`` with ``theta`` in the basis."""
    x = np.asarray(covariate, dtype=float)
    t = np.asarray(times, dtype=float)
    if x.shape != t.shape:
        raise ContractError(f"covariate length {x.size} != times length {t.size}")
    cols = x[:, None] * basis.evaluate(t, clamp=clamp)
    pens = [basis.penalty()] if basis.dimension > basis.penalty_order else []
    return DesignBlock(label, cols, pens, kind="time-varying", meta={"basis": basis.to_dict()})


def level_penalty(dimension: int) -> np.ndarray:
    """Projector onto constant coefficient vectors (null space of first differences)."""
    return np.full((dimension, dimension), 1.0 / dimension)


def random_smooth_block(actor_ids, times, basis: SplineBasis, actors: Optional[Sequence[str]] = None,
                        label: str = "re", clamp: bool = False) -> DesignBlock:
    """Actor-nested smooth curves sharing one pair of smoothing parameters.

    Columns are ordered actor-major; each row is nonzero only in the columns
    of its own actor. The block carries two penalties: the basis difference
    penalty (wiggliness) and a ridge on the per-actor level, so that every
    curve is shrunk towards zero.
    """
    ids = np.asarray(actor_ids, dtype=object)
    t = np.asarray(times, dtype=float)
    if ids.shape != t.shape:
        raise ContractError("actor ids and times differ in length")
    actors = sorted(set(ids.tolist())) if actors is None else list(actors)
    pos = {a: k for k, a in enumerate(actors)}
    try:
        idx = np.array([pos[a] for a in ids], dtype=np.int64)
    except KeyError as exc:
        raise ContractError(f"unknown actor id {exc.args[0]!r}") from None
    Q = basis.dimension
    Bt = basis.evaluate(t, clamp=clamp)
    rows = np.repeat(np.arange(t.size), Q)
    cols = (idx[:, None] * Q + np.arange(Q)[None, :]).ravel()
    X = sp.csr_matrix((Bt.ravel(), (rows, cols)), shape=(t.size, Q * len(actors)))
    X.eliminate_zeros()
    eye = sp.identity(len(actors), format="csr")
    pens = []
    if Q > basis.penalty_order:
        pens.append(sp.kron(eye, basis.penalty()).toarray())
    pens.append(sp.kron(eye, level_penalty(Q)).toarray())
    return DesignBlock(label, X, pens, kind="random-smooth",
                       meta={"basis": basis.to_dict(), "actors": list(actors)})


def centering_transform(colsum: np.ndarray) -> np.ndarray:
    """Orthonormal basis ``Z`` of the complement of ``colsum`` (``colsum @ Z = 0``)."""
    c = np.asarray(colsum, dtype=float).reshape(-1, 1)
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


def apply_centering_constraint(block: DesignBlock) -> DesignBlock:
    """Reparameterize so the block's fitted values sum to zero over its rows."""
    if block.constraint is not None:
        raise ContractError(f"block {block.label} is already constrained")
    X = block.columns
    colsum = np.asarray(X.sum(axis=0)).ravel()
    Z = centering_transform(colsum)
    Xc = X @ Z
    if sp.issparse(Xc):
        Xc = Xc.toarray()
    pens = [Z.T @ S @ Z for S in block.penalties]
    return replace(block, columns=np.asarray(Xc), penalties=pens, constraint=Z)
