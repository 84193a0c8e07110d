"""Penalized-spline logistic estimation of formation and persistence models.

The pipeline is

* :func:`build_dyad_table` flattens transitions into one row per scored dyad,
* :class:`Layout` turns a :class:`ModelSpec` into design blocks (and can
  rebuild identical blocks for new rows when predicting),
* :func:`pirls_fit` maximizes the penalized Bernoulli log-likelihood,
* :func:`select_lambdas` picks smoothing parameters by a Laplace-approximate
  restricted marginal likelihood,
* :func:`fit_model` ties it together per side (formation / persistence, or
  one pooled fit for the TERGM family).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import expit

from .errors import ContractError, NumericalError
from .netpanel import NetworkPanel
from .netstats import DYAD_FIELDS, covariate_matrices, dyad_matrices
from .splines import (DesignBlock, SplineBasis, apply_centering_constraint, level_penalty,
                      random_smooth_block, varying_coeff_block)
from .transition import TransitionData, adjacency, transitions

logger = logging.getLogger(__name__)

RIDGE = 1e-8
SEPARATION_LIMIT = 50.0
NETWORK_FIELDS = ("sender_outdeg", "receiver_outdeg", "recip", "trans", "shared_sup")
COVARIATE_NAMES = DYAD_FIELDS + ("lag_edge",)
KINDS = ("constant", "time-varying", "random-smooth")
ROLES = ("sender", "receiver")

# variant -> (pooled, lag edge, covariates allowed, random effects)
VARIANTS = {
    "AR-ERGM": (True, True, False, False),
    "TERGM": (True, False, True, False),
    "TERGM+RE": (True, False, True, True),
    "TERGM+stability": (True, True, True, False),
    "TERGM+stability+RE": (True, True, True, True),
    "STERGM": (False, False, True, False),
    "STERGM+RE": (False, False, True, True),
}
MODEL_NUMBERS = {str(k + 1): v for k, v in enumerate(VARIANTS)}


@dataclass(frozen=True)
class Term:
    """One regressor. ``name`` is a covariate, ``intercept``, or a role
    (``sender``/``receiver``) for random smooths."""

    name: str
    kind: str = "time-varying"

    @property
    def label(self) -> str:
        if self.kind == "random-smooth":
            return f"re({self.name})"
        if self.kind == "time-varying":
            return f"s({self.name})"
        return self.name


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    terms: tuple
    include_intercept: bool = True
    intercept_kind: str = "constant"
    vc_dimension: int = 65
    vc_degree: int = 2
    vc_penalty_order: int = 1
    re_dimension: int = 9
    re_degree: int = 2
    re_penalty_order: int = 1

    def __post_init__(self):
        variant = MODEL_NUMBERS.get(str(self.variant), self.variant)
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "terms", tuple(t if isinstance(t, Term) else Term(*t) for t in self.terms))
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; choose from {list(VARIANTS)}")
        pooled, lag, cov, re = VARIANTS[variant]
        names = [t.name for t in self.terms]
        if len(set(t.label for t in self.terms)) != len(self.terms) or len(set(names)) != len(names):
            raise ContractError("duplicate terms in model spec")
        for t in self.terms:
            if t.kind not in KINDS:
                raise ContractError(f"unknown term kind {t.kind!r}")
            if t.kind == "random-smooth":
                if t.name not in ROLES:
                    raise ContractError(f"random smooths are indexed by role, got {t.name!r}")
            elif t.name not in COVARIATE_NAMES:
                raise ContractError(f"unknown covariate {t.name!r}")
        has_lag = "lag_edge" in names
        has_re = any(t.kind == "random-smooth" for t in self.terms)
        covs = [n for n in names if n in DYAD_FIELDS]
        if self.intercept_kind not in ("constant", "time-varying"):
            raise ContractError("intercept_kind must be constant or time-varying")
        if variant == "AR-ERGM":
            if names != ["lag_edge"] or not self.include_intercept:
                raise ContractError("AR-ERGM is exactly intercept + lagged edge")
        if not pooled and has_lag:
            raise ContractError(f"{variant} cannot use the lagged response as a regressor")
        if pooled and lag and not has_lag:
            raise ContractError(f"{variant} requires the lag_edge term")
        if pooled and not lag and has_lag:
            raise ContractError(f"{variant} has no dyadic stability term")
        if covs and not cov:
            raise ContractError(f"{variant} takes no covariates")
        if has_re != re:
            raise ContractError(f"{variant} {'requires' if re else 'forbids'} random smooth terms")
        if re and sorted(t.name for t in self.terms if t.kind == "random-smooth") != sorted(ROLES):
            raise ContractError("random-effect variants need both sender and receiver smooths")

    @property
    def pooled(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def sides(self) -> tuple[str, ...]:
        return ("pooled",) if self.pooled else ("formation", "persistence")

    @classmethod
    def default(cls, variant: str, covariates: Sequence[str] = DYAD_FIELDS, kind: str = "time-varying",
                **kw) -> "ModelSpec":
        """Standard term list for one of the seven variants."""
        variant = MODEL_NUMBERS.get(str(variant), variant)
        pooled, lag, cov, re = VARIANTS[variant]
        terms = []
        if cov:
            terms += [Term(c, kind) for c in covariates]
        if lag:
            terms.append(Term("lag_edge", "constant"))
        if re:
            terms += [Term("sender", "random-smooth"), Term("receiver", "random-smooth")]
        return cls(variant, tuple(terms), **kw)

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("variant", "include_intercept", "intercept_kind", "vc_dimension",
                                            "vc_degree", "vc_penalty_order", "re_dimension", "re_degree",
                                            "re_penalty_order")}
        d["terms"] = [[t.name, t.kind] for t in self.terms]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        d = dict(d)
        d["terms"] = tuple(Term(*t) for t in d.get("terms", ()))
        return cls(**d)


# --------------------------------------------------------------------------- rows

@dataclass
class DyadTable:
    """Column-oriented table of scored dyads, concatenated over transitions."""

    time: np.ndarray
    sender: np.ndarray
    receiver: np.ndarray
    response: np.ndarray
    side: np.ndarray
    values: dict = field(default_factory=dict)

    def __len__(self):
        return self.time.size

    def column(self, name: str) -> np.ndarray:
        if name == "intercept":
            return np.ones(len(self))
        return self.values[name]

    def subset(self, mask) -> "DyadTable":
        return DyadTable(self.time[mask], self.sender[mask], self.receiver[mask], self.response[mask],
                         self.side[mask], {k: v[mask] for k, v in self.values.items()})


def side_mask(tr: TransitionData, side: str) -> np.ndarray:
    if side == "formation":
        return tr.formation_mask
    if side == "persistence":
        return tr.persistence_mask
    if side in ("pooled", "all"):
        return tr.formation_mask | tr.persistence_mask
    raise ContractError(f"unknown side {side!r}")


def build_dyad_table(trs: Sequence[TransitionData], covariates, side: str,
                     needed: Optional[Sequence[str]] = None) -> DyadTable:
    needed = list(COVARIATE_NAMES if needed is None else needed)
    exo = [c for c in needed if c in DYAD_FIELDS and c not in NETWORK_FIELDS]
    parts = []
    for tr in trs:
        mask = side_mask(tr, side)
        I, J = np.nonzero(mask)
        vals = {}
        if any(c in NETWORK_FIELDS for c in needed):
            stats = dyad_matrices(tr.lagged)
            vals.update({c: stats[c][mask] for c in NETWORK_FIELDS if c in needed})
        if exo:
            cov = covariate_matrices(tr, covariates)
            vals.update({c: cov[c][mask] for c in exo})
        vals["lag_edge"] = tr.lagged[mask].astype(float)
        actors = np.array(tr.actors, dtype=object)
        sides = np.where(tr.lagged[mask], "persistence", "formation").astype(object)
        parts.append((np.full(I.size, float(tr.t)), actors[I], actors[J], tr.current[mask].astype(float),
                      sides, vals))
    if not parts:
        raise ContractError("no transitions to assemble")
    keys = parts[0][5].keys()
    return DyadTable(np.concatenate([p[0] for p in parts]),
                     np.concatenate([p[1] for p in parts]),
                     np.concatenate([p[2] for p in parts]),
                     np.concatenate([p[3] for p in parts]),
                     np.concatenate([p[4] for p in parts]),
                     {k: np.concatenate([p[5][k] for p in parts]) for k in keys})


# ------------------------------------------------------------------------ layout

@dataclass
class BlockLayout:
    """Everything needed to rebuild one design block for arbitrary rows."""

    label: str
    kind: str
    covariate: str
    role: Optional[str] = None
    basis: Optional[SplineBasis] = None
    constraint: Optional[np.ndarray] = None
    actors: Optional[list] = None
    penalties: list = field(default_factory=list)

    def build(self, table: DyadTable, clamp: bool = True) -> DesignBlock:
        if self.kind == "constant":
            return DesignBlock(self.label, table.column(self.covariate)[:, None], [], kind="constant")
        if self.kind == "time-varying":
            block = varying_coeff_block(table.column(self.covariate), table.time, self.basis, self.label, clamp=clamp)
            if self.constraint is not None:
                cols = block.columns @ self.constraint
                block = DesignBlock(self.label, cols, [self.constraint.T @ S @ self.constraint
                                                       for S in block.penalties], self.constraint, block.kind)
            return block
        ids = table.sender if self.role == "sender" else table.receiver
        known = np.isin(ids, np.array(self.actors, dtype=object))
        sub = random_smooth_block(ids[known], table.time[known], self.basis, self.actors, self.label, clamp=clamp)
        X = sub.columns.tocoo()
        rows = np.flatnonzero(known)[X.row]
        full = sp.csr_matrix((X.data, (rows, X.col)), shape=(len(table), sub.n_columns))
        return DesignBlock(self.label, full, sub.penalties, kind="random-smooth")

    def to_dict(self):
        return {"label": self.label, "kind": self.kind, "covariate": self.covariate, "role": self.role,
                "basis": None if self.basis is None else self.basis.to_dict(),
                "constraint": None if self.constraint is None else self.constraint.tolist(),
                "actors": self.actors}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], d["kind"], d["covariate"], d.get("role"),
                   None if d.get("basis") is None else SplineBasis(**d["basis"]),
                   None if d.get("constraint") is None else np.array(d["constraint"], dtype=float),
                   d.get("actors"))


def make_layout(spec: ModelSpec, table: DyadTable) -> list[BlockLayout]:
    """Fix bases, constraints and actor sets from the training rows."""
    lo, hi = float(table.time.min()), float(table.time.max())
    n_times = np.unique(table.time).size
    out = []

    def vc_basis():
        if n_times < 2:
            return SplineBasis(lo, lo, 1, 0, spec.vc_penalty_order)
        dim = max(min(spec.vc_dimension, n_times + spec.vc_degree - 1), spec.vc_degree + 1)
        return SplineBasis(lo, hi, dim, spec.vc_degree, spec.vc_penalty_order)

    if spec.include_intercept:
        out.append(BlockLayout("intercept", "constant", "intercept"))
        if spec.intercept_kind == "time-varying" and n_times >= 2:
            bl = BlockLayout("s(intercept)", "time-varying", "intercept", basis=vc_basis())
            # a pure time smooth is confounded with the intercept: center it
            bl.constraint = apply_centering_constraint(bl.build(table, clamp=False)).constraint
            out.append(bl)
    for t in spec.terms:
        if t.kind == "constant":
            out.append(BlockLayout(t.label, "constant", t.name))
        elif t.kind == "time-varying":
            out.append(BlockLayout(t.label, "time-varying", t.name, basis=vc_basis()))
        else:
            ids = table.sender if t.name == "sender" else table.receiver
            actors = sorted(set(ids.tolist()))
            if n_times < 2:
                basis = SplineBasis(lo, lo, 1, 0, spec.re_penalty_order)
            else:
                basis = SplineBasis(lo, hi, spec.re_dimension, spec.re_degree, spec.re_penalty_order)
            out.append(BlockLayout(t.label, "random-smooth", "", role=t.name, basis=basis, actors=actors))
    return out


def assemble_design(trs: Sequence[TransitionData], covariates, spec: ModelSpec, side: str):
    """Response vector and design blocks for one side of the model.

    Returns ``(y, blocks, layout, table)``; ``layout`` rebuilds the same
    blocks for new rows.
    """
    if side == "pooled" and not spec.pooled:
        raise ContractError(f"{spec.variant} is fitted per side, not pooled")
    if side != "pooled" and spec.pooled:
        raise ContractError(f"{spec.variant} is a pooled model")
    needed = [t.name for t in spec.terms if t.kind != "random-smooth"]
    table = build_dyad_table(trs, covariates, side, needed)
    if len(table) == 0:
        return table.response, [], [], table
    layout = make_layout(spec, table)
    blocks = [b.build(table, clamp=False) for b in layout]
    return table.response, blocks, layout, table


# ------------------------------------------------------------------------ design

class Design:
    """Dense and sparse column groups of a stacked design matrix.

    Coefficients are ordered as the blocks are given; dense blocks are kept
    in one array and sparse (actor-nested) blocks in one CSR matrix.
    """

    def __init__(self, blocks: Sequence[DesignBlock]):
        if not blocks:
            raise ContractError("empty design")
        self.blocks = list(blocks)
        self.n = blocks[0].columns.shape[0]
        starts = np.cumsum([0] + [b.n_columns for b in blocks])
        self.p = int(starts[-1])
        self.slices = {b.label: slice(int(s), int(e)) for b, s, e in zip(blocks, starts[:-1], starts[1:])}
        self.dense_idx = np.concatenate([np.arange(self.slices[b.label].start, self.slices[b.label].stop)
                                         for b in blocks if not b.is_sparse] or [np.zeros(0, int)])
        self.sparse_idx = np.concatenate([np.arange(self.slices[b.label].start, self.slices[b.label].stop)
                                          for b in blocks if b.is_sparse] or [np.zeros(0, int)])
        dense = [np.asarray(b.columns, dtype=float) for b in blocks if not b.is_sparse]
        self.dense = np.hstack(dense) if dense else np.zeros((self.n, 0))
        sparse = [b.columns for b in blocks if b.is_sparse]
        self.sparse = sp.hstack(sparse, format="csr") if sparse else None
        # penalty list: (slice, matrix) in block order
        self.penalties = [(self.slices[b.label], np.asarray(S, dtype=float)) for b in blocks for S in b.penalties]
        self.penalty_owner = [b.label for b in blocks for _ in b.penalties]

    def dot(self, beta):
        eta = self.dense @ beta[self.dense_idx]
        if self.sparse is not None:
            eta = eta + self.sparse @ beta[self.sparse_idx]
        return eta

    def rdot(self, v):
        out = np.empty(self.p)
        out[self.dense_idx] = self.dense.T @ v
        if self.sparse is not None:
            out[self.sparse_idx] = self.sparse.T @ v
        return out

    def gram(self, w):
        H = np.empty((self.p, self.p))
        D, di, si = self.dense, self.dense_idx, self.sparse_idx
        H[np.ix_(di, di)] = D.T @ (D * w[:, None])
        if self.sparse is not None:
            S = self.sparse
            WS = S.multiply(w[:, None]).tocsr()
            cross = np.asarray((WS.T @ D))
            H[np.ix_(si, di)] = cross
            H[np.ix_(di, si)] = cross.T
            H[np.ix_(si, si)] = (S.T @ WS).toarray()
        return H

    def penalty_matrix(self, lambdas) -> np.ndarray:
        Sl = np.zeros((self.p, self.p))
        for lam, (sl, S) in zip(lambdas, self.penalties):
            Sl[sl, sl] += lam * S
        return Sl

    def dense_matrix(self) -> np.ndarray:
        X = np.empty((self.n, self.p))
        X[:, self.dense_idx] = self.dense
        if self.sparse is not None:
            X[:, self.sparse_idx] = self.sparse.toarray()
        return X


# ------------------------------------------------------------------------- PIRLS

def loglik(y, eta) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass
class FitResult:
    """Penalized estimate for one side.

    ``coefficients`` are in the constrained parameterization; ``blocks``
    maps each block label to its coefficient slice and rebuild metadata.
    ``lambdas`` holds one value per penalty of each block; the implied prior
    variance is ``1 / lambda`` (the Bernoulli scale is fixed at 1).
    """

    coefficients: np.ndarray
    lambdas: dict
    covariance: np.ndarray
    deviance: float
    penalized_deviance: float
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    trace: list
    blocks: dict
    n_obs: int
    edf: float = float("nan")
    reml: float = float("nan")

    def block_coefficients(self, label):
        return self.coefficients[self.blocks[label]["slice"]]

    def raw_coefficients(self, label):
        """Coefficients on the spline basis (undoing any centering constraint)."""
        v = self.block_coefficients(label)
        Z = self.blocks[label].get("constraint")
        return v if Z is None else Z @ v

    @property
    def sigma2(self) -> dict:
        return {k: [1.0 / l if l > 0 else math.inf for l in v] for k, v in self.lambdas.items()}

    def to_dict(self):
        blocks = {}
        for k, b in self.blocks.items():
            blocks[k] = {"start": b["slice"].start, "stop": b["slice"].stop,
                         **{kk: vv for kk, vv in b.items() if kk not in ("slice", "constraint", "layout")},
                         "layout": b["layout"].to_dict() if b.get("layout") is not None else None}
        return {"coefficients": self.coefficients.tolist(), "lambdas": self.lambdas,
                "covariance": self.covariance.ravel().tolist(), "dimension": int(self.coefficients.size),
                "deviance": self.deviance, "penalized_deviance": self.penalized_deviance, "loglik": self.loglik,
                "gradient_norm": float(self.gradient_norm), "iterations": int(self.iterations),
                "converged": bool(self.converged),
                "trace": self.trace, "blocks": blocks, "n_obs": self.n_obs, "edf": self.edf, "reml": self.reml}

    @classmethod
    def from_dict(cls, d):
        p = d["dimension"]
        blocks = {}
        for k, b in d["blocks"].items():
            lay = BlockLayout.from_dict(b["layout"]) if b.get("layout") else None
            blocks[k] = {kk: vv for kk, vv in b.items() if kk not in ("start", "stop", "layout")}
            blocks[k]["slice"] = slice(b["start"], b["stop"])
            blocks[k]["layout"] = lay
            blocks[k]["constraint"] = None if lay is None else lay.constraint
        return cls(np.array(d["coefficients"], dtype=float), d["lambdas"],
                   np.array(d["covariance"], dtype=float).reshape(p, p), d["deviance"], d["penalized_deviance"],
                   d["loglik"], d["gradient_norm"], d["iterations"], d["converged"], d["trace"], blocks,
                   d["n_obs"], _nan(d.get("edf")), _nan(d.get("reml")))


def _nan(v):
    return float("nan") if v is None else float(v)


def _flat_lambdas(design: Design, lambdas) -> np.ndarray:
    k = len(design.penalties)
    if lambdas is None:
        return np.ones(k)
    if isinstance(lambdas, Mapping):
        out = []
        for b in design.blocks:
            v = lambdas.get(b.label, 1.0)
            v = list(np.atleast_1d(np.asarray(v, dtype=float)))
            if len(v) == 1 and len(b.penalties) > 1:
                v = v * len(b.penalties)
            if len(v) != len(b.penalties) and b.penalties:
                raise ContractError(f"block {b.label}: expected {len(b.penalties)} smoothing parameters")
            out += v[:len(b.penalties)]
        lam = np.array(out, dtype=float)
    else:
        lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
        if lam.size == 1 and k != 1:
            lam = np.repeat(lam, k)  # a scalar applies to every penalty, if any
    if lam.size != k:
        raise ContractError(f"expected {k} smoothing parameters, got {lam.size}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ContractError("smoothing parameters must be finite and nonnegative")
    return lam


def _lambda_dict(design: Design, lam) -> dict:
    out = {b.label: [] for b in design.blocks if b.penalties}
    for owner, l in zip(design.penalty_owner, lam):
        out[owner].append(float(l))
    return out


def _chol(A):
    try:
        return sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError("penalized Hessian is not positive definite") from None


def penalized_objective(design: Design, y, beta, Sl) -> float:
    """Penalized log-likelihood ``l(b) - b'Sb/2 - ridge |b|^2 / 2``."""
    eta = design.dot(beta)
    return loglik(y, eta) - 0.5 * beta @ Sl @ beta - 0.5 * RIDGE * beta @ beta


def penalized_gradient(design: Design, y, beta, Sl) -> np.ndarray:
    mu = expit(design.dot(beta))
    return design.rdot(y - mu) - Sl @ beta - RIDGE * beta


DECREMENT_TOL = 1e-14  # relative to the penalized deviance


def _pirls(design: Design, y, lam, beta0=None, tol=1e-8, max_iter=200, grad_tol=1e-6):
    Sl = design.penalty_matrix(lam)
    beta = np.zeros(design.p) if beta0 is None else np.array(beta0, dtype=float)
    if beta0 is None and design.blocks[0].label == "intercept":
        ybar = np.clip(y.mean(), 1e-4, 1 - 1e-4)
        beta[design.slices["intercept"]] = math.log(ybar / (1 - ybar))
    eta = design.dot(beta)
    pdev = -2 * loglik(y, eta) + beta @ Sl @ beta + RIDGE * beta @ beta
    trace = [pdev]
    converged = False
    it = 0
    grad = None
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = mu * (1 - mu)
        grad = design.rdot(y - mu) - Sl @ beta - RIDGE * beta
        H = design.gram(w) + Sl
        H[np.diag_indices_from(H)] += RIDGE
        step = sla.cho_solve(_chol(H), grad, check_finite=False)
        decrement = float(grad @ step)
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = design.dot(cand)
            pdev_c = -2 * loglik(y, eta_c) + cand @ Sl @ cand + RIDGE * cand @ cand
            if np.isfinite(pdev_c) and pdev_c <= pdev + 1e-12 * abs(pdev):
                break
            t *= 0.5
            if t < 1e-12:
                cand, eta_c, pdev_c = beta, eta, pdev
                break
        rel = abs(pdev - pdev_c) / (abs(pdev_c) + 0.1)
        beta, eta, pdev = cand, eta_c, pdev_c
        trace.append(pdev)
        if rel < tol:
            mu = expit(eta)
            grad = design.rdot(y - mu) - Sl @ beta - RIDGE * beta
            # large penalties put the gradient's rounding floor above grad_tol;
            # the Newton decrement is scale free and still certifies the optimum
            small = np.max(np.abs(grad)) < grad_tol or decrement < DECREMENT_TOL * (1.0 + abs(pdev))
            if small or t < 1e-12:
                converged = small or rel == 0.0
                break
    mu = expit(eta)
    w = mu * (1 - mu)
    grad = design.rdot(y - mu) - Sl @ beta - RIDGE * beta
    H = design.gram(w)
    return beta, eta, pdev, trace, converged, it, grad, H, Sl


def _block_info(design: Design, layout):
    lay = {b.label: b for b in (layout or [])}
    out = {}
    for b in design.blocks:
        bl = lay.get(b.label)
        if bl is None and "basis" in b.meta:
            # blocks built by hand: recover enough to evaluate the curve
            bl = BlockLayout(b.label, b.kind, b.label, basis=SplineBasis(**b.meta["basis"]),
                             constraint=b.constraint, actors=b.meta.get("actors"))
        out[b.label] = {"slice": design.slices[b.label], "kind": b.kind, "constraint": b.constraint,
                        "layout": bl}
    return out


def pirls_fit(response, blocks: Sequence[DesignBlock], lambdas=None, *, layout=None, beta0=None,
              tol=1e-8, max_iter=200, design: Optional[Design] = None) -> FitResult:
    """Penalized IRLS for a Bernoulli response with logit link.

    Maximizes ``loglik - 0.5 * sum_k lambda_k u_k' S_k u_k`` (plus a 1e-8
    ridge) by Newton steps with step-halving. ``lambdas`` may be a scalar, a
    flat sequence with one value per penalty, or a mapping block label ->
    value(s).
    """
    y = np.asarray(response, dtype=float)
    design = design or Design(blocks)
    if design.n != y.size:
        raise ContractError("response length does not match design rows")
    if design.p >= design.n:
        raise ContractError(f"{design.p} columns for {design.n} rows")
    lam = _flat_lambdas(design, lambdas)
    beta, eta, pdev, trace, converged, it, grad, H, Sl = _pirls(design, y, lam, beta0, tol, max_iter)
    if not converged:
        raise NumericalError(f"PIRLS did not converge in {it} iterations (|grad|={np.max(np.abs(grad)):.3g})")
    mu = expit(eta)
    if np.max(np.abs(beta)) > SEPARATION_LIMIT:
        warnings.warn("coefficient magnitude above 50: possible (quasi-)complete separation", RuntimeWarning)
    elif np.any(np.minimum(mu, 1 - mu) < 1e-8):
        warnings.warn("fitted probabilities numerically 0 or 1: possible (quasi-)complete separation",
                      RuntimeWarning)
    A = H + Sl
    A[np.diag_indices_from(A)] += RIDGE
    cf = _chol(A)
    cov = sla.cho_solve(cf, np.eye(design.p), check_finite=False)
    cov = 0.5 * (cov + cov.T)
    ll = loglik(y, eta)
    edf = float(np.sum(cov * H))
    return FitResult(beta, _lambda_dict(design, lam), cov, -2 * ll, pdev, ll, float(np.max(np.abs(grad))),
                     it, converged, [float(v) for v in trace], _block_info(design, layout), int(y.size), edf)


# --------------------------------------------------------------- smoothing search

class _Criterion:
    """Laplace-approximate restricted marginal likelihood (negative, up to a constant).

    ``V = -l(b) + b'S b / 2 + log|H + S| / 2 - log|S|_+ / 2`` at the
    penalized estimate ``b`` for the given smoothing parameters.
    """

    def __init__(self, design: Design, y):
        self.design, self.y = design, y
        self.beta = None
        # per block: penalty indices and structural rank of the summed penalty
        self.groups = []
        k = 0
        for b in design.blocks:
            m = len(b.penalties)
            if m:
                total = sum(np.asarray(S) for S in b.penalties)
                ev = np.linalg.eigvalsh(total)
                rank = int(np.sum(ev > ev.max() * 1e-9))
                self.groups.append((list(range(k, k + m)), design.slices[b.label], rank))
            k += m
        self.cache = {}

    def log_pdet(self, lam) -> float:
        out = 0.0
        for idx, sl, rank in self.groups:
            if any(lam[i] <= 0 for i in idx):
                return -math.inf
            Sb = sum(lam[i] * self.design.penalties[i][1] for i in idx)
            ev = np.linalg.eigvalsh(Sb)[::-1][:rank]
            out += float(np.sum(np.log(ev)))
        return out

    def __call__(self, log10_lam) -> float:
        key = tuple(np.round(log10_lam, 12))
        if key in self.cache:
            return self.cache[key]
        lam = 10.0 ** np.asarray(log10_lam, dtype=float)
        beta, eta, pdev, _, _, _, _, H, Sl = _pirls(self.design, self.y, lam, self.beta)
        A = H + Sl
        A[np.diag_indices_from(A)] += RIDGE
        c, _ = _chol(A)
        logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        val = -loglik(self.y, eta) + 0.5 * beta @ Sl @ beta + 0.5 * logdet - 0.5 * self.log_pdet(lam)
        if not np.isfinite(val):
            raise NumericalError("smoothing criterion evaluation failed")
        self.beta = beta
        self.cache[key] = float(val)
        return float(val)


GRID = np.arange(-4.0, 6.0 + 1e-9, 0.5)
_GOLD = (math.sqrt(5) - 1) / 2


def _golden(f, a, b, tol=0.02):
    c, d = b - _GOLD * (b - a), a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def select_lambdas(response, blocks: Sequence[DesignBlock], *, start: float = 1.0, max_sweeps: int = 3,
                   design: Optional[Design] = None, return_trace: bool = False):
    """Choose smoothing parameters by coordinate search on log10(lambda).

    Each coordinate is scanned over the grid -4, -3.5, ..., 6 and refined by
    golden-section search within one grid step of the best grid point; later
    sweeps refine locally. Deterministic for given inputs.
    """
    y = np.asarray(response, dtype=float)
    design = design or Design(blocks)
    k = len(design.penalties)
    rho = np.full(k, float(start))
    crit = _Criterion(design, y)
    if k == 0:
        return (np.zeros(0), {}) if return_trace else np.zeros(0)
    best = crit(rho)
    history = []
    for sweep in range(max_sweeps):
        moved = 0.0
        for j in range(k):
            def f(v, j=j):
                r = rho.copy()
                r[j] = v
                return crit(r)
            if sweep == 0:
                vals = [f(g) for g in GRID]
                g0 = GRID[int(np.argmin(vals))]
                history.append((j, list(GRID), vals))
            else:
                g0 = rho[j]
            lo, hi = max(GRID[0], g0 - 0.5), min(GRID[-1], g0 + 0.5)
            v, fv = _golden(f, lo, hi)
            cand = [(fv, v), (f(g0), g0), (f(rho[j]), rho[j])]
            fbest, vbest = min(cand, key=lambda c: (c[0], c[1]))
            moved = max(moved, abs(vbest - rho[j]))
            rho[j] = vbest
            best = fbest
        if sweep > 0 and moved < 0.05:
            break
    lam = 10.0 ** rho
    if return_trace:
        return lam, {"criterion": best, "log10_lambda": rho.tolist(), "grid_scans": history}
    return lam


# --------------------------------------------------------------------- curves

def coefficient_curve(fit: FitResult, term: str, grid, actor: Optional[str] = None):
    """Values and standard errors of a time-varying coefficient (or of one
    actor's random curve) on ``grid``; the basis is clamped outside the
    training range."""
    label = _resolve_label(fit, term)
    info = fit.blocks[label]
    lay = info.get("layout")
    if info["kind"] == "constant" or lay is None or lay.basis is None:
        raise ContractError(f"term {term!r} is not a curve")
    B = lay.basis.evaluate(np.asarray(grid, dtype=float), clamp=True)
    sl = info["slice"]
    if info["kind"] == "random-smooth":
        if actor is None:
            raise ContractError("random-smooth curves need an actor")
        if actor not in lay.actors:
            raise ContractError(f"unknown actor {actor!r} for {label}")
        Q = lay.basis.dimension
        k = lay.actors.index(actor)
        sl = slice(sl.start + k * Q, sl.start + (k + 1) * Q)
        M = B
    else:
        M = B if info.get("constraint") is None else B @ info["constraint"]
    v = M @ fit.coefficients[sl]
    cov = fit.covariance[sl, sl]
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", M, cov, M), 0.0))
    return v, se


def random_curves(fit: FitResult, role: str, grid) -> tuple[list, np.ndarray]:
    """All actors' random curves of one role evaluated on ``grid``."""
    label = _resolve_label(fit, role)
    info = fit.blocks[label]
    lay = info["layout"]
    if info["kind"] != "random-smooth":
        raise ContractError(f"{role!r} is not a random smooth")
    Q = lay.basis.dimension
    B = lay.basis.evaluate(np.asarray(grid, dtype=float), clamp=True)
    A = fit.coefficients[info["slice"]].reshape(len(lay.actors), Q)
    return list(lay.actors), A @ B.T


def term_curve(fit: FitResult, name: str, grid):
    """Total effect of covariate ``name`` on ``grid``: constant and smooth
    parts added, standard errors from their joint covariance."""
    grid = np.asarray(grid, dtype=float)
    parts, cols = [], []
    for label, info in fit.blocks.items():
        lay = info.get("layout")
        if lay is None or lay.covariate != name or info["kind"] == "random-smooth":
            continue
        sl = info["slice"]
        if info["kind"] == "constant":
            M = np.ones((grid.size, 1))
        else:
            M = lay.basis.evaluate(grid, clamp=True)
            if info.get("constraint") is not None:
                M = M @ info["constraint"]
        parts.append(M)
        cols.append(np.arange(sl.start, sl.stop))
    if not parts:
        raise ContractError(f"unknown term {name!r}")
    M, idx = np.hstack(parts), np.concatenate(cols)
    v = M @ fit.coefficients[idx]
    cov = fit.covariance[np.ix_(idx, idx)]
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", M, cov, M), 0.0))
    return v, se


def fixed_terms(fit: FitResult) -> list[str]:
    """Covariate names with a fixed (non-random) effect, in design order."""
    names = [info["layout"].covariate for info in fit.blocks.values()
             if info.get("layout") is not None and info["kind"] != "random-smooth"]
    return list(dict.fromkeys(names))


def coefficient_table(model: "FittedModel", grid):
    """Long table ``side, term, period, value, se`` of all fixed effects."""
    grid = np.asarray(grid, dtype=float)
    rows = []
    for side, fit in model.fits.items():
        if fit is None:
            continue
        for name in fixed_terms(fit):
            v, se = term_curve(fit, name, grid)
            rows += [(side, name, g, a, b) for g, a, b in zip(grid, v, se)]
    return pd.DataFrame(rows, columns=["side", "term", "period", "value", "se"])


def _resolve_label(fit: FitResult, term: str) -> str:
    for cand in (term, f"s({term})", f"re({term})"):
        if cand in fit.blocks:
            return cand
    raise ContractError(f"unknown term {term!r}")


# ------------------------------------------------------------------ full model

@dataclass
class FittedModel:
    spec: ModelSpec
    fits: dict  # side -> FitResult or None
    time_range: tuple
    width: int = 1
    diagnostics: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def fit_for(self, side: str) -> Optional[FitResult]:
        return self.fits.get("pooled") if self.spec.pooled else self.fits.get(side)

    def curve(self, term: str, grid, side: Optional[str] = None, actor=None):
        side = side or self.spec.sides[0]
        fit = self.fits.get(side)
        if fit is None:
            raise ContractError(f"no fit for side {side!r}")
        return coefficient_curve(fit, term, grid, actor)

    def loglik(self) -> float:
        return float(sum(f.loglik for f in self.fits.values() if f is not None))

    def linear_predictor(self, table: DyadTable, side: str) -> np.ndarray:
        fit = self.fit_for(side)
        if fit is None:
            return np.zeros(len(table))
        blocks = [fit.blocks[label]["layout"].build(table, clamp=True) for label in fit.blocks]
        return Design(blocks).dot(fit.coefficients)

    def probabilities(self, table: DyadTable) -> np.ndarray:
        """Edge probabilities for the rows of ``table``, each on its own side."""
        p = np.empty(len(table))
        for side in ("formation", "persistence"):
            m = table.side == side
            if m.any():
                p[m] = expit(self.linear_predictor(table.subset(m), side))
        return p

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "time_range": [int(t) for t in self.time_range], "width": int(self.width),
                "fits": {k: (None if v is None else v.to_dict()) for k, v in self.fits.items()},
                "diagnostics": self.diagnostics, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(ModelSpec.from_dict(d["spec"]), {k: (None if v is None else FitResult.from_dict(v))
                                                    for k, v in d["fits"].items()},
                   tuple(d["time_range"]), d.get("width", 1), d.get("diagnostics", []), d.get("provenance", {}))


class _SideSkipped(ContractError):
    """A side with too little data to estimate; ``fit_model`` skips it."""


def fit_side(trs, covariates, spec: ModelSpec, side: str, lambdas="select") -> Optional[FitResult]:
    y, blocks, layout, table = assemble_design(trs, covariates, spec, side)
    if len(y) == 0:
        return None
    design = Design(blocks)
    if design.p >= len(y):
        raise _SideSkipped(f"{side}: {design.p} columns for {len(y)} rows, fit skipped")
    if isinstance(lambdas, str) and lambdas == "select":
        lam, info = select_lambdas(y, blocks, design=design, return_trace=True)
        fit = pirls_fit(y, blocks, lam, layout=layout, design=design)
        fit.reml = info["criterion"]
        return fit
    lam = lambdas.get(side, lambdas) if isinstance(lambdas, Mapping) and side in lambdas else lambdas
    return pirls_fit(y, blocks, lam, layout=layout, design=design)


def fit_model(panel: NetworkPanel, spec: ModelSpec, *, periods=None, lambdas="select",
              trs: Optional[Sequence[TransitionData]] = None) -> FittedModel:
    """Fit all sides of ``spec`` on the panel's transitions.

    ``periods`` restricts the transitions (by their end period). ``lambdas``
    is ``"select"`` or fixed values (optionally keyed by side).
    """
    if trs is None:
        if periods is None and len(panel.periods) < 3:
            raise ContractError("fitting needs a panel with at least 3 periods")
        trs = transitions(panel, periods)
    if not trs:
        raise ContractError("no usable transitions")
    cov = panel.prepared if any(t.name in DYAD_FIELDS and t.name not in NETWORK_FIELDS
                                for t in spec.terms) else panel.covariates
    fits, diag = {}, []
    for side in spec.sides:
        try:
            fit = fit_side(trs, cov, spec, side, lambdas)
        except _SideSkipped as e:
            fit = None
            diag.append(str(e))
            logger.warning("%s", e)
        else:
            if fit is None:
                diag.append(f"{side}: no rows in any transition, fit skipped")
                logger.warning("%s side has no rows; skipped", side)
        fits[side] = fit
    times = [tr.t for tr in trs]
    return FittedModel(spec, fits, (min(times), max(times)), panel.width, diag)


def horizon_transition(panel: NetworkPanel, t: int) -> tuple[TransitionData, bool]:
    """Step ``t -> next`` for prediction; ``observed`` is False past the panel end."""
    k = panel.periods.index(t)
    if k + 1 < len(panel.periods):
        from .transition import build_transition
        return build_transition(panel, panel.periods[k + 1]), True
    actors = tuple(sorted(panel.actors[t]))
    Y = adjacency(panel.edges[t], actors)
    return TransitionData(t + panel.width, t, actors, actors, Y, np.zeros_like(Y)), False
