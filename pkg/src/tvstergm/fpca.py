"""Functional principal components of fitted random-effect curves.

Curves are discretized on an equidistant grid and the covariance operator
is approximated by the sample covariance times the quadrature weight
``length / T``. Eigenfunctions are normalized so that their quadrature norm
is one and scores approximate ``integral xi(t) (phi_i(t) - mean(t)) dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import scipy.linalg as sla

from .errors import ContractError
from .fitter import FittedModel, random_curves

DEFAULT_GRID = 100


@dataclass(frozen=True)
class CurveBundle:
    actors: tuple
    grid: np.ndarray
    values: np.ndarray  # N x T

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ContractError("grid must be strictly increasing with at least 2 points")
        if not np.allclose(np.diff(g), g[1] - g[0], rtol=1e-9, atol=1e-12):
            raise ContractError("grid must be equidistant")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.actors), g.size):
            raise ContractError(f"values shape {v.shape} != ({len(self.actors)}, {g.size})")
        if not np.all(np.isfinite(v)):
            raise ContractError("curve values must be finite")

    @property
    def length(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    @property
    def weight(self) -> float:
        """Quadrature weight ``length / T``."""
        return self.length / self.grid.size


def discretize_curves(model: FittedModel, role: str, side: Optional[str] = None, *,
                      n_grid: int = DEFAULT_GRID, registry=None) -> CurveBundle:
    """Evaluate every actor's random curve of ``role`` on an equidistant grid.

    With a ``registry`` the curves are set to zero where the actor does not
    exist.
    """
    side = side or model.spec.sides[0]
    fit = model.fits.get(side)
    if fit is None:
        raise ContractError(f"model has no {side} fit")
    if f"re({role})" not in fit.blocks:
        raise ContractError(f"model has no random smooth for role {role!r}")
    lay = fit.blocks[f"re({role})"]["layout"]
    grid = np.linspace(lay.basis.lower, lay.basis.upper, n_grid)
    actors, values = random_curves(fit, role, grid)
    if registry is not None:
        width = getattr(model, "width", 1)
        for k, a in enumerate(actors):
            span = registry.spans.get(a)
            if span is not None:
                alive = (grid >= span[0]) & (grid <= span[1] + width - 1)
                values[k, ~alive] = 0.0
    return CurveBundle(tuple(actors), grid, values)


@dataclass(frozen=True)
class FpcaResult:
    grid: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray        # descending, functional scale
    eigenfunctions: np.ndarray     # M x T, quadrature norm 1
    scores: np.ndarray             # N x M
    actors: tuple
    weight: float
    total_variance: float

    @property
    def variance_shares(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def write(self, out_dir) -> list[str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        M = self.eigenfunctions.shape[0]
        comp = [f"comp{m + 1}" for m in range(M)]
        scores = pd.DataFrame(self.scores, columns=comp)
        scores.insert(0, "actor", list(self.actors))
        ef = pd.DataFrame(self.eigenfunctions.T, columns=[f"xi{m + 1}" for m in range(M)])
        ef.insert(0, "grid", self.grid)
        shares = pd.DataFrame({"component": np.arange(1, M + 1), "eigenvalue": self.eigenvalues,
                               "variance_share": self.variance_shares})
        paths = [out / "scores.csv", out / "eigenfunctions.csv", out / "variance_shares.csv"]
        for frame, p in zip((scores, ef, shares), paths):
            frame.to_csv(p, index=False, float_format="%.10g")
        return [str(p) for p in paths]


def fpca(bundle: CurveBundle, n_components: Optional[int] = None, *, center: bool = True) -> FpcaResult:
    """Eigen-decompose the discretized covariance operator of a curve bundle.

    Zero eigenvalues of a degenerate bundle are retained (ordered last).
    Each eigenfunction is signed so that its largest-magnitude entry is
    positive.
    """
    Phi = np.asarray(bundle.values, dtype=float)
    N, T = Phi.shape
    if N < 2:
        raise ContractError("FPCA needs at least 2 curves")
    M = min(N, T) if n_components is None else int(n_components)
    if not 1 <= M <= min(N, T):
        raise ContractError(f"n_components must be in [1, {min(N, T)}]")
    mean = Phi.mean(axis=0) if center else np.zeros(T)
    C = Phi - mean
    w = bundle.weight
    cov = (C.T @ C) / N
    ev, vec = sla.eigh(cov)
    order = np.argsort(ev)[::-1]
    ev, vec = np.clip(ev[order], 0.0, None), vec[:, order]
    total = float(w * np.trace(cov))
    ev, vec = ev[:M], vec[:, :M]
    idx = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[idx, np.arange(M)])
    xi = vec.T / np.sqrt(w)
    scores = w * (C @ xi.T)
    return FpcaResult(bundle.grid.copy(), mean, w * ev, xi, scores, tuple(bundle.actors), w, total)


def perturbation_curves(result: FpcaResult, component: int, multiple: float = 2.0):
    """Mean curve plus and minus ``multiple`` standard deviations of a component.

    ``component`` is 1-based.
    """
    M = result.eigenfunctions.shape[0]
    if not 1 <= component <= M:
        raise ContractError(f"component must be in [1, {M}]")
    if multiple < 0:
        raise ContractError("multiple must be nonnegative")
    k = component - 1
    delta = multiple * np.sqrt(result.eigenvalues[k]) * result.eigenfunctions[k]
    return result.mean + delta, result.mean - delta
