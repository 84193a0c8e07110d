"""Sensitivity of the fit to the binarization threshold and the window width.

Every (threshold, width) setting re-binarizes the same raw flows and refits
the same model. By default the smoothing parameters of the baseline setting
are reused so that differences reflect the data, not the smoothing search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ContractError
from .fitter import ModelSpec, coefficient_table, fit_model
from .netpanel import ActorRegistry, CovariateTables, RawFlows, aggregate_windows, binarize
from .transition import transitions

DEFAULT_THRESHOLDS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_WIDTHS = (1, 2, 3)


def windowed_panel(flows: RawFlows, covariates: CovariateTables, registry: ActorRegistry,
                   threshold: float, width: int):
    start = flows.periods[0]
    f, cov = aggregate_windows(flows, width, covariates, start=start)
    periods = list(range(f.periods[0], f.periods[-1] + 1, width))
    return binarize(f, threshold, registry, cov, width=width, periods=periods)


def nesting_table(panels: dict) -> pd.DataFrame:
    """Check that edge sets shrink as the threshold rises.

    ``panels`` maps ``(threshold, width)`` to a panel. Returns one row per
    adjacent threshold pair, width and period.
    """
    rows = []
    for width in sorted({w for _, w in panels}):
        ths = sorted(t for t, w in panels if w == width)
        for lo, hi in zip(ths, ths[1:]):
            a, b = panels[(lo, width)], panels[(hi, width)]
            for p in a.periods:
                ea, eb = a.edges[p], b.edges.get(p, frozenset())
                rows.append({"width": width, "period": p, "threshold_low": lo, "threshold_high": hi,
                             "edges_low": len(ea), "edges_high": len(eb), "nested": eb <= ea})
    return pd.DataFrame(rows, columns=["width", "period", "threshold_low", "threshold_high",
                                       "edges_low", "edges_high", "nested"])


@dataclass
class RobustnessResult:
    summary: pd.DataFrame
    coefficients: pd.DataFrame
    nesting: pd.DataFrame

    @property
    def nested(self) -> bool:
        return bool(self.nesting["nested"].all())


def robustness_grid(flows: RawFlows, covariates: CovariateTables, registry: ActorRegistry, spec: ModelSpec,
                    thresholds=DEFAULT_THRESHOLDS, widths=DEFAULT_WIDTHS, lambdas="baseline") -> RobustnessResult:
    """Refit ``spec`` at every threshold and window width.

    ``lambdas="baseline"`` selects smoothing parameters once at the first
    threshold with width 1 and reuses them; ``"select"`` reselects per setting.
    """
    thresholds = sorted(float(t) for t in thresholds)
    widths = sorted(int(w) for w in widths)
    if not thresholds or not widths or min(widths) < 1:
        raise ContractError("need at least one threshold and positive window widths")
    panels = {(t, w): windowed_panel(flows, covariates, registry, t, w) for w in widths for t in thresholds}
    fixed = lambdas
    if lambdas == "baseline":
        base = fit_model(panels[(thresholds[0], widths[0])], spec)
        fixed = {side: f.lambdas for side, f in base.fits.items() if f is not None}
    summary, coefs = [], []
    for (t, w), panel in panels.items():
        dens = [len(panel.edges[p]) / max(len(panel.actors[p]) * (len(panel.actors[p]) - 1), 1)
                for p in panel.periods]
        row = {"threshold": t, "width": w, "n_periods": len(panel.periods),
               "n_edges": int(sum(len(e) for e in panel.edges.values())), "mean_density": float(np.mean(dens)),
               "n_formation": 0, "n_persistence": 0, "loglik": np.nan, "converged": False}
        trs = transitions(panel)
        if len(trs) >= 1:
            row["n_formation"] = int(sum(tr.formation_mask.sum() for tr in trs))
            row["n_persistence"] = int(sum(tr.persistence_mask.sum() for tr in trs))
            model = fit_model(panel, spec, trs=trs, lambdas=fixed)
            row["loglik"] = model.loglik()
            row["converged"] = all(f.converged for f in model.fits.values() if f is not None)
            grid = [tr.t for tr in trs]
            c = coefficient_table(model, grid)
            c.insert(0, "width", w)
            c.insert(0, "threshold", t)
            coefs.append(c)
        summary.append(row)
    coef = pd.concat(coefs, ignore_index=True) if coefs else pd.DataFrame(
        columns=["threshold", "width", "side", "term", "period", "value", "se"])
    return RobustnessResult(pd.DataFrame(summary), coef, nesting_table(panels))
