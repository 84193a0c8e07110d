"""Out-of-sample scoring and simulation-based goodness of fit."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import ContractError
from .fitter import ModelSpec, build_dyad_table, fit_model, horizon_transition
from .netpanel import NetworkPanel
from .netstats import DYAD_FIELDS, GOF_FIELDS, global_stats_matrix
from .transition import adjacency, build_transition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionSet:
    horizon: int
    sender: np.ndarray
    receiver: np.ndarray
    side: np.ndarray
    probability: np.ndarray
    observed: Optional[np.ndarray]

    def __len__(self):
        return self.probability.size

    def select(self, side: str):
        if side == "combined":
            return self.probability, self.observed
        m = self.side == side
        return self.probability[m], None if self.observed is None else self.observed[m]


def _needed(model):
    spec = getattr(model, "spec", None)
    if spec is None:
        return list(DYAD_FIELDS) + ["lag_edge"]
    return [t.name for t in spec.terms if t.kind != "random-smooth"]


def _horizon_table(model, panel: NetworkPanel, t: int):
    tr, observed = horizon_transition(panel, t)
    table = build_dyad_table([tr], panel.prepared, "pooled", _needed(model))
    return tr, observed, table


def predict_transition(model, panel: NetworkPanel, t: int) -> PredictionSet:
    """Probabilities for every dyad of the step from ``t`` to the next period.

    Dyads empty at ``t`` are scored by the formation side, occupied ones by
    the persistence side. ``model`` is anything with ``probabilities(table)``.
    Past the end of the panel, ``observed`` is None.
    """
    if t not in panel.periods:
        raise ContractError(f"period {t} not in panel")
    tr, observed, table = _horizon_table(model, panel, t)
    p = np.asarray(model.probabilities(table), dtype=float)
    if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ContractError("model returned invalid probabilities")
    return PredictionSet(tr.t, table.sender, table.receiver, table.side, p,
                         table.response.astype(int) if observed else None)


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("scores and labels must be 1-d and of equal length")
    if not np.all(np.isin(y, (0, 1))):
        raise ContractError("labels must be 0/1")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Exact area under the ROC curve, ties counted one half (Mann-Whitney)."""
    s, y = _check_binary(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC AUC needs both classes")
    r = rankdata(s)  # average ranks resolve ties
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall step curve.

    Thresholds run over the distinct scores from high to low (tied scores
    enter together); each recall increment is weighted by the precision at
    that threshold.
    """
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ContractError("PR AUC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]  # end of each tie group
    tp = np.cumsum(y)[last].astype(float)
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


SIDES = ("formation", "persistence", "combined")


def _score(pred: PredictionSet, period: int, diagnostics: list) -> list[dict]:
    rows = []
    for side in SIDES:
        p, y = pred.select(side)
        row = {"period": period, "side": side, "n": int(p.size), "n_pos": int(y.sum()) if y is not None else 0,
               "pr_auc": np.nan, "roc_auc": np.nan}
        if y is None or p.size == 0:
            diagnostics.append(f"{period} {side}: nothing to score")
        elif y.min() == y.max():
            diagnostics.append(f"{period} {side}: single class, AUC undefined")
            if y.max() == 1:
                row["pr_auc"] = pr_auc(p, y)
        else:
            row["pr_auc"] = pr_auc(p, y)
            row["roc_auc"] = roc_auc(p, y)
        rows.append(row)
    return rows


def _train_at(panel, spec, t, lambdas, window, diagnostics):
    """Fit on the ``window`` steps ending at ``t``; None if none is usable."""
    k = panel.periods.index(t)
    ends = panel.periods[max(1, k - window + 1):k + 1]
    trs = []
    for e in ends:
        try:
            trs.append(build_transition(panel, e))
        except ContractError as exc:
            diagnostics.append(f"{t}: {exc}")
    if not trs:
        return None
    model = fit_model(panel, spec, trs=trs, lambdas=lambdas)
    diagnostics += [f"{t}: {d}" for d in model.diagnostics]
    return model


def _evaluate_one(args):
    panel, spec, t, lambdas, window = args
    diagnostics = []
    model = _train_at(panel, spec, t, lambdas, window, diagnostics)
    if model is None:
        return [], diagnostics
    pred = predict_transition(model, panel, t)
    return _score(pred, pred.horizon, diagnostics), diagnostics


@dataclass
class EvaluationResult:
    table: pd.DataFrame
    diagnostics: list = field(default_factory=list)


def rolling_evaluation(panel: NetworkPanel, spec: ModelSpec, start: Optional[int] = None,
                       end: Optional[int] = None, *, lambdas="select", window: int = 1,
                       jobs: int = 1) -> EvaluationResult:
    """Fit on the step ending at each ``t`` in ``[start, end]`` and score the next step.

    ``window`` > 1 trains on that many consecutive steps ending at ``t``.
    Returns one row per (horizon period, side) with PR and ROC AUC.
    """
    ps = panel.periods
    start = ps[1] if start is None else start
    end = ps[-2] if end is None else end
    if len(ps) < 3:
        raise ContractError("insufficient horizon: need at least 3 periods")
    if start not in ps or end not in ps or ps.index(start) < 1 or ps.index(end) + 1 >= len(ps):
        raise ContractError("insufficient horizon: start/end outside fit-and-score range")
    if end < start:
        raise ContractError("insufficient horizon: end before start")
    todo = [(panel, spec, t, lambdas, window) for t in ps[ps.index(start):ps.index(end) + 1]]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_evaluate_one, todo))
    else:
        results = [_evaluate_one(a) for a in todo]
    rows = [r for res, _ in results for r in res]
    diag = [d for _, ds in results for d in ds]
    return EvaluationResult(pd.DataFrame(rows, columns=["period", "side", "n", "n_pos", "pr_auc", "roc_auc"]), diag)


# ------------------------------------------------------------------ simulation

def replicate_generator(seed: int, period: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one (seed, period, replicate) triple."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(period) & 0xFFFFFFFF, int(replicate)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True)
class SimulationResult:
    """Replicated networks for one horizon over a fixed actor set."""

    period: int
    actors: tuple
    adjacency: np.ndarray  # n_sims x n x n, bool

    def __len__(self):
        return self.adjacency.shape[0]

    def networks(self) -> list[frozenset]:
        out = []
        for Y in self.adjacency:
            i, j = np.nonzero(Y)
            out.append(frozenset((self.actors[a], self.actors[b]) for a, b in zip(i, j)))
        return out


def simulate_from_probabilities(lagged: np.ndarray, prob: np.ndarray, n_sims: int, seed: int,
                                period: int) -> np.ndarray:
    """Draw formation and persistence independently and rebuild each network.

    ``prob[i, j]`` is the formation probability where ``lagged`` is 0 and the
    persistence probability where it is 1. Dyad ``k`` of replicate ``r``
    uses the ``k``-th uniform of stream (seed, period, r).
    """
    lagged = np.asarray(lagged, dtype=bool)
    n = lagged.shape[0]
    off = ~np.eye(n, dtype=bool)
    I, J = np.nonzero(off)
    p = prob[I, J]
    was = lagged[I, J]
    out = np.zeros((n_sims, n, n), dtype=bool)
    for r in range(n_sims):
        u = replicate_generator(seed, period, r).random(I.size)
        draw = u < p
        plus = was | (draw & ~was)     # formation network: lagged edges plus new ones
        minus = was & draw             # persistence network
        new = minus | (plus & ~was)
        out[r, I, J] = new
    return out


def simulate_networks(model, panel: NetworkPanel, t: int, n_sims: int = 1000, seed: int = 0) -> SimulationResult:
    """Simulate the network of the period after ``t`` from a fitted model."""
    if n_sims < 1:
        raise ContractError("n_sims must be positive")
    tr, _, table = _horizon_table(model, panel, t)
    p = np.asarray(model.probabilities(table), dtype=float)
    prob = np.zeros((tr.n, tr.n))
    pos = {a: k for k, a in enumerate(tr.actors)}
    prob[[pos[a] for a in table.sender], [pos[b] for b in table.receiver]] = p
    return SimulationResult(tr.t, tr.actors, simulate_from_probabilities(tr.lagged, prob, n_sims, seed, tr.t))


def _simulate_one(args):
    model, panel, t, n_sims, seed = args
    return simulate_networks(model, panel, t, n_sims, seed)


def simulate_panel(model, panel: NetworkPanel, periods: Sequence[int], n_sims=1000, seed=0,
                   jobs: int = 1) -> dict[int, SimulationResult]:
    todo = [(model, panel, t, n_sims, seed) for t in periods]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            res = list(ex.map(_simulate_one, todo))
    else:
        res = [_simulate_one(a) for a in todo]
    return {r.period: r for r in res}


def _rolling_sim_one(args):
    panel, spec, t, lambdas, window, n_sims, seed = args
    diagnostics = []
    model = _train_at(panel, spec, t, lambdas, window, diagnostics)
    if model is None:
        return None, diagnostics
    return simulate_networks(model, panel, t, n_sims, seed), diagnostics


def rolling_simulation(panel: NetworkPanel, spec: ModelSpec, start: Optional[int] = None,
                       end: Optional[int] = None, *, n_sims: int = 1000, seed: int = 0, lambdas="select",
                       window: int = 1, jobs: int = 1) -> tuple[dict, list]:
    """Fit on the step ending at each ``t`` and simulate the following period.

    Returns ``({horizon: SimulationResult}, diagnostics)``.
    """
    ps = panel.periods
    if len(ps) < 3:
        raise ContractError("insufficient horizon: need at least 3 periods")
    start = ps[1] if start is None else start
    end = ps[-2] if end is None else end
    if start not in ps or end not in ps or ps.index(start) < 1 or ps.index(end) + 1 >= len(ps) or end < start:
        raise ContractError("insufficient horizon: start/end outside fit-and-simulate range")
    todo = [(panel, spec, t, lambdas, window, n_sims, seed) for t in ps[ps.index(start):ps.index(end) + 1]]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_rolling_sim_one, todo))
    else:
        results = [_rolling_sim_one(a) for a in todo]
    sims = {r.period: r for r, _ in results if r is not None}
    return sims, [d for _, ds in results for d in ds]


# ------------------------------------------------------------------------- GOF

@dataclass
class GofReport:
    table: pd.DataFrame  # period, statistic, observed, min, q25, median, q75, max, observed_quantile
    n_replicates: dict

    def statistic(self, name: str) -> pd.DataFrame:
        return self.table[self.table["statistic"] == name].reset_index(drop=True)


def _as_arrays(sim, actors_hint=None):
    if isinstance(sim, SimulationResult):
        return sim.actors, sim.adjacency
    nets = list(sim)
    actors = tuple(sorted(actors_hint or {a for e in nets for x in e for a in x}))
    return actors, np.array([adjacency(y, actors) for y in nets], dtype=bool).reshape(len(nets), len(actors),
                                                                                     len(actors))


def gof_compare(simulated: Mapping, observed: NetworkPanel) -> GofReport:
    """Compare summary statistics of simulated and observed networks.

    ``simulated`` maps a period to a :class:`SimulationResult` (or a list of
    edge sets). The observed network is restricted to the simulated actor
    set so both sides count the same nodes.
    """
    rows = []
    counts = {}
    for period in sorted(simulated):
        if period not in observed.periods:
            raise ContractError(f"period {period} not observed")
        sim = simulated[period]
        hint = None if isinstance(sim, SimulationResult) else observed.actors[period]
        actors, arrays = _as_arrays(sim, hint)
        obs = global_stats_matrix(adjacency(observed.edges[period], actors)).as_tuple()
        reps = np.array([global_stats_matrix(Y).as_tuple() for Y in arrays], dtype=float)
        counts[period] = int(arrays.shape[0])
        for k, name in enumerate(GOF_FIELDS):
            v = reps[:, k]
            below, equal = np.sum(v < obs[k]), np.sum(v == obs[k])
            q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0]) if v.size else [np.nan] * 5
            rows.append({"period": period, "statistic": name, "observed": float(obs[k]),
                         "min": q[0], "q25": q[1], "median": q[2], "q75": q[3], "max": q[4],
                         "observed_quantile": (below + 0.5 * equal) / v.size if v.size else np.nan})
    cols = ["period", "statistic", "observed", "min", "q25", "median", "q75", "max", "observed_quantile"]
    return GofReport(pd.DataFrame(rows, columns=cols), counts)
