"""Synthetic panels with known coefficient curves and actor random effects.

The generator follows the separable model: given the lagged network, each
empty dyad forms and each existing edge persists independently with logistic
probabilities built from the lagged statistics, the lagged covariates, the
true coefficient curves and the sender/receiver random curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from .netpanel import (ActorRegistry, CovariateTables, RawFlows, binarize, prepare_covariates)
from .netstats import covariate_matrices, dyad_matrices
from .transition import TransitionData, adjacency

# lower TIV quantiles pooled over all years: (probability, value)
TIV_QUANTILES = ((0.0, 0.020), (0.0475, 0.700), (0.095, 1.332), (0.1425, 2.200), (0.19, 3.0))

SIDES = ("formation", "persistence")


def tiv_values(rng, size) -> np.ndarray:
    """Flow values whose lower tail matches the tabulated TIV quantiles.

    Piecewise-linear quantile function up to the 19% point (value 3), then a
    log-exponential tail above 3.
    """
    u = rng.random(size)
    qp, qv = np.array(TIV_QUANTILES).T
    low = np.interp(u, qp, qv)
    tail = 3.0 * np.exp(rng.exponential(1.5, size) * (u - 0.19) / 0.81 * 3.0)
    return np.where(u <= 0.19, low, tail)


def default_truth_curves(tau):
    """True coefficient curves on normalized time ``tau`` in [0, 1]."""
    one = np.ones_like(tau)
    return {
        "formation": {
            "intercept": -2.6 * one,
            "alliance": 1.0 * one,                      # constant
            "recip": 0.5 + 1.5 * tau,                   # linear
            "distance": np.sin(2 * np.pi * tau),        # sinusoidal
        },
        "persistence": {
            "intercept": 0.6 * one,
            "recip": 0.8 * one,                         # constant
            "alliance": -0.5 + 1.0 * tau,               # linear
            "distance": 0.8 * np.cos(2 * np.pi * tau),  # sinusoidal
        },
    }


RE_SCALES = {  # (level sd, trend sd) per role
    "sender": (0.8, 0.5),
    "receiver": (0.6, 0.4),
}


@dataclass
class SynthTruth:
    periods: np.ndarray
    curves: dict                 # side -> term -> array over periods
    random_scores: dict          # side -> role -> {actor: (level, trend)}
    fit_terms: tuple = ("alliance", "recip", "distance")

    def tau(self, t):
        p = self.periods
        return (np.asarray(t, dtype=float) - p[0]) / (p[-1] - p[0])

    def curve(self, side, term, t):
        return np.interp(np.asarray(t, dtype=float), self.periods, self.curves[side][term])

    def random_curve(self, side, role, actor, t):
        tau = np.clip(self.tau(t), 0.0, 1.0)
        a, b = self.random_scores[side][role].get(actor, (0.0, 0.0))
        return a + b * (2 * tau - 1)

    def logits(self, side, t, values: dict, senders, receivers):
        eta = np.full(len(senders), float(self.curve(side, "intercept", t)))
        for term, curve in self.curves[side].items():
            if term != "intercept":
                eta = eta + float(np.interp(t, self.periods, curve)) * values[term]
        for role, ids in (("sender", senders), ("receiver", receivers)):
            scores = self.random_scores[side][role]
            a = np.array([scores.get(x, (0.0, 0.0))[0] for x in ids])
            b = np.array([scores.get(x, (0.0, 0.0))[1] for x in ids])
            tau = float(np.clip(self.tau(t), 0.0, 1.0))
            eta = eta + a + b * (2 * tau - 1)
        return eta

    def probabilities(self, table) -> np.ndarray:
        """Same interface as ``FittedModel.probabilities``."""
        p = np.empty(len(table))
        for side in SIDES:
            m = np.flatnonzero(table.side == side)
            for t in np.unique(table.time[m]):
                rows = m[table.time[m] == t]
                vals = {k: v[rows] for k, v in table.values.items()}
                p[rows] = expit(self.logits(side, t, vals, table.sender[rows], table.receiver[rows]))
        return p

    def to_dict(self):
        return {"periods": self.periods.tolist(),
                "curves": {s: {k: v.tolist() for k, v in c.items()} for s, c in self.curves.items()},
                "random_scores": {s: {r: {a: list(v) for a, v in d.items()} for r, d in rr.items()}
                                  for s, rr in self.random_scores.items()},
                "fit_terms": list(self.fit_terms)}


@dataclass
class SynthFixture:
    flows: RawFlows
    covariates: CovariateTables
    registry: ActorRegistry
    truth: SynthTruth
    networks: dict = field(default_factory=dict)

    def panel(self, threshold=0.0):
        return binarize(self.flows, threshold, self.registry, self.covariates)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f"{k}.csv" for k in ("edges", "monadic", "dyadic", "registry")}
        r = self.flows.records
        r.to_csv(paths["edges"], index=False, float_format="%.6g")
        self.covariates.monadic.to_csv(paths["monadic"], index=False, float_format="%.10g")
        self.covariates.dyadic.to_csv(paths["dyadic"], index=False, float_format="%.10g")
        reg = pd.DataFrame([(a, f, l, self.registry.predecessors.get(a, ""))
                            for a, (f, l) in sorted(self.registry.spans.items())],
                           columns=["actor", "first", "last", "predecessor"])
        reg.to_csv(paths["registry"], index=False)
        return {k: str(v) for k, v in paths.items()}


def generate_synthetic(n_actors: int = 30, n_periods: int = 40, start: int = 1971, seed: int = 0,
                       missing_rate: float = 0.02) -> SynthFixture:
    """Standard fixture: ``n_actors`` actors over ``n_periods`` years.

    Two actors enter late and one leaves early. Covariates carry a few gaps
    to exercise imputation; synthetic distances are log-normal with log-scale
    mean 0 so the distance coefficient acts on a unit-variance regressor.
    """
    rng = np.random.default_rng(seed)
    periods = np.arange(start, start + n_periods)
    actors = [f"A{k:02d}" for k in range(n_actors)]
    spans = {a: (int(periods[0]), int(periods[-1])) for a in actors}
    if n_actors >= 6 and n_periods >= 12:
        spans[actors[-1]] = (int(periods[0] + 8), int(periods[-1]))
        spans[actors[-2]] = (int(periods[0] + 5), int(periods[-1]))
        spans[actors[0]] = (int(periods[0]), int(periods[-1] - 6))
    registry = ActorRegistry(spans)

    # monadic covariates
    rows = []
    for a in actors:
        g0, m0, p0 = rng.normal(10, 1), rng.normal(7, 1), int(rng.integers(-10, 11))
        g_tr = rng.normal(0.02, 0.01)
        pol = p0
        for k, p in enumerate(periods):
            if rng.random() < 0.05:
                pol = int(np.clip(pol + rng.integers(-6, 7), -10, 10))
            gdp = float(np.exp(g0 + g_tr * k + rng.normal(0, 0.05)))
            milex = float(max(np.exp(m0 + rng.normal(0, 0.1)) - 50.0, 0.0))
            gdp = np.nan if rng.random() < missing_rate else gdp
            milex = np.nan if rng.random() < missing_rate else milex
            rows.append((int(p), a, gdp, milex, pol))
    monadic = pd.DataFrame(rows, columns=["period", "actor", "gdp", "milex", "polity"])

    # dyadic covariates
    pairs = [(actors[i], actors[j]) for i in range(n_actors) for j in range(i + 1, n_actors)]
    dist = np.exp(rng.normal(0, 1, len(pairs)))
    ally = rng.random(len(pairs)) < 0.3
    drows = []
    for p in periods:
        flip = rng.random(len(pairs)) < 0.02
        ally = ally ^ flip
        for (i, j), d, al in zip(pairs, dist, ally):
            drows.append((int(p), i, j, float(al), float(d)))
    dyadic = pd.DataFrame(drows, columns=["period", "actor_i", "actor_j", "alliance", "distance_km"])
    covariates = CovariateTables(monadic, dyadic)

    curves = default_truth_curves((periods - periods[0]) / (periods[-1] - periods[0]))
    scores = {s: {r: {a: (float(rng.normal(0, sd[0])), float(rng.normal(0, sd[1]))) for a in actors}
                  for r, sd in RE_SCALES.items()} for s in SIDES}
    truth = SynthTruth(periods.astype(float), curves, scores)

    # the generator needs complete covariates; impute through the normal path
    empty = RawFlows.from_records([])
    prepared = prepare_covariates(binarize(empty, 0.0, registry, covariates, periods=periods).covariates)

    alive = {int(p): sorted(a for a in actors if registry.exists(a, int(p))) for p in periods}
    nets = {}
    first = alive[int(periods[0])]
    Y0 = rng.random((len(first), len(first))) < 0.15
    np.fill_diagonal(Y0, False)
    nets[int(periods[0])] = {(first[i], first[j]) for i, j in zip(*np.nonzero(Y0))}
    for prev, t in zip(periods[:-1], periods[1:]):
        prev, t = int(prev), int(t)
        B = sorted(set(alive[t]) & set(alive[prev]))
        lag = adjacency(nets[prev], B)
        tr = TransitionData(t, prev, tuple(B), tuple(B), lag, np.zeros_like(lag))
        vals = dict(dyad_matrices(lag))
        vals.update(covariate_matrices(tr, prepared))
        S = np.repeat(np.array(B, dtype=object)[:, None], len(B), axis=1)
        R = S.T
        new = set()
        for side, mask in (("formation", tr.formation_mask), ("persistence", tr.persistence_mask)):
            if not mask.any():
                continue
            eta = truth.logits(side, t, {k: v[mask] for k, v in vals.items()}, S[mask], R[mask])
            draw = rng.random(eta.size) < expit(eta)
            new |= {(s, r) for s, r in zip(S[mask][draw], R[mask][draw])}
        entrants = sorted(set(alive[t]) - set(B))
        for e in entrants:
            for o in alive[t]:
                if o != e:
                    if rng.random() < 0.05:
                        new.add((e, o))
                    if rng.random() < 0.05:
                        new.add((o, e))
        nets[t] = new

    flow_rows = []
    for p in periods:
        edges = sorted(nets[int(p)])
        vals = tiv_values(rng, len(edges))
        flow_rows += [(int(p), i, j, float(v)) for (i, j), v in zip(edges, vals)]
    flows = RawFlows.from_records(flow_rows)
    return SynthFixture(flows, covariates, registry, truth, {p: frozenset(e) for p, e in nets.items()})
