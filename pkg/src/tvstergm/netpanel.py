"""Ingestion of valued trade flows, covariate tables and actor registries.

Everything here produces immutable objects: :class:`RawFlows`,
:class:`ActorRegistry`, :class:`CovariateTables` and finally the binarized
:class:`NetworkPanel` consumed by the rest of the package.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import ContractError, InputError

logger = logging.getLogger(__name__)

EDGE_COLUMNS = ("period", "sender", "receiver", "value")
MONADIC_COLUMNS = ("period", "actor", "gdp", "milex", "polity")
DYADIC_COLUMNS = ("period", "actor_i", "actor_j", "alliance", "distance_km")
REGISTRY_COLUMNS = ("actor", "first", "last", "predecessor")

Edge = tuple[str, str]
Network = frozenset  # frozenset[Edge]


def _read_csv(path, columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise InputError(f"{path}: empty file, header expected") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: parse error: {exc}") from None
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    frame = frame[list(columns)].copy()
    for c in columns:
        frame[c] = frame[c].str.strip()
    return frame


def _numeric(frame, column, path, *, optional=False, integer=False) -> pd.Series:
    raw = frame[column]
    blank = raw == ""
    values = pd.to_numeric(raw.where(~blank), errors="coerce")
    bad = values.isna() & ~blank if optional else values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + 2  # header is line 1
        raise InputError(f"{path}: row {row}: non-numeric {column} {raw.iloc[row - 2]!r}")
    if integer:
        nonint = values.notna() & (values != np.round(values))
        if nonint.any():
            row = int(np.flatnonzero(nonint.to_numpy())[0]) + 2
            raise InputError(f"{path}: row {row}: {column} must be an integer")
    return values


@dataclass(frozen=True)
class RawFlows:
    """Valued directed flows, one row per ``(period, sender, receiver)``."""

    records: pd.DataFrame

    def __post_init__(self):
        r = self.records
        if len(r) and (r["sender"] == r["receiver"]).any():
            raise InputError("self-loop in flows")
        if len(r) and (r["value"] < 0).any():
            raise InputError("negative flow value")

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_records(cls, rows: Iterable[tuple[int, str, str, float]]) -> "RawFlows":
        frame = pd.DataFrame(list(rows), columns=list(EDGE_COLUMNS))
        return cls(_aggregate_flows(frame))

    @property
    def periods(self) -> list[int]:
        return sorted(int(p) for p in self.records["period"].unique())


def _aggregate_flows(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.astype({"period": "int64", "sender": str, "receiver": str, "value": "float64"})
    out = frame.groupby(["period", "sender", "receiver"], as_index=False, sort=True)["value"].sum()
    return out.reset_index(drop=True)


def load_edge_list(path, schema: Optional[Mapping[str, str]] = None) -> RawFlows:
    """Read a valued edge list.

    ``schema`` maps the canonical names ``period, sender, receiver, value`` to
    the column names used in the file. Duplicate ``(period, sender,
    receiver)`` rows are summed.
    """
    schema = {c: c for c in EDGE_COLUMNS} | dict(schema or {})
    frame = _read_csv(path, [schema[c] for c in EDGE_COLUMNS])
    frame.columns = list(EDGE_COLUMNS)
    period = _numeric(frame, "period", path, integer=True)
    value = _numeric(frame, "value", path)
    loops = (frame["sender"] == frame["receiver"]).to_numpy()
    if loops.any():
        row = int(np.flatnonzero(loops)[0]) + 2
        raise InputError(f"{path}: row {row}: self-loop {frame['sender'].iloc[row - 2]}")
    if (value < 0).any():
        row = int(np.flatnonzero((value < 0).to_numpy())[0]) + 2
        raise InputError(f"{path}: row {row}: negative value")
    frame["period"] = period.astype("int64")
    frame["value"] = value.astype(float)
    return RawFlows(_aggregate_flows(frame))


@dataclass(frozen=True)
class ActorRegistry:
    spans: Mapping[str, tuple[int, int]]
    predecessors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for actor, (first, last) in self.spans.items():
            if first > last:
                raise InputError(f"registry: actor {actor} has first {first} > last {last}")
        for start in self.predecessors:
            seen = {start}
            cur = start
            while cur in self.predecessors:
                cur = self.predecessors[cur]
                if cur in seen:
                    raise InputError(f"registry: predecessor cycle through {start}")
                seen.add(cur)

    def exists(self, actor: str, period: int, width: int = 1) -> bool:
        """True if the actor's span overlaps ``[period, period + width - 1]``."""
        span = self.spans.get(actor)
        if span is None:
            return False
        return span[0] <= period + width - 1 and span[1] >= period

    @classmethod
    def from_covariates(cls, covariates: "CovariateTables") -> "ActorRegistry":
        g = covariates.monadic.groupby("actor")["period"]
        return cls({a: (int(lo), int(hi)) for a, lo, hi in zip(g.min().index, g.min(), g.max())})


def load_registry(path) -> ActorRegistry:
    frame = _read_csv(path, REGISTRY_COLUMNS)
    first = _numeric(frame, "first", path, integer=True).astype(int)
    last = _numeric(frame, "last", path, integer=True).astype(int)
    if frame["actor"].duplicated().any():
        raise InputError(f"{path}: duplicate actor {frame['actor'][frame['actor'].duplicated()].iloc[0]}")
    spans = {a: (int(f), int(l)) for a, f, l in zip(frame["actor"], first, last)}
    preds = {a: p for a, p in zip(frame["actor"], frame["predecessor"]) if p}
    return ActorRegistry(spans, preds)


@dataclass(frozen=True)
class CovariateTables:
    """Monadic and dyadic covariates.

    ``monadic`` has columns ``period, actor, gdp, milex, polity``. ``dyadic``
    has ``period, actor_i, actor_j, alliance, distance_km``; dyads are treated
    as unordered. Once :func:`prepare_covariates` has run, ``transformed`` is
    set and gdp, milex and distance hold their log-scale values.
    """

    monadic: pd.DataFrame
    dyadic: pd.DataFrame
    transformed: bool = False

    @cached_property
    def _monadic_index(self) -> dict:
        m = self.monadic
        vals = m[["gdp", "milex", "polity"]].to_numpy(dtype=float)
        return {(int(p), a): vals[k] for k, (p, a) in enumerate(zip(m["period"], m["actor"]))}

    @cached_property
    def _alliances(self) -> dict[int, set]:
        d = self.dyadic
        out: dict[int, set] = {}
        hit = d["alliance"].to_numpy(dtype=float) == 1
        for p, i, j in zip(d["period"][hit], d["actor_i"][hit], d["actor_j"][hit]):
            out.setdefault(int(p), set()).add(frozenset((i, j)))
        return out

    @cached_property
    def _distances(self) -> dict:
        # constant per unordered dyad: the earliest observed value wins
        d = self.dyadic.sort_values("period", kind="stable")
        out = {}
        for i, j, v in zip(d["actor_i"], d["actor_j"], d["distance_km"].to_numpy(dtype=float)):
            key = frozenset((i, j))
            if key not in out and np.isfinite(v):
                out[key] = float(v)
        return out

    def monadic_arrays(self, period: int, actors: list[str]) -> dict[str, np.ndarray]:
        idx = self._monadic_index
        rows = []
        for a in actors:
            v = idx.get((int(period), a))
            if v is None or not np.all(np.isfinite(v)):
                raise InputError(f"missing monadic covariates for actor {a} in {period}")
            rows.append(v)
        arr = np.array(rows, dtype=float).reshape(len(actors), 3)
        return {"gdp": arr[:, 0], "milex": arr[:, 1], "polity": arr[:, 2]}

    def dyadic_arrays(self, period: int, actors: list[str]) -> dict[str, np.ndarray]:
        n = len(actors)
        alliance = np.zeros((n, n))
        distance = np.zeros((n, n))
        allied = self._alliances.get(int(period), set())
        dist = self._distances
        for a in range(n):
            for b in range(a + 1, n):
                key = frozenset((actors[a], actors[b]))
                if key in allied:
                    alliance[a, b] = alliance[b, a] = 1.0
                v = dist.get(key)
                if v is None:
                    raise InputError(f"missing distance for dyad {actors[a]}-{actors[b]}")
                distance[a, b] = distance[b, a] = v
        return {"alliance": alliance, "distance": distance}


def _empty_dyadic() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=float if c in ("alliance", "distance_km", "period") else str)
                         for c in DYADIC_COLUMNS})


def load_covariates(monadic_path, dyadic_path=None) -> CovariateTables:
    m = _read_csv(monadic_path, MONADIC_COLUMNS)
    m["period"] = _numeric(m, "period", monadic_path, integer=True).astype("int64")
    for c in ("gdp", "milex"):
        m[c] = _numeric(m, c, monadic_path, optional=True)
    m["polity"] = _numeric(m, "polity", monadic_path, optional=True)
    bad = m["polity"].notna() & ((m["polity"] < -10) | (m["polity"] > 10))
    if bad.any():
        raise InputError(f"{monadic_path}: row {int(np.flatnonzero(bad.to_numpy())[0]) + 2}: polity outside [-10, 10]")
    if dyadic_path is None:
        d = _empty_dyadic()
    else:
        d = _read_csv(dyadic_path, DYADIC_COLUMNS)
        d["period"] = _numeric(d, "period", dyadic_path, integer=True).astype("int64")
        d["alliance"] = _numeric(d, "alliance", dyadic_path, optional=True).fillna(0.0)
        d["distance_km"] = _numeric(d, "distance_km", dyadic_path, optional=True)
        if (~d["alliance"].isin([0.0, 1.0])).any():
            raise InputError(f"{dyadic_path}: alliance must be 0 or 1")
    return CovariateTables(m.reset_index(drop=True), d.reset_index(drop=True))


def impute_series(series: Mapping[int, Optional[float]]) -> dict[int, float]:
    """Fill the gaps of one actor's covariate series.

    Leading gaps take the first observed value, trailing gaps the last one,
    and interior gaps are linearly interpolated between the flanking
    observations (for a single missing year that is the mean of both
    neighbours).
    """
    periods = sorted(series)
    vals = np.array([np.nan if series[p] is None else float(series[p]) for p in periods])
    seen = np.isfinite(vals)
    if not seen.any():
        raise InputError("series has no observed value")
    x = np.array(periods, dtype=float)
    filled = np.interp(x, x[seen], vals[seen])
    filled[seen] = vals[seen]
    return {p: float(v) for p, v in zip(periods, filled)}


def aggregate_windows(flows: RawFlows, width: int, covariates: CovariateTables,
                      start: Optional[int] = None) -> tuple[RawFlows, CovariateTables]:
    """Merge ``width`` consecutive years into one period.

    Windows start at ``start`` (default: the first flow year) and are labelled
    by their first year; a trailing partial window is dropped. Flow values are
    summed, continuous covariates averaged, and alliance is 1 only when it
    held in every year of the window.
    """
    if int(width) != width or width < 1:
        raise ContractError(f"window width must be a positive integer, got {width}")
    if width == 1:
        return flows, covariates
    years = flows.periods or sorted(covariates.monadic["period"].unique())
    if not years:
        return flows, covariates
    start = int(years[0] if start is None else start)
    last_year = int(max(years[-1], covariates.monadic["period"].max() if len(covariates.monadic) else years[-1]))
    n_full = (last_year - start + 1) // width

    def label(p):
        k = (np.asarray(p, dtype=np.int64) - start) // width
        ok = (k >= 0) & (k < n_full)
        return start + k * width, ok

    r = flows.records.copy()
    r["period"], ok = label(r["period"])
    new_flows = RawFlows(_aggregate_flows(r[ok]))

    m = covariates.monadic.copy()
    m["period"], ok = label(m["period"])
    m = m[ok].groupby(["period", "actor"], as_index=False, sort=True)[["gdp", "milex", "polity"]].mean()

    d = covariates.dyadic.copy()
    if len(d):
        d["period"], ok = label(d["period"])
        d = d[ok]
        key = d.apply(lambda r: tuple(sorted((r["actor_i"], r["actor_j"]))), axis=1)
        d = d.assign(actor_i=[k[0] for k in key], actor_j=[k[1] for k in key])
        g = d.groupby(["period", "actor_i", "actor_j"], as_index=False, sort=True)
        d = g.agg(alliance=("alliance", "min"), n_years=("alliance", "size"), distance_km=("distance_km", "mean"))
        # years absent from the table count as "no alliance"
        d.loc[d["n_years"] < width, "alliance"] = 0.0
        d = d.drop(columns="n_years")
    return new_flows, CovariateTables(m.reset_index(drop=True), d.reset_index(drop=True), covariates.transformed)


def prepare_covariates(covariates: CovariateTables) -> CovariateTables:
    """Log-transform gdp and distance, ``log1p`` military expenditure."""
    if covariates.transformed:
        return covariates
    m = covariates.monadic.copy()
    bad = ~(m["gdp"] > 0)
    if bad.any():
        r = m[bad].iloc[0]
        raise InputError(f"nonpositive gdp for actor {r['actor']} in {r['period']}")
    if (m["milex"] < 0).any():
        r = m[m["milex"] < 0].iloc[0]
        raise InputError(f"negative milex for actor {r['actor']} in {r['period']}")
    m["gdp"] = np.log(m["gdp"].astype(float))
    m["milex"] = np.log1p(m["milex"].astype(float))
    d = covariates.dyadic.copy()
    dist = d["distance_km"]
    bad = dist.notna() & ~(dist > 0)
    if bad.any():
        r = d[bad].iloc[0]
        raise InputError(f"nonpositive distance for dyad {r['actor_i']}-{r['actor_j']}")
    d["distance_km"] = np.log(dist.astype(float))
    return CovariateTables(m, d, transformed=True)


def poldiff(polity_i, polity_j):
    return np.abs(np.asarray(polity_i, dtype=float) - np.asarray(polity_j, dtype=float))


@dataclass(frozen=True)
class NetworkPanel:
    """Binary directed networks over time-varying actor sets.

    ``edges[p]`` is a frozenset of ``(sender, receiver)`` pairs among
    ``actors[p]``. ``width`` is the number of years merged into each period;
    consecutive periods differ by exactly ``width``.
    """

    periods: tuple[int, ...]
    actors: Mapping[int, frozenset]
    edges: Mapping[int, frozenset]
    covariates: CovariateTables
    registry: ActorRegistry
    width: int = 1
    threshold: float = 0.0
    use_predecessors: bool = False
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ps = list(self.periods)
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ContractError("periods must be strictly increasing")
        if any(b - a != self.width for a, b in zip(ps, ps[1:])):
            raise ContractError("periods must be contiguous")
        for p in ps:
            A = self.actors[p]
            for i, j in self.edges[p]:
                if i == j or i not in A or j not in A:
                    raise ContractError(f"edge {i}->{j} in {p} outside actor set")

    def previous(self, t: int) -> int:
        k = self.periods.index(t) if t in self.periods else -1
        if k <= 0:
            raise ContractError(f"no period before {t} in panel")
        return self.periods[k - 1]

    @cached_property
    def prepared(self) -> CovariateTables:
        return prepare_covariates(self.covariates)

    def with_edges(self, edges: Mapping[int, frozenset]) -> "NetworkPanel":
        return NetworkPanel(self.periods, self.actors, dict(edges), self.covariates, self.registry,
                            self.width, self.threshold, self.use_predecessors, dict(self.provenance))


def _impute_monadic(cov: CovariateTables, registry: ActorRegistry, periods, width):
    """Complete monadic records for every existing actor; return (table, dropped)."""
    m = cov.monadic.set_index(["actor", "period"]).sort_index()
    rows, dropped = [], []
    for actor in sorted(registry.spans):
        alive = [p for p in periods if registry.exists(actor, p, width)]
        if not alive:
            continue
        filled = {}
        try:
            sub = m.loc[actor] if actor in m.index.get_level_values(0) else None
            for col in ("gdp", "milex", "polity"):
                series = {}
                for p in alive:
                    v = None
                    if sub is not None and p in sub.index:
                        x = sub.loc[p, col]
                        x = float(x.iloc[0]) if isinstance(x, pd.Series) else float(x)
                        v = None if np.isnan(x) else x
                    series[p] = v
                filled[col] = impute_series(series)
        except InputError:
            dropped.append(actor)
            continue
        for p in alive:
            rows.append((p, actor, filled["gdp"][p], filled["milex"][p], filled["polity"][p]))
    table = pd.DataFrame(rows, columns=list(MONADIC_COLUMNS))
    return table, dropped


def binarize(flows: RawFlows, threshold: float, registry: ActorRegistry,
             covariates: CovariateTables, *, width: int = 1, periods=None,
             use_predecessors: bool = False) -> NetworkPanel:
    """Turn valued flows into binary networks.

    An edge is present when the summed flow strictly exceeds ``threshold`` and
    both actors exist in the period. Monadic covariate series are imputed per
    actor; actors whose series are entirely missing are dropped. Dropped
    actors and filtered flows are counted in ``panel.provenance``.
    """
    if not threshold >= 0:
        raise ContractError(f"threshold must be nonnegative, got {threshold}")
    if periods is None:
        ps = flows.periods
        if not ps:
            raise InputError("no flows and no periods given")
        periods = list(range(ps[0], ps[-1] + 1, width))
    periods = tuple(int(p) for p in periods)
    monadic, dropped = _impute_monadic(covariates, registry, periods, width)
    imputed = CovariateTables(monadic, covariates.dyadic, covariates.transformed)
    have = set(zip(monadic["period"], monadic["actor"]))
    actors = {p: frozenset(a for a in registry.spans if (p, a) in have) for p in periods}

    counts = {"below_threshold": 0, "inactive_actor": 0, "outside_periods": 0}
    edges = {p: set() for p in periods}
    r = flows.records
    for p, i, j, v in zip(r["period"], r["sender"], r["receiver"], r["value"]):
        p = int(p)
        if p not in edges:
            counts["outside_periods"] += 1
        elif not v > threshold:
            counts["below_threshold"] += 1
        elif i not in actors[p] or j not in actors[p]:
            counts["inactive_actor"] += 1
        else:
            edges[p].add((i, j))
    if dropped:
        logger.info("dropped %d actors without covariate information: %s", len(dropped), dropped)
    prov = {"threshold": float(threshold), "width": int(width), "dropped_actors": dropped,
            "filtered_flows": counts, "n_flows": int(len(r))}
    return NetworkPanel(periods, actors, {p: frozenset(e) for p, e in edges.items()}, imputed,
                        registry, width, float(threshold), use_predecessors, prov)


def load_panel(edges, monadic, dyadic=None, registry=None, *, threshold=0.0, width=1,
               use_predecessors=False) -> NetworkPanel:
    """Convenience pipeline: read CSVs, aggregate windows, binarize."""
    flows = load_edge_list(edges)
    cov = load_covariates(monadic, dyadic)
    reg = load_registry(registry) if registry else ActorRegistry.from_covariates(cov)
    start = flows.periods[0] if len(flows) else None
    flows, cov = aggregate_windows(flows, width, cov, start=start)
    periods = None
    if width > 1 and len(flows):
        periods = list(range(flows.periods[0], flows.periods[-1] + 1, width))
    return binarize(flows, threshold, reg, cov, width=width, periods=periods,
                    use_predecessors=use_predecessors)
