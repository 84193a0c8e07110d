"""One-step transitions: common actors, formation and persistence dyads."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError
from .netpanel import NetworkPanel

logger = logging.getLogger(__name__)

MIN_COMMON_ACTORS = 3


def _lag_aliases(panel: NetworkPanel, t: int) -> dict[str, str]:
    """Successor -> predecessor for actors entering at ``t`` whose predecessor left."""
    if not panel.use_predecessors:
        return {}
    prev = panel.previous(t)
    now, before = panel.actors[t], panel.actors[prev]
    out = {}
    for s, p in panel.registry.predecessors.items():
        if s in now and s not in before and p in before and p not in now:
            out[s] = p
    return out


def common_actors(panel: NetworkPanel, t: int) -> frozenset:
    """Actors observed in both ``t`` and the preceding period."""
    prev = panel.previous(t)
    B = panel.actors[t] & panel.actors[prev]
    return B | frozenset(_lag_aliases(panel, t))


@dataclass(frozen=True)
class TransitionData:
    """Step ``prev -> t`` restricted to the common actor set.

    ``actors`` is sorted; ``lagged`` and ``current`` are boolean adjacency
    matrices over it. ``lag_source`` names the actor whose period-``prev``
    row is used (differs from ``actors`` only under predecessor mapping).
    """

    t: int
    prev: int
    actors: tuple[str, ...]
    lag_source: tuple[str, ...]
    lagged: np.ndarray
    current: np.ndarray

    @property
    def n(self) -> int:
        return len(self.actors)

    @cached_property
    def _offdiag(self) -> np.ndarray:
        return ~np.eye(self.n, dtype=bool)

    @cached_property
    def formation_mask(self) -> np.ndarray:
        return self._offdiag & ~self.lagged

    @cached_property
    def persistence_mask(self) -> np.ndarray:
        return self._offdiag & self.lagged

    def _rows(self, mask):
        i, j = np.nonzero(mask)
        return [(self.actors[a], self.actors[b], int(self.current[a, b])) for a, b in zip(i, j)]

    @property
    def formation_rows(self) -> list[tuple[str, str, int]]:
        return self._rows(self.formation_mask)

    @property
    def persistence_rows(self) -> list[tuple[str, str, int]]:
        return self._rows(self.persistence_mask)

    def lagged_network(self) -> frozenset:
        i, j = np.nonzero(self.lagged)
        return frozenset((self.actors[a], self.actors[b]) for a, b in zip(i, j))

    def current_network(self) -> frozenset:
        i, j = np.nonzero(self.current)
        return frozenset((self.actors[a], self.actors[b]) for a, b in zip(i, j))


def adjacency(edges, actors) -> np.ndarray:
    pos = {a: k for k, a in enumerate(actors)}
    Y = np.zeros((len(actors), len(actors)), dtype=bool)
    for i, j in edges:
        if i in pos and j in pos:
            Y[pos[i], pos[j]] = True
    return Y


def build_transition(panel: NetworkPanel, t: int, *, min_actors: int = MIN_COMMON_ACTORS) -> TransitionData:
    prev = panel.previous(t)
    aliases = _lag_aliases(panel, t)
    B = sorted(common_actors(panel, t))
    if len(B) < min_actors:
        raise ContractError(f"step {prev}->{t}: {len(B)} common actors, need at least {min_actors}")
    entrants = len(panel.actors[t] - set(B))
    if entrants:
        logger.debug("step %s->%s: %d entrant actors excluded", prev, t, entrants)
    src = tuple(aliases.get(a, a) for a in B)
    lagged = adjacency(panel.edges[prev], src)
    current = adjacency(panel.edges[t], B)
    return TransitionData(t, prev, tuple(B), src, lagged, current)


def transitions(panel: NetworkPanel, periods=None) -> list[TransitionData]:
    """All buildable steps; periods with too few common actors are skipped."""
    out = []
    for t in (panel.periods[1:] if periods is None else periods):
        try:
            out.append(build_transition(panel, t))
        except ContractError as exc:
            logger.info("skipping %s: %s", t, exc)
    return out


def formation_network(y_prev: frozenset, y_now: frozenset) -> frozenset:
    return frozenset(y_prev) | frozenset(y_now)


def persistence_network(y_prev: frozenset, y_now: frozenset) -> frozenset:
    return frozenset(y_prev) & frozenset(y_now)


def reconstruct(y_prev, y_plus, y_minus) -> frozenset:
    """Network at ``t`` from the lagged, formation and persistence networks."""
    y_prev, y_plus, y_minus = frozenset(y_prev), frozenset(y_plus), frozenset(y_minus)
    if not y_minus <= y_prev:
        raise ContractError("persistence network must be contained in the lagged network")
    if not y_prev <= y_plus:
        raise ContractError("lagged network must be contained in the formation network")
    return y_minus | (y_plus - y_prev)


def reconstruct_alt(y_prev, y_plus, y_minus) -> frozenset:
    """The equivalent set-difference form ``Y+ minus (Y_prev minus Y-)``."""
    y_prev, y_plus, y_minus = frozenset(y_prev), frozenset(y_plus), frozenset(y_minus)
    if not (y_minus <= y_prev <= y_plus):
        raise ContractError("containment preconditions violated")
    return y_plus - (y_prev - y_minus)
