"""Small constructors shared by the tests."""

import pandas as pd

from tvstergm.netpanel import ActorRegistry, CovariateTables, RawFlows, binarize


def make_panel(networks, actors=None, threshold=0.0):
    """Panel from ``{period: edge set}`` with trivial covariates for every actor."""
    periods = sorted(networks)
    actors = sorted(actors or {a for e in networks.values() for x in e for a in x})
    registry = ActorRegistry({a: (periods[0], periods[-1]) for a in actors})
    mono = [(p, a, 100.0, 1.0, 0) for p in periods for a in actors]
    dy = [(p, a, b, 0.0, 10.0) for p in periods for i, a in enumerate(actors) for b in actors[i + 1:]]
    cov = CovariateTables(
        pd.DataFrame(mono, columns=["period", "actor", "gdp", "milex", "polity"]),
        pd.DataFrame(dy, columns=["period", "actor_i", "actor_j", "alliance", "distance_km"]))
    flows = RawFlows.from_records([(p, i, j, 1.0) for p in periods for i, j in networks[p]])
    return binarize(flows, threshold, registry, cov, periods=periods)
