"""1-WL colour refinement."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .graph import Graph, build_adjacency


@dataclass(frozen=True)
class ColoringState:
    colors: tuple[int, ...]
    round: int
    stable: bool

    @property
    def histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.colors).items()))


def _refine_once(adjs, colorings, palette: dict) -> list[tuple[int, ...]]:
    out = []
    for adj, colors in zip(adjs, colorings):
        new = []
        for i in range(adj.num_nodes):
            sig = (colors[i], tuple(sorted(colors[j] for j in adj.neighbors(i))))
            if sig not in palette:
                palette[sig] = len(palette)
            new.append(palette[sig])
        out.append(tuple(new))
    return out


def _num_classes(colorings) -> int:
    return len({c for col in colorings for c in col})


def _initial(graphs, use_features: bool) -> list[tuple[int, ...]]:
    if not use_features:
        return [tuple(0 for _ in range(g.num_nodes)) for g in graphs]
    palette: dict = {}
    out = []
    for g in graphs:
        cols = []
        for row in g.node_features:
            key = row.tobytes()
            palette.setdefault(key, len(palette))
            cols.append(palette[key])
        out.append(tuple(cols))
    return out


def _joint_refine(graphs, max_rounds: int | None, use_features: bool):
    """Refine several graphs with one shared palette per round.

    Colours are relabelled by first appearance each round, so equal colours
    across graphs mean equal refinement histories. Refinement is stable once
    a round adds no new colour class over the union.
    """
    adjs = [build_adjacency(g) for g in graphs]
    colorings = _initial(graphs, use_features)
    cap = max_rounds if max_rounds is not None else sum(g.num_nodes for g in graphs) + 1
    rounds = 0
    stable = False
    while rounds < cap:
        new = _refine_once(adjs, colorings, {})
        rounds += 1
        if _num_classes(new) == _num_classes(colorings):
            colorings = new
            stable = True
            break
        colorings = new
    return colorings, rounds, stable


def wl_refine(g: Graph, max_rounds: int | None = None, use_features: bool = False) -> ColoringState:
    """Refine until the partition stops splitting (at most ``num_nodes`` rounds
    on its own) or ``max_rounds`` is reached. Initial colours are uniform
    unless ``use_features`` is set."""
    cols, rounds, stable = _joint_refine([g], max_rounds, use_features)
    return ColoringState(cols[0], rounds, stable)


def wl_equivalent(g1: Graph, g2: Graph, use_features: bool = False) -> bool:
    """True iff the stable colour histograms of the two graphs coincide."""
    if g1.num_nodes != g2.num_nodes:
        return False
    cols, _, _ = _joint_refine([g1, g2], None, use_features)
    return Counter(cols[0]) == Counter(cols[1])


def wl_report(g1: Graph, g2: Graph, use_features: bool = False) -> dict:
    cols, rounds, stable = _joint_refine([g1, g2], None, use_features)
    h1, h2 = Counter(cols[0]), Counter(cols[1])
    return {
        "rounds": rounds,
        "stable": stable,
        "histogram_left": dict(sorted(h1.items())),
        "histogram_right": dict(sorted(h2.items())),
        "equivalent": g1.num_nodes == g2.num_nodes and h1 == h2,
    }
