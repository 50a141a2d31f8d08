"""Per-user navigation graphs: Markov transition weights, target detection,
node masses and probabilistic distances to targets."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from heapq import heappop, heappush

from .models import Session

ALPHA_BETA_FLOOR = 0.01


@dataclass
class NodeAttrs:
    target: int = 0
    mass: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    dwell_seconds: float = 0.0


@dataclass
class NavGraph:
    user_id: str
    nodes: dict[str, NodeAttrs] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    transition_counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def successors(self, u: str) -> list[tuple[str, float]]:
        return sorted((v, w) for (a, v), w in self.edges.items() if a == u)

    def targets(self) -> list[str]:
        return sorted(n for n, a in self.nodes.items() if a.target)

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "nodes": [
                {"id": n, "target": a.target, "mass": a.mass, "alpha": a.alpha, "beta": a.beta}
                for n, a in sorted(self.nodes.items())
            ],
            "edges": [
                {"from": u, "to": v, "w": w, "count": self.transition_counts.get((u, v), 0)}
                for (u, v), w in sorted(self.edges.items())
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NavGraph":
        g = cls(user_id=doc["user_id"])
        for n in doc["nodes"]:
            g.nodes[n["id"]] = NodeAttrs(
                target=n["target"], mass=n["mass"], alpha=n["alpha"], beta=n["beta"]
            )
        for e in doc["edges"]:
            g.edges[(e["from"], e["to"])] = e["w"]
            g.transition_counts[(e["from"], e["to"])] = e["count"]
        return g

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "NavGraph":
        return cls.from_json(json.loads(s))


@dataclass
class IntentDistances:
    source: str
    per_target: dict[str, float]


def build_graph(sessions: list[Session]) -> NavGraph:
    """Build the weighted navigation graph from one user's sessions.

    Consecutive identical reports collapse into dwell time (no self loops).
    The final hit of each session gets the user's median dwell as its own.
    """
    if not sessions:
        return NavGraph(user_id="")
    user_id = sessions[0].user_id
    if any(s.user_id != user_id for s in sessions):
        raise ValueError("sessions belong to different users")

    g = NavGraph(user_id=user_id)
    dwell: dict[str, float] = {}
    observed_dwells: list[float] = []
    last_nodes: list[str] = []  # final node of each session, dwell imputed later

    for sess in sessions:
        prev: str | None = None
        for i, hit in enumerate(sess.hits):
            node = hit.report_id
            if node not in g.nodes:
                g.nodes[node] = NodeAttrs()
            if i + 1 < len(sess.hits):
                d = sess.hits[i + 1].timestamp - hit.timestamp
                dwell[node] = dwell.get(node, 0.0) + d
                observed_dwells.append(d)
            if prev is not None and prev != node:
                key = (prev, node)
                g.transition_counts[key] = g.transition_counts.get(key, 0) + 1
            prev = node
        if sess.hits:
            last_nodes.append(sess.hits[-1].report_id)

    median_dwell = statistics.median(observed_dwells) if observed_dwells else 0.0
    for node in last_nodes:
        dwell[node] = dwell.get(node, 0.0) + median_dwell

    out_totals: dict[str, int] = {}
    for (u, _), c in g.transition_counts.items():
        out_totals[u] = out_totals.get(u, 0) + c
    for (u, v), c in g.transition_counts.items():
        g.edges[(u, v)] = c / out_totals[u]

    total_dwell = sum(dwell.get(n, 0.0) for n in g.nodes)
    for n, attrs in g.nodes.items():
        attrs.dwell_seconds = dwell.get(n, 0.0)
        if total_dwell > 0:
            attrs.mass = dwell.get(n, 0.0) / total_dwell
        else:
            attrs.mass = 1.0 / len(g.nodes)
    return g


def detect_targets(graph: NavGraph) -> set[str]:
    """Flag nodes whose distinct-edge in-degree is >= the mean in-degree."""
    if not graph.nodes:
        return set()
    indeg = {n: 0 for n in graph.nodes}
    for (_, v) in graph.edges:
        indeg[v] += 1
    mean = sum(indeg.values()) / len(indeg)
    targets = {n for n, d in indeg.items() if d >= mean}
    for n, attrs in graph.nodes.items():
        attrs.target = 1 if n in targets else 0
    return targets


def intent_distances(graph: NavGraph, source: str) -> IntentDistances:
    """Max path probability from source to each reachable target.

    Dijkstra over edge lengths -ln(W); an empty path has probability 1, so a
    source that is itself a target maps to 1.
    """
    if source not in graph.nodes:
        raise KeyError(f"unknown source node: {source!r}")

    adjacency: dict[str, list[tuple[str, float]]] = {n: [] for n in graph.nodes}
    for (u, v), w in sorted(graph.edges.items()):
        adjacency[u].append((v, -math.log(w)))

    dist: dict[str, float] = {source: 0.0}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, source)]
    while heap:
        d, u = heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, length in adjacency[u]:
            nd = d + length
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heappush(heap, (nd, v))

    per_target = {
        t: math.exp(-dist[t]) for t in graph.targets() if t in dist
    }
    return IntentDistances(source=source, per_target=per_target)
