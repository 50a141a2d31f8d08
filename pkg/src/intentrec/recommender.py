"""Recommendation scoring: combine transition weight, context relevance and
node mass; rank candidates; source group-based recommendations; apply
feedback updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

from .context import UserClustering
from .navgraph import ALPHA_BETA_FLOOR, NavGraph, intent_distances

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 10
DEFAULT_FEEDBACK_RATE = 0.1


class RelevanceVariant(str, Enum):
    SUM_I = "sum-i"
    MAX_I = "max-i"
    MAX_IXD = "max-ixd"
    DOT_IXD = "dot-ixd"


class FeedbackKind(str, Enum):
    EXPLICIT_POS = "explicit_pos"
    EXPLICIT_NEG = "explicit_neg"
    IMPLICIT_POS = "implicit_pos"
    IMPLICIT_NEG = "implicit_neg"


@dataclass
class Recommendation:
    node: str
    score: float  # K_uv
    relevance: float  # R_v
    weight: float  # W_uv (path product for 2-step nodes)
    mass: float  # M_v
    collaborative: bool
    source_user: str
    step: int
    alpha: float = 1.0
    beta: float = 0.0

    def to_json(self) -> dict:
        return {
            "node": self.node,
            "K": self.score,
            "R": self.relevance,
            "W": self.weight,
            "M": self.mass,
            "alpha": self.alpha,
            "beta": self.beta,
            "collaborative": self.collaborative,
            "step": self.step,
        }


def relevance(
    variant: RelevanceVariant,
    intent_scores: dict[str, float],
    distances: dict[str, float],
) -> float:
    """Collapse intent scores (and, for IxD variants, path probabilities to
    the intents) into a single per-candidate relevance value."""
    if not intent_scores:
        log.warning("no intent scores available; relevance 0")
        return 0.0
    if variant is RelevanceVariant.SUM_I:
        return sum(intent_scores.values())
    if variant is RelevanceVariant.MAX_I:
        return max(intent_scores.values())
    common = [t for t in intent_scores if t in distances]
    if variant is RelevanceVariant.MAX_IXD:
        return max((intent_scores[t] * distances[t] for t in common), default=0.0)
    if variant is RelevanceVariant.DOT_IXD:
        return sum(intent_scores[t] * distances[t] for t in common)
    raise ValueError(f"unknown variant: {variant}")


def candidate_relevances(
    graph: NavGraph,
    candidates: list[str],
    intent_scores: dict[str, float],
    variant: RelevanceVariant,
) -> dict[str, float]:
    """Per-candidate relevance: the intent scores of the current context,
    restricted to the intents reachable from each candidate."""
    out: dict[str, float] = {}
    for v in candidates:
        dist = intent_distances(graph, v).per_target
        reachable = {t: s for t, s in intent_scores.items() if t in dist}
        out[v] = relevance(variant, reachable, dist)
    return out


def enumerate_candidates(graph: NavGraph, u: str) -> list[tuple[str, float, int]]:
    """1-step and 2-step candidates of u with their path-product weights.

    2-step weights maximize W_uv * W_vw over intermediates; nodes already
    reachable in one step keep their 1-step entry only, and u is excluded.
    """
    if u not in graph.nodes:
        raise KeyError(f"unknown node: {u!r}")
    one_step = dict(graph.successors(u))
    two_step: dict[str, float] = {}
    for v, w_uv in one_step.items():
        for w_node, w_vw in graph.successors(v):
            if w_node == u or w_node in one_step:
                continue
            prod = w_uv * w_vw
            if prod > two_step.get(w_node, 0.0):
                two_step[w_node] = prod
    out = [(v, w, 1) for v, w in sorted(one_step.items())]
    out += [(v, w, 2) for v, w in sorted(two_step.items())]
    return out


def score_candidates(
    graph: NavGraph,
    u: str,
    relevances: dict[str, float],
    variant: RelevanceVariant = RelevanceVariant.SUM_I,
    collaborative: bool = False,
) -> list[Recommendation]:
    """Score every 1-step and 2-step candidate with K = a*W*R + b*M."""
    recs: list[Recommendation] = []
    for v, w_uv, step in enumerate_candidates(graph, u):
        attrs = graph.nodes[v]
        r_v = relevances.get(v, 0.0)
        k = attrs.alpha * w_uv * r_v + attrs.beta * attrs.mass
        recs.append(
            Recommendation(
                node=v,
                score=k,
                relevance=r_v,
                weight=w_uv,
                mass=attrs.mass,
                collaborative=collaborative,
                source_user=graph.user_id,
                step=step,
                alpha=attrs.alpha,
                beta=attrs.beta,
            )
        )
    return recs


def recommend(
    graph: NavGraph,
    u: str,
    intent_scores: dict[str, float],
    variant: RelevanceVariant = RelevanceVariant.SUM_I,
    collaborative: bool = False,
) -> list[Recommendation]:
    candidates = [v for v, _, _ in enumerate_candidates(graph, u)]
    rels = candidate_relevances(graph, candidates, intent_scores, variant)
    return score_candidates(graph, u, rels, variant, collaborative=collaborative)


def rank(recs: list[Recommendation], k: int = DEFAULT_TOP_K) -> list[Recommendation]:
    """Order by K desc, own-graph before collaborative, then R, W, M desc."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(
        recs,
        key=lambda r: (-r.score, r.collaborative, -r.relevance, -r.weight, -r.mass, r.node),
    )
    return ordered[:k]


def group_recommend(
    user_id: str,
    clustering: UserClustering,
    graphs: dict[str, NavGraph],
    u: str,
    intent_scores: dict[str, float],
    variant: RelevanceVariant = RelevanceVariant.SUM_I,
) -> list[Recommendation]:
    """Source novel candidates from more-experienced users' graphs.

    Source users sit in clusters ranked at or above the original user's,
    contain node u and at least one target. Intent scores stay the original
    user's; weights, masses and distances come from each source graph. Only
    nodes absent from the original user's graph are kept.
    """
    if user_id not in clustering.assignments:
        raise KeyError(f"user {user_id!r} not clustered")
    own_cluster = clustering.assignments[user_id]
    own_graph = graphs.get(user_id)
    own_nodes = set(own_graph.nodes) if own_graph else set()

    recs: list[Recommendation] = []
    for other_id in sorted(graphs):
        if other_id == user_id:
            continue
        if clustering.assignments.get(other_id, -1) < own_cluster:
            continue
        g = graphs[other_id]
        if u not in g.nodes or not g.targets():
            continue
        candidates = [
            v for v, _, _ in enumerate_candidates(g, u) if v not in own_nodes
        ]
        if not candidates:
            continue
        rels = candidate_relevances(g, candidates, intent_scores, variant)
        for rec in score_candidates(g, u, rels, variant, collaborative=True):
            if rec.node in own_nodes:
                continue
            recs.append(rec)
    return recs


def apply_feedback(
    graph: NavGraph,
    shown: list[Recommendation],
    kind: FeedbackKind,
    node: str | None = None,
    rate: float = DEFAULT_FEEDBACK_RATE,
) -> NavGraph:
    """Multiplicative update of the feedback factors of the implicated nodes.

    2-step recommendations receive half the multiplier effect; factors are
    floored at 0.01. Mutates and returns the graph.
    """
    shown_by_node = {r.node: r for r in shown}

    def scale(n: str, multiplier: float) -> None:
        rec = shown_by_node.get(n)
        if rec is not None and rec.step == 2:
            multiplier = 1.0 + (multiplier - 1.0) / 2.0
        attrs = graph.nodes[n]
        attrs.alpha = max(attrs.alpha * multiplier, ALPHA_BETA_FLOOR)
        attrs.beta = max(attrs.beta * multiplier, ALPHA_BETA_FLOOR)

    if kind is FeedbackKind.IMPLICIT_NEG:
        for r in shown:
            if r.node in graph.nodes:
                scale(r.node, 1.0 - rate / 4.0)
        return graph

    if node is None or node not in shown_by_node:
        raise ValueError(f"feedback target {node!r} not in the shown list")
    if node not in graph.nodes:
        raise ValueError(f"feedback target {node!r} not in the graph")
    if kind is FeedbackKind.EXPLICIT_POS:
        scale(node, 1.0 + rate)
    elif kind is FeedbackKind.EXPLICIT_NEG:
        scale(node, 1.0 - rate)
    elif kind is FeedbackKind.IMPLICIT_POS:
        scale(node, 1.0 + rate / 2.0)
    else:
        raise ValueError(f"unknown feedback kind: {kind}")
    return graph
