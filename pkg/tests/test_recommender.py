import numpy as np
import pytest

from intentrec.context import UserClustering
from intentrec.navgraph import NavGraph, NodeAttrs, build_graph, detect_targets
from intentrec.recommender import (
    FeedbackKind,
    RelevanceVariant,
    apply_feedback,
    enumerate_candidates,
    group_recommend,
    rank,
    recommend,
    relevance,
    score_candidates,
)

from conftest import make_session


def _graph(edges, masses=None, targets=()):
    g = NavGraph(user_id="u1")
    for u, v in edges:
        g.nodes.setdefault(u, NodeAttrs())
        g.nodes.setdefault(v, NodeAttrs())
    for (u, v), w in edges.items():
        g.edges[(u, v)] = w
    for n, m in (masses or {}).items():
        g.nodes[n].mass = m
    for t in targets:
        g.nodes[t].target = 1
    return g


class TestRelevance:
    def test_hand_examples(self):
        scores = {"t1": 0.2, "t2": 0.3}
        dists = {"t1": 0.5, "t2": 0.4}
        assert relevance(RelevanceVariant.SUM_I, scores, dists) == pytest.approx(0.5)
        assert relevance(RelevanceVariant.MAX_I, scores, dists) == pytest.approx(0.3)
        assert relevance(RelevanceVariant.MAX_IXD, scores, dists) == pytest.approx(0.12)
        assert relevance(RelevanceVariant.DOT_IXD, scores, dists) == pytest.approx(0.22)

    def test_empty_scores_zero(self):
        assert relevance(RelevanceVariant.SUM_I, {}, {}) == 0.0

    def test_sum_dominates_max(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            scores = {f"t{i}": float(rng.uniform()) for i in range(n)}
            dists = {f"t{i}": float(rng.uniform()) for i in range(n)}
            s = relevance(RelevanceVariant.SUM_I, scores, dists)
            m = relevance(RelevanceVariant.MAX_I, scores, dists)
            assert s >= m - 1e-12


class TestCandidates:
    def test_one_and_two_step(self):
        g = _graph({("u", "a"): 0.5, ("u", "b"): 0.5, ("a", "c"): 1.0, ("b", "c"): 0.8, ("b", "u"): 0.2})
        cands = enumerate_candidates(g, "u")
        by_node = {v: (w, s) for v, w, s in cands}
        assert by_node["a"] == (0.5, 1)
        assert by_node["b"] == (0.5, 1)
        # two-step weight maximizes over intermediates: via a (0.5) beats via b (0.4)
        assert by_node["c"] == (pytest.approx(0.5), 2)
        assert "u" not in by_node  # the current node is never a candidate

    def test_one_step_nodes_not_duplicated(self):
        g = _graph({("u", "a"): 1.0, ("a", "b"): 0.5, ("a", "a2"): 0.5, ("u", "b"): 0.0001})
        g.edges[("u", "a")] = 0.9
        g.edges[("u", "b")] = 0.1
        cands = enumerate_candidates(g, "u")
        assert sum(1 for v, _, _ in cands if v == "b") == 1

    def test_unknown_node(self):
        with pytest.raises(KeyError):
            enumerate_candidates(NavGraph(user_id="u1"), "nope")


class TestScoreCandidates:
    def test_score_identity(self):
        g = _graph(
            {("u", "a"): 0.7, ("u", "b"): 0.3},
            masses={"a": 0.4, "b": 0.1},
        )
        g.nodes["a"].alpha = 1.5
        g.nodes["a"].beta = 0.5
        rels = {"a": 0.8, "b": 0.2}
        recs = score_candidates(g, "u", rels)
        for r in recs:
            attrs = g.nodes[r.node]
            expected = attrs.alpha * r.weight * r.relevance + attrs.beta * r.mass
            assert r.score == pytest.approx(expected, abs=1e-15)

    def test_recommend_restricts_scores_to_reachable_targets(self):
        # two disjoint branches: each candidate sees only its own target's score
        g = _graph(
            {("u", "a"): 0.5, ("u", "b"): 0.5, ("a", "t1"): 1.0, ("b", "t2"): 1.0},
            targets=("t1", "t2"),
        )
        recs = {r.node: r for r in recommend(g, "u", {"t1": 0.9, "t2": 0.1})}
        assert recs["a"].relevance == pytest.approx(0.9)
        assert recs["b"].relevance == pytest.approx(0.1)


class TestRank:
    def _rec(self, node, score, collab=False, rel=0.0, w=0.0, m=0.0):
        from intentrec.recommender import Recommendation

        return Recommendation(
            node=node, score=score, relevance=rel, weight=w, mass=m,
            collaborative=collab, source_user="u1", step=1,
        )

    def test_order_and_tiebreaks(self):
        recs = [
            self._rec("a", 0.5),
            self._rec("b", 0.9),
            self._rec("c", 0.5, collab=True),
            self._rec("d", 0.5, rel=0.4),
        ]
        ordered = [r.node for r in rank(recs, k=4)]
        assert ordered == ["b", "d", "a", "c"]

    def test_k_truncates(self):
        recs = [self._rec(f"n{i}", float(i)) for i in range(5)]
        assert len(rank(recs, k=2)) == 2

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            rank([], k=0)


class TestGroupRecommend:
    def _setup(self):
        novice = build_graph([make_session("novice", ["hub", "x"])])
        expert = build_graph(
            [make_session("expert", ["hub", "deep", "t"], gap=30)] * 2
        )
        detect_targets(novice)
        detect_targets(expert)
        graphs = {"novice": novice, "expert": expert}
        clustering = UserClustering(
            assignments={"novice": 0, "expert": 3}, centroids=np.zeros((4, 3))
        )
        return graphs, clustering

    def test_sources_novel_nodes_from_experienced_users(self):
        graphs, clustering = self._setup()
        recs = group_recommend("novice", clustering, graphs, "hub", {"t": 0.8})
        nodes = {r.node for r in recs}
        assert "deep" in nodes
        assert all(r.collaborative for r in recs)
        assert all(r.source_user == "expert" for r in recs)
        assert "x" not in nodes  # already known to the novice

    def test_less_experienced_users_excluded(self):
        graphs, clustering = self._setup()
        clustering.assignments["expert"] = 0
        clustering.assignments["novice"] = 3
        recs = group_recommend("novice", clustering, graphs, "hub", {"t": 0.8})
        assert recs == []

    def test_unclustered_user_rejected(self):
        graphs, clustering = self._setup()
        with pytest.raises(KeyError):
            group_recommend("ghost", clustering, graphs, "hub", {})


class TestFeedback:
    def _shown(self, g):
        rels = {v: 0.5 for v in g.nodes}
        return score_candidates(g, "u", rels)

    def _graph(self):
        gr = NavGraph(user_id="u1")
        for n in ("u", "a", "b"):
            gr.nodes[n] = NodeAttrs(mass=0.3)
        gr.edges[("u", "a")] = 0.5
        gr.edges[("u", "b")] = 0.5
        gr.edges[("a", "c")] = 1.0
        gr.nodes["c"] = NodeAttrs(mass=0.1)
        return gr

    def test_explicit_positive(self):
        g = self._graph()
        shown = self._shown(g)
        apply_feedback(g, shown, FeedbackKind.EXPLICIT_POS, node="a", rate=0.1)
        assert g.nodes["a"].alpha == pytest.approx(1.1)
        assert g.nodes["a"].beta == pytest.approx(1.1)
        assert g.nodes["b"].alpha == pytest.approx(1.0)

    def test_explicit_negative_and_floor(self):
        g = self._graph()
        shown = self._shown(g)
        g.nodes["a"].alpha = 0.011
        g.nodes["a"].beta = 0.011
        apply_feedback(g, shown, FeedbackKind.EXPLICIT_NEG, node="a", rate=0.5)
        assert g.nodes["a"].alpha == pytest.approx(0.01)  # floored

    def test_implicit_positive_half_rate(self):
        g = self._graph()
        shown = self._shown(g)
        apply_feedback(g, shown, FeedbackKind.IMPLICIT_POS, node="b", rate=0.2)
        assert g.nodes["b"].alpha == pytest.approx(1.1)

    def test_implicit_negative_hits_all_shown(self):
        g = self._graph()
        shown = self._shown(g)
        apply_feedback(g, shown, FeedbackKind.IMPLICIT_NEG, rate=0.4)
        assert g.nodes["a"].alpha == pytest.approx(0.9)
        assert g.nodes["b"].alpha == pytest.approx(0.9)

    def test_two_step_gets_half_effect(self):
        g = self._graph()
        shown = self._shown(g)
        two_step = next(r for r in shown if r.step == 2)
        apply_feedback(g, shown, FeedbackKind.EXPLICIT_POS, node=two_step.node, rate=0.2)
        assert g.nodes[two_step.node].alpha == pytest.approx(1.1)  # half of +0.2

    def test_unshown_node_rejected(self):
        g = self._graph()
        with pytest.raises(ValueError):
            apply_feedback(g, self._shown(g), FeedbackKind.EXPLICIT_POS, node="zzz")
