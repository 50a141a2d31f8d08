"""Evaluation harness: ranking metrics over held-out sessions for the
proposed scoring variants and the four baselines."""
from __future__ import annotations

import copy
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import recommender
from .artifacts import TrainedModel, serving_factor
from .models import Dataset, group_by_user
from .navgraph import intent_distances
from .recommender import RelevanceVariant

log = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_MIN_UNIQUE_REPORTS = 5

BASELINES = ("mass", "frequency", "context", "parafac2")
VARIANTS = ("max-ixd", "dot-ixd", "max-i", "sum-i")
ALL_METHODS = BASELINES + VARIANTS


@dataclass
class EvalEvent:
    user: str
    current: str
    true_next: str
    shown: list[str]  # at most k ordered nodes
    scores: dict[str, float]  # full candidate scores, for AUC


@dataclass
class EvalReport:
    method: str
    ndcg: float
    precision: float
    recall: float
    wauc: float
    events: int


@dataclass
class BenchmarkResult:
    reports: list[EvalReport]
    skipped_unseen: int = 0
    skipped_filtered: int = 0
    per_user_events: dict[str, int] = field(default_factory=dict)


def ndcg_at_k(shown: list[str], true_next: str, k: int = DEFAULT_K) -> float:
    """Binary-relevance NDCG with a single relevant item (ideal DCG = 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for rank0, node in enumerate(shown[:k]):
        if node == true_next:
            return 1.0 / math.log2(rank0 + 2)
    return 0.0


def precision_recall_at_k(
    shown: list[str], true_next: str, k: int = DEFAULT_K
) -> tuple[float, float]:
    if k < 1:
        raise ValueError("k must be >= 1")
    hit = 1.0 if true_next in shown[:k] else 0.0
    return hit / k, hit


def event_auc(scores: dict[str, float], true_next: str) -> float:
    """Pairwise AUC of the positive against every other candidate."""
    if true_next not in scores:
        return 0.0
    pos = scores[true_next]
    negatives = [s for n, s in scores.items() if n != true_next]
    if not negatives:
        return 1.0
    below = sum(1 for s in negatives if s < pos)
    ties = sum(1 for s in negatives if s == pos)
    return (below + 0.5 * ties) / len(negatives)


def weighted_auc(events: list[EvalEvent]) -> float:
    """Per-user mean event AUC, averaged over users weighted by event count."""
    per_user: dict[str, list[float]] = {}
    for ev in events:
        per_user.setdefault(ev.user, []).append(event_auc(ev.scores, ev.true_next))
    if not per_user:
        return 0.0
    total = sum(len(v) for v in per_user.values())
    return sum(len(v) * (sum(v) / len(v)) for v in per_user.values()) / total


def summarize(method: str, events: list[EvalEvent], k: int = DEFAULT_K) -> EvalReport:
    if not events:
        return EvalReport(method=method, ndcg=0.0, precision=0.0, recall=0.0, wauc=0.0, events=0)
    ndcgs, precs, recs = [], [], []
    for ev in events:
        ndcgs.append(ndcg_at_k(ev.shown, ev.true_next, k))
        p, r = precision_recall_at_k(ev.shown, ev.true_next, k)
        precs.append(p)
        recs.append(r)
    return EvalReport(
        method=method,
        ndcg=float(np.mean(ndcgs)),
        precision=float(np.mean(precs)),
        recall=float(np.mean(recs)),
        wauc=weighted_auc(events),
        events=len(events),
    )


def _relevances(
    distances: dict[str, dict[str, float]],
    nodes: list[str],
    intent_scores: dict[str, float],
    variant: RelevanceVariant,
) -> dict[str, float]:
    out = {}
    for v in nodes:
        dist = distances[v]
        reachable = {t: s for t, s in intent_scores.items() if t in dist}
        # empty reachable sets are routine during evaluation; score 0 quietly
        out[v] = recommender.relevance(variant, reachable, dist) if reachable else 0.0
    return out


def _method_scores(
    method: str,
    graph,
    u: str,
    candidates: list[tuple[str, float, int]],
    distances: dict[str, dict[str, float]],
    intent_scores_kal: dict[str, float],
    intent_scores_pf2: dict[str, float],
    k: int,
) -> tuple[dict[str, float], list[str]]:
    """Candidate scores plus the shown (top-k) ordering for one event."""
    nodes = [v for v, _, _ in candidates]
    if method == "mass":
        scores = {v: graph.nodes[v].mass for v in nodes}
    elif method == "frequency":
        scores = {v: w for v, w, _ in candidates}
    elif method in ("context", "parafac2"):
        intent_scores = intent_scores_kal if method == "context" else intent_scores_pf2
        scores = _relevances(distances, nodes, intent_scores, RelevanceVariant.SUM_I)
        # context-only score (alpha=1, W stripped, beta=0); ties resolved with
        # the standard rank-order chain over W, M, node id
        weights = {v: w for v, w, _ in candidates}
        shown = sorted(
            scores,
            key=lambda v: (-scores[v], -weights[v], -graph.nodes[v].mass, v),
        )
        return scores, shown[:k]
    else:
        variant = RelevanceVariant(method)
        rels = _relevances(distances, nodes, intent_scores_kal, variant)
        recs = recommender.score_candidates(graph, u, rels, variant)
        ranked = recommender.rank(recs, k=k)
        return {r.node: r.score for r in recs}, [r.node for r in ranked]
    shown = [v for v, _ in sorted(scores.items(), key=lambda it: (-it[1], it[0]))]
    return scores, shown[:k]


def run_benchmark(
    dataset: Dataset,
    model: TrainedModel,
    methods: tuple[str, ...] = ALL_METHODS,
    k: int = DEFAULT_K,
    min_unique_reports: int = DEFAULT_MIN_UNIQUE_REPORTS,
) -> BenchmarkResult:
    """One EvalEvent per consecutive test-session pair, scored per method.

    Users unseen in training (or with too few unique training reports) are
    skipped and counted. Methods needing context artifacts fall back to
    frequency-only behavior for users excluded from the factorization.
    """
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")

    per_method: dict[str, list[EvalEvent]] = {m: [] for m in methods}
    skipped_unseen = 0
    skipped_filtered = 0
    per_user_events: dict[str, int] = {}

    test_by_user = group_by_user(dataset.test)
    for uid in sorted(test_by_user):
        graph = model.graphs.get(uid)
        if graph is None:
            skipped_unseen += len(test_by_user[uid])
            continue
        if len(graph.nodes) < min_unique_reports:
            skipped_filtered += sum(max(len(s) - 1, 0) for s in test_by_user[uid])
            continue
        serving = model.serving.get(uid)
        state = copy.deepcopy(serving.final_state) if serving else None
        dist_cache: dict[str, dict[str, float]] = {}

        sessions = sorted(test_by_user[uid], key=lambda s: s.hits[0].timestamp)
        for sess in sessions:
            f_kal = np.zeros(1)
            f_pf2 = np.zeros(1)
            for i, hit in enumerate(sess.hits):
                if serving is not None:
                    f_kal, f_pf2, state = serving_factor(serving, state, hit)
                if i + 1 >= len(sess.hits):
                    continue
                u = hit.report_id
                v_star = sess.hits[i + 1].report_id
                if u not in graph.nodes:
                    skipped_unseen += 1
                    continue
                candidates = recommender.enumerate_candidates(graph, u)
                for v, _, _ in candidates:
                    if v not in dist_cache:
                        dist_cache[v] = intent_distances(graph, v).per_target
                scores_kal = model.intent_scores(uid, f_kal) if serving else {}
                scores_pf2 = model.intent_scores(uid, f_pf2) if serving else {}
                for method in methods:
                    scores, shown = _method_scores(
                        method, graph, u, candidates, dist_cache, scores_kal, scores_pf2, k
                    )
                    per_method[method].append(
                        EvalEvent(
                            user=uid,
                            current=u,
                            true_next=v_star,
                            shown=shown[:k],
                            scores=scores,
                        )
                    )
                per_user_events[uid] = per_user_events.get(uid, 0) + 1

    reports = [summarize(m, per_method[m], k) for m in methods]
    if not any(r.events for r in reports):
        log.warning("no evaluable events in the test set")
    return BenchmarkResult(
        reports=reports,
        skipped_unseen=skipped_unseen,
        skipped_filtered=skipped_filtered,
        per_user_events=per_user_events,
    )


def results_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    buf.write("method,ndcg,precision,recall,wauc,events\n")
    for r in reports:
        buf.write(
            f"{r.method},{r.ndcg:.6f},{r.precision:.6f},{r.recall:.6f},{r.wauc:.6f},{r.events}\n"
        )
    return buf.getvalue()


def results_table(reports: list[EvalReport]) -> str:
    lines = [f"{'Method':<12} {'NDCG':>8} {'Precision':>10} {'Recall':>8} {'w-AUC':>8}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        lines.append(
            f"{r.method:<12} {r.ndcg:>8.4f} {r.precision:>10.4f} {r.recall:>8.4f} {r.wauc:>8.4f}"
        )
    return "\n".join(lines)
