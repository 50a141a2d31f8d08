"""Pairwise rank learning of per-intent weight vectors over evolved latent
factors, plus the normalized intent score."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

WEIGHT_NORM_CAP = 4.0
DEFAULT_LAMBDA = 1.0
DEFAULT_EPOCHS = 200
MAX_PAIRS = 5000


@dataclass
class RankTrainingSet:
    intent: str
    R1: np.ndarray  # factors from sessions ending at the intent, unit norm
    R2: np.ndarray  # factors from sessions ending elsewhere, unit norm


@dataclass
class IntentWeights:
    w: np.ndarray
    objective: float = 0.0
    violation_rate: float = 0.0
    degenerate: bool = False


@dataclass
class RankModel:
    weights: dict[str, IntentWeights] = field(default_factory=dict)
    trade_off: float = DEFAULT_LAMBDA

    def intents(self) -> list[str]:
        return sorted(self.weights)

    def to_json(self) -> dict:
        return {
            "lambda": self.trade_off,
            "intents": {
                intent: {
                    "w": iw.w.tolist(),
                    "objective": iw.objective,
                    "violation_rate": iw.violation_rate,
                    "degenerate": iw.degenerate,
                }
                for intent, iw in sorted(self.weights.items())
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RankModel":
        model = cls(trade_off=doc["lambda"])
        for intent, entry in doc["intents"].items():
            model.weights[intent] = IntentWeights(
                w=np.asarray(entry["w"], dtype=float),
                objective=entry["objective"],
                violation_rate=entry["violation_rate"],
                degenerate=entry["degenerate"],
            )
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "RankModel":
        return cls.from_json(json.loads(s))


def _unit_rows(factors) -> np.ndarray:
    rows = []
    for f in factors:
        f = np.asarray(f, dtype=float)
        n = np.linalg.norm(f)
        if n > 0:
            rows.append(f / n)
    return np.array(rows) if rows else np.empty((0, 0))


def session_final_target(report_sequence: list[str], targets: set[str]) -> str | None:
    """Last target-flagged node visited in the session, or None."""
    for report in reversed(report_sequence):
        if report in targets:
            return report
    return None


def training_sets_from_endings(
    endings: dict[str, list[np.ndarray]],
) -> dict[str, RankTrainingSet]:
    """Build per-intent training sets from factors grouped by session ending."""
    out: dict[str, RankTrainingSet] = {}
    for intent in sorted(endings):
        pos = _unit_rows(endings[intent])
        neg = _unit_rows(
            [f for other in sorted(endings) if other != intent for f in endings[other]]
        )
        if len(pos) == 0:
            continue
        out[intent] = RankTrainingSet(intent=intent, R1=pos, R2=neg)
    return out


def build_training_sets(
    session_factors: list[tuple[list[str], list[np.ndarray]]],
    targets: set[str],
) -> dict[str, RankTrainingSet]:
    """Per intent, split factor observations by whether the session ended there.

    session_factors pairs each session's report sequence with the evolved
    latent factor of each view. Sessions that visit no target are skipped;
    zero factors are dropped during unit normalization.
    """
    endings: dict[str, list[np.ndarray]] = {}
    for reports, factors in session_factors:
        final = session_final_target(reports, targets)
        if final is None:
            continue
        endings.setdefault(final, []).extend(factors)
    return training_sets_from_endings(endings)


def _hinge_objective(w: np.ndarray, diffs: np.ndarray, lam: float) -> float:
    margins = 1.0 - diffs @ w
    return float(w @ w + lam * np.clip(margins, 0.0, None).sum())


def train(
    ts: RankTrainingSet,
    lam: float = DEFAULT_LAMBDA,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
    batch_size: int = 64,
) -> IntentWeights:
    """Stochastic subgradient descent on the hinge relaxation of the pairwise
    margin problem; the weight norm is capped at 4 after training so the
    affine score normalization stays in [0, 1].
    """
    if len(ts.R1) == 0:
        raise ValueError("empty positive set")
    if len(ts.R2) == 0:
        w = ts.R1.mean(axis=0)
        n = np.linalg.norm(w)
        w = w / n if n > 0 else w
        log.warning("intent %s has no negative sessions; degenerate model", ts.intent)
        return IntentWeights(w=w, degenerate=True)

    rng = np.random.default_rng(seed)
    n_pairs = len(ts.R1) * len(ts.R2)
    if n_pairs <= MAX_PAIRS:
        ii, jj = np.meshgrid(np.arange(len(ts.R1)), np.arange(len(ts.R2)), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
    else:
        ii = rng.integers(len(ts.R1), size=MAX_PAIRS)
        jj = rng.integers(len(ts.R2), size=MAX_PAIRS)
    diffs = ts.R1[ii] - ts.R2[jj]
    n_pairs = len(diffs)

    dim = diffs.shape[1]
    w = np.zeros(dim)
    best_w = w.copy()
    best_obj = _hinge_objective(w, diffs, lam)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        for start in range(0, n_pairs, batch_size):
            t += 1
            batch = diffs[order[start : start + batch_size]]
            viol = (batch @ w) < 1.0
            # subgradient of the per-pair-averaged objective
            grad = (2.0 / n_pairs) * w
            if viol.any():
                grad = grad - lam * batch[viol].sum(axis=0) / len(batch)
            w = w - grad / (lam * t)
        obj = _hinge_objective(w, diffs, lam)
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()

    w = best_w
    norm = np.linalg.norm(w)
    if norm > WEIGHT_NORM_CAP:
        w = w * (WEIGHT_NORM_CAP / norm)
    margins = diffs @ w
    violations = float(np.mean(margins <= 0))
    return IntentWeights(w=w, objective=_hinge_objective(w, diffs, lam), violation_rate=violations)


def train_all(
    training_sets: dict[str, RankTrainingSet],
    lam: float = DEFAULT_LAMBDA,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
) -> RankModel:
    model = RankModel(trade_off=lam)
    for k, intent in enumerate(sorted(training_sets)):
        model.weights[intent] = train(training_sets[intent], lam=lam, epochs=epochs, seed=seed + k)
    return model


def intent_score(model: RankModel, intent: str, f: np.ndarray) -> float:
    """Normalized intent score (4 + <w, f>) / 8, clamped to [0, 1]."""
    if intent not in model.weights:
        raise KeyError(f"unknown intent: {intent!r}")
    raw = float(model.weights[intent].w @ np.asarray(f, dtype=float))
    return min(max((4.0 + raw) / 8.0, 0.0), 1.0)
