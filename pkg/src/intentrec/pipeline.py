"""File-backed pipeline stages: each stage reads its predecessor's artifacts
from the workdir, writes its own, and records a manifest entry."""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import context, evaluation, ingest, kalman, navgraph, parafac2, ranksvm, recommender, synth
from .artifacts import FitConfig, TrainedModel, UserServing, serving_factor
from .models import Dataset, HitRecord, ReportKind, Session, group_by_user

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class PipelineConfig:
    timeout: float = ingest.DEFAULT_SESSION_TIMEOUT
    train_fraction: float = 0.7
    rank: int = parafac2.DEFAULT_RANK
    max_iters: int = 50
    tol: float = 1e-6
    rank_lambda: float = ranksvm.DEFAULT_LAMBDA
    rank_epochs: int = 50
    process_noise: float = kalman.DEFAULT_PROCESS_NOISE
    feedback_rate: float = recommender.DEFAULT_FEEDBACK_RATE
    variant: str = "sum-i"
    k: int = 10
    seed: int = 0
    min_unique_reports: int = 5

    def fit_config(self) -> FitConfig:
        return FitConfig(
            rank=self.rank,
            tol=self.tol,
            max_iters=self.max_iters,
            rank_lambda=self.rank_lambda,
            rank_epochs=self.rank_epochs,
            process_noise=self.process_noise,
            seed=self.seed,
        )


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(str(path))
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _note_manifest(workdir: Path, stage: str, inputs: list[Path], config: dict, t0: float):
    manifest_path = workdir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest[stage] = {
        "inputs": {p.name: _sha256(p) for p in inputs if p.is_file()},
        "config": config,
        "elapsed_s": round(time.time() - t0, 3),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _hit_to_doc(h: HitRecord) -> dict:
    return {
        "user_id": h.user_id,
        "ts": h.timestamp,
        "report_id": h.report_id,
        "kind": h.report_kind.value,
        "metric": h.metric,
        "dim_element": h.dimension_element,
        "values": list(h.values),
        "session": h.session_hint,
    }


def _hit_from_doc(d: dict) -> HitRecord:
    return HitRecord(
        user_id=d["user_id"],
        timestamp=d["ts"],
        report_id=d["report_id"],
        report_kind=ReportKind(d["kind"]),
        metric=d["metric"],
        dimension_element=d["dim_element"],
        values=tuple(d["values"]),
        session_hint=d.get("session"),
    )


def save_dataset(dataset: Dataset, path: Path):
    doc = {
        "split_instant": dataset.split_instant,
        "train": [[_hit_to_doc(h) for h in s.hits] for s in dataset.train],
        "test": [[_hit_to_doc(h) for h in s.hits] for s in dataset.test],
    }
    path.write_text(json.dumps(doc, sort_keys=True))


def load_dataset(path: Path) -> Dataset:
    doc = json.loads(_require(path).read_text())

    def sessions(key):
        out = []
        for hits in doc[key]:
            parsed = [_hit_from_doc(h) for h in hits]
            out.append(Session(user_id=parsed[0].user_id, hits=parsed))
        return out

    return Dataset(train=sessions("train"), test=sessions("test"), split_instant=doc["split_instant"])


def _save_matrix(path: Path, M: np.ndarray):
    np.savetxt(path, M, delimiter=",", header=f"shape: {M.shape[0]} {M.shape[1]}")


def _load_matrix(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(_require(path), delimiter=",", comments="#"))


# ---------------------------------------------------------------- stages


def stage_synth(workdir: Path, config: synth.SynthConfig) -> Path:
    t0 = time.time()
    workdir.mkdir(parents=True, exist_ok=True)
    hits = synth.generate(config)
    out = workdir / "hits.jsonl"
    out.write_text(synth.to_jsonl(hits))
    _note_manifest(workdir, "synth", [], asdict(config), t0)
    return out


def stage_ingest(workdir: Path, config: PipelineConfig, source: Path | None = None) -> Path:
    t0 = time.time()
    src = _require(source or workdir / "hits.jsonl")
    fmt = "csv" if src.suffix == ".csv" else "jsonl"
    with src.open() as fh:
        parsed = ingest.parse_hits(fh, format=fmt)
    sessions = ingest.sessionize(parsed.records, timeout=config.timeout)
    dataset = ingest.temporal_split(sessions, train_fraction=config.train_fraction)
    out = workdir / "sessions.json"
    save_dataset(dataset, out)
    _note_manifest(
        workdir,
        "ingest",
        [src],
        {"timeout": config.timeout, "train_fraction": config.train_fraction,
         "skipped_rows": parsed.skipped},
        t0,
    )
    return out


def stage_graph(workdir: Path, config: PipelineConfig) -> Path:
    t0 = time.time()
    dataset = load_dataset(workdir / "sessions.json")
    docs = []
    for uid, sessions in sorted(group_by_user(dataset.train).items()):
        g = navgraph.build_graph(sorted(sessions, key=lambda s: s.hits[0].timestamp))
        navgraph.detect_targets(g)
        docs.append(g.to_json())
    out = workdir / "graphs.json"
    out.write_text(json.dumps(docs, sort_keys=True))
    _note_manifest(workdir, "graph", [workdir / "sessions.json"], {}, t0)
    return out


def load_graphs(workdir: Path) -> dict[str, navgraph.NavGraph]:
    docs = json.loads(_require(workdir / "graphs.json").read_text())
    graphs = {}
    for doc in docs:
        g = navgraph.NavGraph.from_json(doc)
        graphs[g.user_id] = g
    return graphs


def stage_tensor(workdir: Path, config: PipelineConfig) -> Path:
    t0 = time.time()
    dataset = load_dataset(workdir / "sessions.json")
    per_user = {
        uid: sorted(sessions, key=lambda s: s.hits[0].timestamp)
        for uid, sessions in group_by_user(dataset.train).items()
    }
    features = {uid: context.usage_features(s) for uid, s in per_user.items()}
    clustering = context.cluster_users(features, seed=config.seed)
    (workdir / "clustering.json").write_text(
        json.dumps(
            {
                "assignments": clustering.assignments,
                "centroids": clustering.centroids.tolist(),
                "insufficient": clustering.insufficient,
                "empty_clusters": clustering.empty_clusters,
            },
            sort_keys=True,
        )
    )

    matrices = {uid: context.build_matrix(s) for uid, s in per_user.items()}
    tensor_root = workdir / "tensors"
    for cluster_id in range(context.N_CLUSTERS):
        members = sorted(u for u, c in clustering.assignments.items() if c == cluster_id)
        if not members:
            continue
        tensor = context.assemble_tensor([matrices[u] for u in members], clustering, cluster_id)
        cdir = tensor_root / f"cluster_{cluster_id}"
        cdir.mkdir(parents=True, exist_ok=True)
        layout_doc = {
            "users": tensor.users,
            "T": tensor.T,
            "orig_cols": {u: matrices[u].X.shape[1] for u in tensor.users},
            "slots": {u: matrices[u].layout.slots for u in tensor.users},
            "files": {u: f"u{idx}.csv" for idx, u in enumerate(tensor.users)},
        }
        (cdir / "layout.json").write_text(json.dumps(layout_doc, sort_keys=True))
        for idx, u in enumerate(tensor.users):
            _save_matrix(cdir / f"u{idx}.csv", tensor.matrices[idx])
    _note_manifest(workdir, "tensor", [workdir / "sessions.json"], {"seed": config.seed}, t0)
    return tensor_root


def load_clustering(workdir: Path) -> context.UserClustering:
    doc = json.loads(_require(workdir / "clustering.json").read_text())
    return context.UserClustering(
        assignments=doc["assignments"],
        centroids=np.asarray(doc["centroids"]),
        insufficient=doc["insufficient"],
        empty_clusters=doc["empty_clusters"],
    )


def _cluster_dirs(root: Path) -> list[tuple[int, Path]]:
    out = []
    for p in sorted(root.glob("cluster_*")):
        out.append((int(p.name.split("_")[1]), p))
    return out


def stage_factorize(workdir: Path, config: PipelineConfig) -> Path:
    t0 = time.time()
    tensor_root = _require(workdir / "tensors")
    factor_root = workdir / "factors"
    for cluster_id, cdir in _cluster_dirs(tensor_root):
        layout_doc = json.loads((cdir / "layout.json").read_text())
        users = layout_doc["users"]
        mats = [_load_matrix(cdir / layout_doc["files"][u]) for u in users]
        keep = [i for i, m in enumerate(mats) if m.shape[0] >= 1]
        tensor = context.ContextTensor(
            cluster_id=cluster_id,
            users=[users[i] for i in keep],
            matrices=[mats[i] for i in keep],
            T=layout_doc["T"],
        )
        rank = min(config.rank, tensor.T, min(m.shape[0] for m in tensor.matrices))
        factors, report = parafac2.decompose(
            tensor,
            rank=rank,
            tol=config.tol,
            max_iters=config.max_iters,
            seed=config.seed + cluster_id,
        )
        fdir = factor_root / f"cluster_{cluster_id}"
        fdir.mkdir(parents=True, exist_ok=True)
        _save_matrix(fdir / "V.csv", factors.V)
        _save_matrix(fdir / "H.csv", factors.H)
        for idx, u in enumerate(tensor.users):
            _save_matrix(fdir / f"G_u{idx}.csv", factors.G[idx])
            np.savetxt(fdir / f"S_u{idx}.csv", factors.S[idx], delimiter=",")
        (fdir / "fit.json").write_text(
            json.dumps(
                {
                    "users": tensor.users,
                    "rank": rank,
                    "seed": config.seed + cluster_id,
                    "iterations": report.iterations,
                    "converged": report.converged,
                    "errors": report.errors,
                },
                sort_keys=True,
            )
        )
    _note_manifest(workdir, "factorize", [], {"rank": config.rank, "seed": config.seed}, t0)
    return factor_root


def stage_kalman(workdir: Path, config: PipelineConfig) -> Path:
    t0 = time.time()
    tensor_root = _require(workdir / "tensors")
    factor_root = _require(workdir / "factors")
    kdir = workdir / "kalman"
    kdir.mkdir(parents=True, exist_ok=True)
    state_doc: dict[str, dict] = {}
    for cluster_id, cdir in _cluster_dirs(tensor_root):
        fdir = factor_root / f"cluster_{cluster_id}"
        if not fdir.exists():
            continue
        layout_doc = json.loads((cdir / "layout.json").read_text())
        fit_doc = json.loads(_require(fdir / "fit.json").read_text())
        users = fit_doc["users"]
        rank = fit_doc["rank"]
        V = _load_matrix(fdir / "V.csv")
        H = _load_matrix(fdir / "H.csv")
        f_initial = V.T
        for idx, uid in enumerate(users):
            G = _load_matrix(fdir / f"G_u{idx}.csv")
            S = np.atleast_1d(np.loadtxt(fdir / f"S_u{idx}.csv", delimiter=","))
            lam = G @ H @ np.diag(S)
            X = _load_matrix(cdir / layout_doc["files"][uid])
            t_u = layout_doc["orig_cols"][uid]
            psi_scale = kalman.estimate_measurement_noise(X, lam, f_initial)
            A = kalman.estimate_transition(f_initial, ridge=1e-3)
            Q = config.process_noise * np.eye(rank)
            Psi = psi_scale * np.eye(lam.shape[0])
            obs = [
                kalman.MISSING if not np.any(X[:, t]) else X[:, t] for t in range(t_u)
            ]
            evolved, final = kalman.evolve_sequence(lam, A, Q, Psi, obs, f_initial[:, 0].copy())
            _save_matrix(kdir / f"fhat_c{cluster_id}_u{idx}.csv", np.array(evolved))
            state_doc[uid] = {
                "cluster": cluster_id,
                "index": idx,
                "A": A.tolist(),
                "q": config.process_noise,
                "psi": psi_scale,
                "f_init": f_initial[:, 0].tolist(),
                "f_post": final.f_post.tolist(),
                "P_post": final.P_post.tolist(),
            }
    (kdir / "states.json").write_text(json.dumps(state_doc, sort_keys=True))
    _note_manifest(workdir, "kalman", [], {"process_noise": config.process_noise}, t0)
    return kdir


def _load_serving(workdir: Path) -> dict[str, UserServing]:
    tensor_root = _require(workdir / "tensors")
    factor_root = _require(workdir / "factors")
    kdir = _require(workdir / "kalman")
    states = json.loads(_require(kdir / "states.json").read_text())
    serving: dict[str, UserServing] = {}
    layout_cache: dict[int, dict] = {}
    factor_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for uid, st in states.items():
        cluster_id = st["cluster"]
        idx = st["index"]
        if cluster_id not in layout_cache:
            layout_cache[cluster_id] = json.loads(
                (tensor_root / f"cluster_{cluster_id}" / "layout.json").read_text()
            )
            fdir = factor_root / f"cluster_{cluster_id}"
            factor_cache[cluster_id] = (_load_matrix(fdir / "V.csv"), _load_matrix(fdir / "H.csv"))
        layout_doc = layout_cache[cluster_id]
        V, H = factor_cache[cluster_id]
        fdir = factor_root / f"cluster_{cluster_id}"
        G = _load_matrix(fdir / f"G_u{idx}.csv")
        S = np.atleast_1d(np.loadtxt(fdir / f"S_u{idx}.csv", delimiter=","))
        lam = G @ H @ np.diag(S)
        rank = lam.shape[1]
        slots = [tuple(p) for p in layout_doc["slots"][uid]]
        layout = context.FeatureLayout(user_id=uid, slots=slots)
        A = np.asarray(st["A"])
        state = kalman.KalmanState(
            A=A,
            Q=st["q"] * np.eye(rank),
            Psi=st["psi"] * np.eye(lam.shape[0]),
            Lam=lam,
            f_post=np.asarray(st["f_post"]),
            P_post=np.asarray(st["P_post"]),
        )
        evolved_matrix = _load_matrix(kdir / f"fhat_c{cluster_id}_u{idx}.csv")
        serving[uid] = UserServing(
            user_id=uid,
            layout=layout,
            Lam=lam,
            Lam_pinv=np.linalg.pinv(lam),
            A=A,
            Q=state.Q,
            Psi=state.Psi,
            f_init=np.asarray(st["f_init"]),
            final_state=state,
            evolved=[evolved_matrix[t] for t in range(evolved_matrix.shape[0])],
        )
    return serving


def stage_train_rank(workdir: Path, config: PipelineConfig) -> Path:
    t0 = time.time()
    dataset = load_dataset(workdir / "sessions.json")
    graphs = load_graphs(workdir)
    serving = _load_serving(workdir)

    models: dict[str, ranksvm.RankModel] = {}
    for idx, (uid, sessions) in enumerate(sorted(group_by_user(dataset.train).items())):
        if uid not in serving:
            continue
        targets = set(graphs[uid].targets())
        evolved = serving[uid].evolved
        endings: dict[str, list[np.ndarray]] = {}
        pos = 0
        for sess in sorted(sessions, key=lambda s: s.hits[0].timestamp):
            n = len(sess.hits)
            sess_factors = evolved[pos : pos + n]
            pos += n
            final = ranksvm.session_final_target(sess.reports, targets)
            if final is None:
                continue
            endings.setdefault(final, []).extend(sess_factors)
        training_sets = ranksvm.training_sets_from_endings(endings)
        if training_sets:
            models[uid] = ranksvm.train_all(
                training_sets,
                lam=config.rank_lambda,
                epochs=config.rank_epochs,
                seed=config.seed + idx,
            )
    out = workdir / "rankmodel.json"
    out.write_text(
        json.dumps({u: m.to_json() for u, m in models.items()}, sort_keys=True)
    )
    _note_manifest(
        workdir, "train-rank",
        [workdir / "sessions.json", workdir / "graphs.json"],
        {"lambda": config.rank_lambda, "epochs": config.rank_epochs, "seed": config.seed},
        t0,
    )
    return out


def load_model(workdir: Path) -> TrainedModel:
    graphs = load_graphs(workdir)
    clustering = load_clustering(workdir)
    serving = _load_serving(workdir)
    doc = json.loads(_require(workdir / "rankmodel.json").read_text())
    rank_models = {u: ranksvm.RankModel.from_json(m) for u, m in doc.items()}
    return TrainedModel(
        graphs=graphs,
        clustering=clustering,
        factors={},
        fits={},
        rank_models=rank_models,
        serving=serving,
        frequency_only={u for u in graphs if u not in serving},
    )


def stage_recommend(
    workdir: Path,
    config: PipelineConfig,
    user: str,
    current: str,
    collaborative: bool = False,
) -> dict:
    t0 = time.time()
    model = load_model(workdir)
    if user not in model.graphs:
        raise KeyError(f"unknown user: {user!r}")
    graph = model.graphs[user]
    serving = model.serving.get(user)
    if serving is not None:
        f = serving.final_state.f_post
        intent_scores = model.intent_scores(user, f)
    else:
        intent_scores = {}
    variant = recommender.RelevanceVariant(config.variant)
    recs = recommender.recommend(graph, current, intent_scores, variant)
    if collaborative:
        recs += recommender.group_recommend(
            user, model.clustering, model.graphs, current, intent_scores, variant
        )
    ranked = recommender.rank(recs, k=config.k)
    doc = {
        "user": user,
        "current": current,
        "k": config.k,
        "variant": config.variant,
        "recs": [r.to_json() for r in ranked],
    }
    out = workdir / "recommendations.jsonl"
    with out.open("a") as fh:
        fh.write(json.dumps(doc, sort_keys=True) + "\n")
    _note_manifest(workdir, "recommend", [workdir / "rankmodel.json"], {"user": user}, t0)
    return doc


def stage_evaluate(workdir: Path, config: PipelineConfig) -> evaluation.BenchmarkResult:
    t0 = time.time()
    dataset = load_dataset(workdir / "sessions.json")
    model = load_model(workdir)
    result = evaluation.run_benchmark(
        dataset, model, k=config.k, min_unique_reports=config.min_unique_reports
    )
    (workdir / "results.csv").write_text(evaluation.results_csv(result.reports))
    (workdir / "results.txt").write_text(evaluation.results_table(result.reports) + "\n")
    _note_manifest(
        workdir, "evaluate",
        [workdir / "sessions.json", workdir / "graphs.json", workdir / "rankmodel.json"],
        {"k": config.k, "min_unique_reports": config.min_unique_reports},
        t0,
    )
    return result


def run_all(workdir: Path, config: PipelineConfig, source: Path | None = None):
    stage_ingest(workdir, config, source)
    stage_graph(workdir, config)
    stage_tensor(workdir, config)
    stage_factorize(workdir, config)
    stage_kalman(workdir, config)
    stage_train_rank(workdir, config)
    return stage_evaluate(workdir, config)


def stage_sweep(workdir: Path, config: PipelineConfig, ranks: list[int]):
    """Re-fit and evaluate across factorization ranks; returns (rows, best)."""
    rows = []
    for r in ranks:
        sub = workdir / f"sweep_R{r}"
        sub.mkdir(parents=True, exist_ok=True)
        for name in ("sessions.json", "graphs.json", "clustering.json"):
            src = _require(workdir / name)
            (sub / name).write_text(src.read_text())
        if (sub / "tensors").exists():
            shutil.rmtree(sub / "tensors")
        shutil.copytree(workdir / "tensors", sub / "tensors")
        cfg = PipelineConfig(**{**asdict(config), "rank": r})
        stage_factorize(sub, cfg)
        stage_kalman(sub, cfg)
        stage_train_rank(sub, cfg)
        result = stage_evaluate(sub, cfg)
        proposed = next(rep for rep in result.reports if rep.method == "sum-i")
        rows.append((r, proposed))
    best = max(rows, key=lambda row: row[1].ndcg)
    return rows, best
