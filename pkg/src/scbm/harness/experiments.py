"""Experiment runners. Each is a pure function of its config: every random
draw comes from a stream keyed by (seed, purpose), so reruns reproduce the
raw rows byte for byte regardless of thread count."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from ..estimate import apply_bottleneck, effect_mae, estimate_edge, estimate_all, identifiability_score, model_identifiability
from ..graph import Dag, Edge, sample_er_dag
from ..io import clouds_to_csv
from ..linalg import IllConditionedWarning, numerical_rank
from ..mlp import orthogonalize
from ..synth import (
    LINEAR,
    TRANSFER_ARCH,
    ArchSpec,
    bottleneck_values,
    mechanism_oracle,
    sample_dataset,
    sample_linear_scbm,
    sample_nonlinear_scbm,
    share_source_bottlenecks,
)
from .config import IDENTIFIABILITY, MISSPECIFICATION, RANK_COLLAPSE, TRANSFER, ConfigError, ExperimentConfig
from .report import MODEL_ROW, ExperimentReport, Row

# stream ids
MODEL, DATA, ESTIMATE, EVAL, SCORE, JOINT, TEST = range(7)
CLOUD_ROWS = 2000


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def thread_count() -> int:
    raw = os.environ.get("SCBM_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"SCBM_THREADS must be a positive integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"SCBM_THREADS must be a positive integer, got {raw!r}")
    return k


def _run_jobs(fn: Callable, jobs: list) -> list:
    """Run ``fn(*job)`` for each job; results come back in job order."""
    k = min(thread_count(), len(jobs))
    if k <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _with_context(fn: Callable, label: str) -> Callable:
    def wrapped(*args):
        try:
            return fn(*args)
        except Exception as exc:
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"{label} {args}: {exc.args[0]}",) + exc.args[1:]
            raise
    return wrapped


def _edge_label(e: Edge) -> str:
    return f"{e.source}-{e.target}"


def _sample_model(cfg: ExperimentConfig, dag: Dag, rng, arch: ArchSpec = ArchSpec()):
    if cfg.mode == LINEAR:
        return sample_linear_scbm(dag, cfg.d_z, rng, cfg.noise_structure, cfg.noise_strength)
    return sample_nonlinear_scbm(dag, cfg.d_z, arch, rng, cfg.noise_structure, cfg.noise_strength)


def _sample_dag(cfg: ExperimentConfig, rng) -> Dag:
    # graphs without edges have nothing to score; redraw
    for _ in range(1000):
        dag = sample_er_dag(cfg.num_nodes, cfg.edge_prob, cfg.d_x, rng)
        if dag.edges:
            return dag
    raise ConfigError(f"no edges in 1000 draws with num_nodes={cfg.num_nodes}, edge_prob={cfg.edge_prob}")


# identifiability


def _identifiability_job(cfg: ExperimentConfig, pname: str, value, k: int, seed: int):
    c = cfg.at(pname, value)
    d_hat = c.d_z if c.d_hat is None else c.d_hat
    mrng = stream(seed, MODEL)
    dag = _sample_dag(c, mrng)
    scbm = _sample_model(c, dag, mrng)
    data = sample_dataset(scbm, c.n, stream(seed, DATA))
    ev = sample_dataset(scbm, c.n_eval, stream(seed, EVAL))
    est = estimate_all(data, dag, d_hat, c.mode, c.estimator, stream(seed, ESTIMATE))
    scores, mean = model_identifiability(scbm, est, ev, c.mode, rng=stream(seed, SCORE))
    rows = [Row(c.experiment, pname, value, seed, _edge_label(e), "score", s) for e, s in sorted(scores.items())]
    rows.append(Row(c.experiment, pname, value, seed, MODEL_ROW, "score", mean))
    clouds = {}
    if c.clouds and k == 0 and seed == c.seeds[0]:
        for e in dag.edges:
            X = ev[e.source][:CLOUD_ROWS]
            clouds[f"clouds/edge_{e.source}_{e.target}.csv"] = clouds_to_csv(
                bottleneck_values(scbm, e, X), apply_bottleneck(est.estimates[e], X)
            )
    return rows, clouds


def run_identifiability(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.experiment != IDENTIFIABILITY:
        raise ConfigError(f"expected an identifiability config, got {cfg.experiment!r}")
    pname, values = cfg.sweep()
    jobs = [(cfg, pname, v, k, s) for k, v in enumerate(values) for s in cfg.seeds]
    results = _run_jobs(_with_context(_identifiability_job, cfg.experiment), jobs)
    rows, files = [], {}
    for r, f in results:
        rows += r
        files.update(f)
    return ExperimentReport(cfg.experiment, rows, cfg.to_dict(), files)


# misspecification


def _misspec_job(cfg: ExperimentConfig, seed: int):
    mrng = stream(seed, MODEL)
    dag = Dag(2, [(0, 1)], cfg.d_x)
    edge = Edge(0, 1)
    scbm = _sample_model(cfg, dag, mrng)
    data = sample_dataset(scbm, cfg.n, stream(seed, DATA))
    ev = sample_dataset(scbm, cfg.n_eval, stream(seed, EVAL))
    z = bottleneck_values(scbm, edge, ev[0])
    d_hats = cfg.d_hat if isinstance(cfg.d_hat, tuple) else (cfg.d_z if cfg.d_hat is None else cfg.d_hat,)
    rows = []
    for k, d_hat in enumerate(d_hats):
        est = estimate_edge(data, edge, None, d_hat, cfg.mode, cfg.estimator, stream(seed, ESTIMATE, k))
        score = identifiability_score(z, apply_bottleneck(est, ev[0]), cfg.mode, rng=stream(seed, SCORE, k))
        rows.append(Row(cfg.experiment, "d_hat", d_hat, seed, MODEL_ROW, "score", score))
    return rows


def run_misspecification(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.experiment != MISSPECIFICATION:
        raise ConfigError(f"expected a misspecification config, got {cfg.experiment!r}")
    results = _run_jobs(_with_context(_misspec_job, cfg.experiment), [(cfg, s) for s in cfg.seeds])
    rows = [r for rs in results for r in rs]
    # group by d_hat, then seed
    rows.sort(key=lambda r: (r.value, cfg.seeds.index(r.seed)))
    return ExperimentReport(cfg.experiment, rows, cfg.to_dict())


# transfer

# node roles: 0 is the treatment X1, 1 the outcome X2, 2 the confounder X3
TREATMENT, OUTCOME, CONFOUNDER = 0, 1, 2
TRANSFER_EDGES = [(CONFOUNDER, TREATMENT), (CONFOUNDER, OUTCOME), (TREATMENT, OUTCOME)]
ARMS = ("raw", "bottleneck", "oracle")


def transfer_model(cfg: ExperimentConfig, rng):
    dag = Dag(3, TRANSFER_EDGES, cfg.d_x)
    scbm = _sample_model(cfg, dag, rng, TRANSFER_ARCH)
    if cfg.intrinsic_confounder:
        scbm = share_source_bottlenecks(scbm, CONFOUNDER)
    return scbm


def _centered(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0)


def _transfer_job(cfg: ExperimentConfig, pname: str, value, seed: int):
    c = cfg.at(pname, value)
    scbm = transfer_model(c, stream(seed, MODEL))
    target = Edge(TREATMENT, OUTCOME)
    # stage 1: bottleneck of the confounder from an environment without the outcome
    env = sample_dataset(scbm, c.n_bottleneck, stream(seed, DATA)).restrict([TREATMENT, CONFOUNDER])
    stage1 = estimate_edge(env, (CONFOUNDER, TREATMENT), None, c.d_z, c.mode, c.estimator, stream(seed, ESTIMATE))
    n_joint = c.n_joint if isinstance(c.n_joint, tuple) else (c.n_joint,)
    pool = sample_dataset(scbm, max(n_joint), stream(seed, JOINT))
    X_test = sample_dataset(scbm, c.n_test, stream(seed, TEST))[TREATMENT]
    truth = _centered(mechanism_oracle(scbm, target, X_test))
    rows = []
    for k, nj in enumerate(n_joint):
        sub = pool.rows(slice(0, nj))
        X3 = sub[CONFOUNDER]
        conds = {
            "raw": X3,
            "bottleneck": apply_bottleneck(stage1, X3),
            "oracle": bottleneck_values(scbm, (CONFOUNDER, TREATMENT), X3),
        }
        if pname == "none":
            sp, sv = "n_joint", nj
        else:
            sp, sv = f"{pname}/n_joint", f"{value}/{nj}"
        for a, arm in enumerate(ARMS):
            with warnings.catch_warnings():
                # the raw arm has more regressors than samples at small n_joint
                warnings.simplefilter("ignore", IllConditionedWarning)
                est = estimate_edge(sub, target, conds[arm], c.d_z, c.mode, c.estimator, stream(seed, ESTIMATE, k, a))
            if c.mode == LINEAR:
                # the unconstrained coefficient block, before rank splitting
                pred = lambda X, est=est: _centered(X @ est.joint_map)
            else:
                pred = lambda X, est=est: _centered(est.predict(X))
            mae = effect_mae(pred, lambda X: truth, X_test)
            rows.append(Row(c.experiment, sp, sv, seed, MODEL_ROW, f"mae_{arm}", mae))
            rows.append(Row(c.experiment, sp, sv, seed, MODEL_ROW, f"regressor_dim_{arm}", float(est.diagnostics["regressor_dim"])))
        dims = {r.metric: r.score for r in rows[-2 * len(ARMS):] if r.metric.startswith("regressor_dim")}
        if dims["regressor_dim_raw"] != 2 * c.d_x or dims["regressor_dim_bottleneck"] != c.d_x + c.d_z:
            raise AssertionError(f"unexpected regression dimensions {dims}")
    return rows


def run_transfer(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.experiment != TRANSFER:
        raise ConfigError(f"expected a transfer config, got {cfg.experiment!r}")
    pname, values = cfg.sweep()
    jobs = [(cfg, pname, v, s) for v in values for s in cfg.seeds]
    results = _run_jobs(_with_context(_transfer_job, cfg.experiment), jobs)
    rows = [r for rs in results for r in rs]
    order = {s: i for i, s in enumerate(cfg.seeds)}
    # group by sweep point, then seed; stable sort keeps the metric order
    point = {}
    for r in rows:
        point.setdefault(str(r.value), len(point))
    rows.sort(key=lambda r: (point[str(r.value)], order[r.seed]))
    return ExperimentReport(cfg.experiment, rows, cfg.to_dict())


# rank collapse


def product_rank(size: int, depth: int, rng, orthogonal: bool, rel_tol: float = 1e-8) -> int:
    M = np.eye(size)
    for _ in range(depth):
        W = rng.uniform(0.0, 1.0, size=(size, size))
        M = M @ (orthogonalize(W) if orthogonal else W)
    return numerical_rank(M, rel_tol)


def _rank_job(cfg: ExperimentConfig, seed: int):
    rows = []
    for size in cfg.sizes:
        for depth in cfg.depths:
            for orth in (False, True):
                # plain and orthogonalized products share their raw factors
                r = product_rank(size, depth, stream(seed, size, depth), orth, cfg.rank_tol)
                metric = f"rank_size{size}_{'qr' if orth else 'plain'}"
                rows.append(Row(cfg.experiment, "depth", depth, seed, MODEL_ROW, metric, float(r)))
    return rows


def rank_table(cfg: ExperimentConfig, rows: list[Row]) -> str:
    lines = ["depth,size,orthogonalized,mean_rank,min_rank,max_rank,full_rank_fraction,rank1_fraction"]
    for size in cfg.sizes:
        for depth in cfg.depths:
            for orth in (False, True):
                metric = f"rank_size{size}_{'qr' if orth else 'plain'}"
                rs = np.array([r.score for r in rows if r.metric == metric and r.value == depth])
                lines.append(
                    f"{depth},{size},{int(orth)},{float(rs.mean())!r},{int(rs.min())},{int(rs.max())},"
                    f"{float(np.mean(rs == size))!r},{float(np.mean(rs == 1))!r}"
                )
    return "\n".join(lines) + "\n"


def run_rank_collapse(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.experiment != RANK_COLLAPSE:
        raise ConfigError(f"expected a rank_collapse config, got {cfg.experiment!r}")
    results = _run_jobs(_with_context(_rank_job, cfg.experiment), [(cfg, s) for s in cfg.seeds])
    rows = [r for rs in results for r in rs]
    order = {s: i for i, s in enumerate(cfg.seeds)}
    rows.sort(key=lambda r: (r.value, order[r.seed]))
    return ExperimentReport(cfg.experiment, rows, cfg.to_dict(), {"rank_table.csv": rank_table(cfg, rows)})


RUNNERS = {
    IDENTIFIABILITY: run_identifiability,
    MISSPECIFICATION: run_misspecification,
    TRANSFER: run_transfer,
    RANK_COLLAPSE: run_rank_collapse,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg)
