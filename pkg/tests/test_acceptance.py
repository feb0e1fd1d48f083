"""Acceptance checks, one per criterion, each at its stated tolerance.

Run with pytest (the lines are printed in the terminal summary) or directly:
``python3 tests/test_acceptance.py``.
"""

import functools
import json
import time

import numpy as np
import pytest

from scbm.estimate import apply_bottleneck, estimate_edge, identifiability_score
from scbm.gaussinfo import ib_constraint_report
from scbm.graph import Dag, sample_er_dag
from scbm.harness.config import IDENTIFIABILITY, MISSPECIFICATION, RANK_COLLAPSE, TRANSFER, config_from_dict
from scbm.harness.experiments import run_experiment
from scbm.linalg import pinv
from scbm.mlp import PAPER_ID_TRAIN, forward, grad, init_net, mse
from scbm.synth import (
    NONLINEAR,
    Dataset,
    mechanism_oracle,
    reparameterize,
    sample_linear_scbm,
)

RESULTS: dict[int, tuple[bool, str]] = {}


@functools.lru_cache(maxsize=None)
def _run(config_json: str):
    t0 = time.perf_counter()
    rep = run_experiment(config_from_dict(json.loads(config_json)))
    return rep, time.perf_counter() - t0


def run(**cfg):
    return _run(json.dumps(cfg, sort_keys=True))


def record(k: int, ok: bool, detail: str) -> bool:
    RESULTS[k] = (bool(ok), detail)
    return bool(ok)


def criterion_1():
    rep, secs = run(experiment=IDENTIFIABILITY)
    s = rep.lookup("score")
    mean, std = float(np.mean(s)), float(np.std(s, ddof=1))
    return record(1, len(s) == 10 and mean >= 0.95 and std <= 0.05,
                  f"linear identifiability mean {mean:.4f} (>= 0.95), std {std:.4f} (<= 0.05), {secs:.0f}s")


def criterion_2():
    rep, _ = run(experiment=IDENTIFIABILITY, n=[10000, 30000])
    a, b = rep.mean("score", 10000), rep.mean("score", 30000)
    return record(2, abs(a - b) <= 0.02, f"score n=10000 {a:.4f} vs n=30000 {b:.4f}, gap {abs(a - b):.4f} (<= 0.02)")


def criterion_3():
    rep, secs = run(experiment=MISSPECIFICATION)
    s = {d: rep.mean("score", d) for d in range(1, 51)}
    rising = all(s[d + 1] >= s[d] - 0.02 for d in range(1, 10))
    flat = all(abs(s[d] - s[10]) <= 0.02 for d in range(10, 51))
    gap = s[1] < s[10] - 0.05
    return record(3, rising and flat and gap,
                  f"d_hat=1 {s[1]:.4f}, d_hat=10 {s[10]:.4f}, d_hat=50 {s[50]:.4f}; "
                  f"rising {rising}, flat {flat}, gap {gap}; {secs:.0f}s")


def criterion_4():
    rep, secs = run(experiment=TRANSFER)
    wins = {}
    for nj in (50, 100):
        raw, bott = rep.lookup("mae_raw", nj), rep.lookup("mae_bottleneck", nj)
        wins[nj] = sum(b < r for r, b in zip(raw, bott))
    raw, bott = rep.mean("mae_raw", 5000), rep.mean("mae_bottleneck", 5000)
    rel = abs(bott - raw) / raw
    ok = wins[50] >= 9 and wins[100] >= 9 and rel <= 0.10
    return record(4, ok, f"bottleneck wins {wins[50]}/10 at n_joint=50, {wins[100]}/10 at 100 (>= 9); "
                         f"n_joint=5000 relative gap {rel:.3f} (<= 0.10); {secs:.0f}s")


def criterion_5():
    rep, secs = run(experiment=RANK_COLLAPSE, sizes=[50], depths=[3, 6], seeds=list(range(100)))
    plain = rep.lookup("rank_size50_plain", 3)
    qr = rep.lookup("rank_size50_qr", 6)
    rank1 = sum(r == 1 for r in plain)
    full = sum(r == 50 for r in qr)
    return record(5, rank1 == 100 and full == 100 and secs < 10,
                  f"depth-3 uniform products of rank 1: {rank1}/100 (ranks {int(min(plain))}..{int(max(plain))}); "
                  f"depth-6 orthogonalized full rank: {full}/100; {secs:.1f}s")


def criterion_6():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dag = sample_er_dag(5, 0.6, 4, rng)
        m = sample_linear_scbm(dag, 2, rng)
        psi = {}
        for e in dag.edges:
            P = rng.standard_normal((2, 2))
            while np.linalg.cond(P) > 1e3:
                P = rng.standard_normal((2, 2))
            psi[e] = P
        m2 = reparameterize(m, psi)
        for e in dag.edges:
            X = rng.standard_normal((30, 4))
            a, b = mechanism_oracle(m, e, X), mechanism_oracle(m2, e, X)
            worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(a))
    return record(6, worst <= 1e-10, f"worst relative mechanism change {worst:.2e} over 100 models (<= 1e-10)")


def criterion_7():
    worst_map, worst_score = 0.0, 1.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = sample_linear_scbm(Dag(2, [(0, 1)], 6), 2, rng)
        f = m.functions[(0, 1)]
        X = rng.standard_normal((2000, 6))
        est = estimate_edge(Dataset({0: X, 1: X @ f.joint_map}), (0, 1), None, 2)
        worst_map = max(worst_map, np.abs(est.bottleneck @ est.effect - f.joint_map).max())
        worst_score = min(worst_score, identifiability_score(X @ f.bottleneck, apply_bottleneck(est, X)))
    return record(7, worst_map <= 1e-8 and worst_score >= 0.999,
                  f"max |BF - B^F^| {worst_map:.2e} (<= 1e-8), min score {worst_score:.6f} (>= 0.999)")


def _penrose(M, P):
    errs = [M @ P @ M - M, P @ M @ P - P, (M @ P).T - M @ P, (P @ M).T - P @ M]
    refs = [M, P, M @ P, P @ M]
    return max(np.linalg.norm(e) / max(np.linalg.norm(r), 1e-300) for e, r in zip(errs, refs))


def _fd_error(seed):
    rng = np.random.default_rng(seed)
    dims = list(rng.integers(1, 6, size=rng.integers(2, 5)))
    net = init_net(dims, "swish", rng=rng)
    net.biases = [0.1 * rng.standard_normal(b.shape) for b in net.biases]
    X, Y = rng.standard_normal((8, dims[0])), rng.standard_normal((8, dims[-1]))
    worst = 0.0
    for p, g in zip(net.params(), grad(net, X, Y)):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-5
            up = mse(forward(net, X), Y)
            p[idx] = old - 1e-5
            num[idx] = (up - mse(forward(net, X), Y)) / 2e-5
            p[idx] = old
        worst = max(worst, np.abs(num - g).max() / max(np.abs(num).max(), np.abs(g).max(), 1e-3))
    return worst


def criterion_8():
    rng = np.random.default_rng(0)
    penrose = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 12, size=2)
        r = rng.integers(1, min(m, n) + 1)
        M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
        penrose = max(penrose, _penrose(M, pinv(M)))
    fd = max(_fd_error(s) for s in range(50))
    s = PAPER_ID_TRAIN.schedule
    sched = s(1000) == 1e-5 and s(11000) == 1e-7
    return record(8, penrose <= 1e-10 and fd <= 1e-4 and sched,
                  f"Penrose {penrose:.2e} (<= 1e-10), gradient vs differences {fd:.2e} (<= 1e-4), "
                  f"lr(1000)={s(1000)!r}, lr(11000)={s(11000)!r}")


def criterion_9():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        dag = sample_er_dag(int(rng.integers(2, 7)), 0.6, int(rng.integers(2, 6)), rng)
        m = sample_linear_scbm(dag, 1, rng)
        for r in ib_constraint_report(m).values():
            worst = max(worst, r["relative_residual"])
    control = sample_linear_scbm(Dag(3, [(0, 1), (1, 2)], 4), 2, rng=0)
    neg = ib_constraint_report(control, omit=[(0, 1)])[0]["relative_residual"]
    return record(9, worst <= 1e-8 and neg > 0.01,
                  f"worst residual {worst:.2e} over 50 models (<= 1e-8), negative control {neg:.3f} (> 0.01)")


def criterion_10():
    rep, secs = run(experiment=IDENTIFIABILITY, mode=NONLINEAR)
    mean = rep.mean("score")
    return record(10, mean >= 0.8, f"nonlinear 3-node mean score {mean:.4f} (>= 0.8), seeds {sorted({r.seed for r in rep.rows})}, {secs:.0f}s")


def criterion_11():
    configs = [
        dict(experiment=IDENTIFIABILITY, seeds=[0, 1]),
        dict(experiment=TRANSFER, seeds=[0], n_joint=[50, 5000]),
        dict(experiment=RANK_COLLAPSE, seeds=[0, 1, 2]),
        dict(experiment=MISSPECIFICATION, seeds=[0], d_hat=[1, 5, 10]),
    ]
    same = []
    for c in configs:
        a = run_experiment(config_from_dict(c)).raw_csv().encode()
        b = run_experiment(config_from_dict(c)).raw_csv().encode()
        same.append(a == b)
    return record(11, all(same), f"identical raw CSV on rerun for {sum(same)}/{len(same)} experiments")


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    assert CRITERIA[k](), RESULTS[k][1]


def summary_lines() -> list[str]:
    return [f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}" for k, (ok, detail) in sorted(RESULTS.items())]


if __name__ == "__main__":
    for k, fn in CRITERIA.items():
        try:
            fn()
        except Exception as exc:  # noqa: BLE001
            record(k, False, f"raised {type(exc).__name__}: {exc}")
        ok, detail = RESULTS[k]
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    print(f"{sum(ok for ok, _ in RESULTS.values())}/{len(CRITERIA)} criteria pass")
