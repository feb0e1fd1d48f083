"""Estimating bottleneck and effect functions edge by edge.

Each edge ``i -> j`` is fitted as a regression of ``X_j`` on ``X_i`` while
adjusting for previously estimated bottlenecks (see
:func:`scbm.graph.conditioning_set`). In linear mode the coefficient block of
``X_i`` is split into a rank-``d_hat`` product; in nonlinear mode an
encoder-decoder with a ``d_hat``-wide code is trained instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import Dag, Edge, conditioning_set, estimation_schedule
from .linalg import IllConditionedWarning, ols_fit, r2_score, rank_factorize
from .mlp import (
    AdamW,
    CosineWarmup,
    NeuralNet,
    TrainConfig,
    forward,
    init_net,
    train,
    PAPER_ID_TRAIN,
)
from .synth import LINEAR, NONLINEAR, Dataset, Scbm, bottleneck_values

MODES = (LINEAR, NONLINEAR)


@dataclass(frozen=True)
class EstimatorConfig:
    """Encoder-decoder shape and training budget for nonlinear estimation."""

    encoder_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (32, 64)
    activation: str = "swish"
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=60, batch_size=256, optimizer=AdamW(weight_decay=1e-4),
            schedule=CosineWarmup(3e-3, 1e-5, 200, 2000),
        )
    )

    def to_dict(self) -> dict:
        return {
            "encoder_hidden": list(self.encoder_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "activation": self.activation,
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimatorConfig":
        obj = dict(obj)
        unknown = set(obj) - {"encoder_hidden", "decoder_hidden", "activation", "train"}
        if unknown:
            raise ValueError(f"unknown estimator keys: {sorted(unknown)}")
        kwargs = {}
        for k in ("encoder_hidden", "decoder_hidden"):
            if k in obj:
                kwargs[k] = tuple(int(v) for v in obj[k])
        if "activation" in obj:
            kwargs["activation"] = obj["activation"]
        if "train" in obj:
            kwargs["train"] = TrainConfig.from_dict(obj["train"])
        return cls(**kwargs)


PAPER_ID_ESTIMATOR = EstimatorConfig((256, 128, 64, 64, 32), (32, 64, 64, 128, 256), "swish", PAPER_ID_TRAIN)

# fixed regressor used only for scoring nonlinear bottlenecks
SCORE_REGRESSOR = EstimatorConfig(
    encoder_hidden=(64, 64),
    decoder_hidden=(),
    train=TrainConfig(
        epochs=40, batch_size=256, optimizer=AdamW(weight_decay=0.0),
        schedule=CosineWarmup(3e-3, 1e-5, 100, 1500),
    ),
)


@dataclass(frozen=True)
class _Affine:
    """Per-column standardization ``(x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "_Affine":
        s = X.std(axis=0)
        s[s == 0] = 1.0
        return cls(X.mean(axis=0), s)

    def __call__(self, X):
        return (X - self.shift) / self.scale

    def inverse(self, X):
        return X * self.scale + self.shift


@dataclass
class EdgeEstimate:
    edge: Edge
    d_hat: int
    kind: str
    bottleneck: np.ndarray | NeuralNet
    effect: np.ndarray | NeuralNet
    cond_set: tuple[Edge, ...] = ()
    joint_map: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    # nonlinear only: input/conditioning/output standardization
    in_norm: _Affine | None = None
    cond_norm: _Affine | None = None
    out_norm: _Affine | None = None

    @property
    def in_dim(self) -> int:
        return self.bottleneck.shape[0] if self.kind == LINEAR else self.bottleneck.in_dim

    @property
    def out_dim(self) -> int:
        return self.effect.shape[1] if self.kind == LINEAR else self.effect.out_dim

    def predict(self, source_block, cond_values=None) -> np.ndarray:
        """Estimated direct effect of the source on the target.

        Nonlinear estimates hold the conditioning at its training mean when
        ``cond_values`` is omitted.
        """
        return apply_effect(self, apply_bottleneck(self, source_block), cond_values)


@dataclass
class EstimatedScbm:
    dag: Dag
    estimates: dict[Edge, EdgeEstimate]
    mode: str


def _cond_dim(cond_values, n: int) -> np.ndarray:
    if cond_values is None:
        return np.zeros((n, 0))
    C = np.asarray(cond_values, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if C.shape[0] != n:
        raise ValueError(f"cond_values has {C.shape[0]} rows, data has {n}")
    return C


def estimate_edge(
    data: Dataset,
    edge,
    cond_values,
    d_hat: int,
    mode: str = LINEAR,
    hyper: EstimatorConfig | None = None,
    rng=None,
    cond_set: Sequence[Edge] = (),
) -> EdgeEstimate:
    """Fit the joint map of ``edge`` and split it through a ``d_hat``-dim code."""
    edge = Edge(int(edge[0]), int(edge[1]))
    X = data[edge.source]
    Y = data[edge.target]
    C = _cond_dim(cond_values, data.n)
    d_i, d_j = X.shape[1], Y.shape[1]
    if not 1 <= d_hat <= min(d_i, d_j):
        raise ValueError(f"d_hat={d_hat} outside 1..{min(d_i, d_j)} for edge {edge}")
    if mode == LINEAR:
        return _estimate_linear(edge, X, Y, C, d_hat, tuple(cond_set))
    if mode == NONLINEAR:
        return _estimate_nonlinear(edge, X, Y, C, d_hat, hyper or EstimatorConfig(), rng, tuple(cond_set))
    raise ValueError(f"unknown mode {mode!r}")


def _estimate_linear(edge, X, Y, C, d_hat, cond_set) -> EdgeEstimate:
    d_i = X.shape[1]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IllConditionedWarning)
        fit = ols_fit(np.hstack([X, C]), Y)
    for w in caught:
        warnings.warn(f"edge {edge}: {w.message}", IllConditionedWarning, stacklevel=3)
    M = fit.coef[:d_i]
    fac = rank_factorize(M, d_hat)
    diag = {
        "residual": fac.residual,
        "relative_residual": fac.residual / max(np.linalg.norm(M), 1e-300),
        "regressor_dim": X.shape[1] + C.shape[1],
        "n": X.shape[0],
        "rank_deficient": fit.rank_deficient,
        "columns": list(fac.columns),
    }
    return EdgeEstimate(edge, d_hat, LINEAR, fac.left, fac.right, cond_set, M, diag)


def _estimate_nonlinear(edge, X, Y, C, d_hat, hyper: EstimatorConfig, rng, cond_set) -> EdgeEstimate:
    rng = np.random.default_rng(rng)
    in_norm, out_norm = _Affine.fit(X), _Affine.fit(Y)
    cond_norm = _Affine.fit(C) if C.shape[1] else None
    enc = init_net([X.shape[1], *hyper.encoder_hidden, d_hat], hyper.activation, rng=rng)
    dec = init_net([d_hat + C.shape[1], *hyper.decoder_hidden, Y.shape[1]], hyper.activation, rng=rng)
    cfg = replace(hyper.train, seed=int(rng.integers(2**63)))
    res = train(enc, in_norm(X), out_norm(Y), cfg, decoder=dec,
                cond_inputs=cond_norm(C) if cond_norm else None)
    diag = {
        "final_loss": res.losses[-1],
        "initial_loss": res.losses[0],
        "steps": res.steps,
        "regressor_dim": X.shape[1] + C.shape[1],
        "n": X.shape[0],
    }
    return EdgeEstimate(edge, d_hat, NONLINEAR, res.encoder, res.decoder, cond_set, None, diag,
                        in_norm, cond_norm, out_norm)


def apply_bottleneck(est: EdgeEstimate, source_block) -> np.ndarray:
    X = np.asarray(source_block, dtype=float)
    if X.ndim != 2 or X.shape[1] != est.in_dim:
        raise ValueError(f"edge {est.edge} takes (n, {est.in_dim}) inputs, got {X.shape}")
    if est.kind == LINEAR:
        return X @ est.bottleneck
    return forward(est.bottleneck, est.in_norm(X))


def apply_effect(est: EdgeEstimate, z, cond_values=None) -> np.ndarray:
    Z = np.asarray(z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != est.d_hat:
        raise ValueError(f"edge {est.edge} effect takes (n, {est.d_hat}) inputs, got {Z.shape}")
    if est.kind == LINEAR:
        return Z @ est.effect
    if est.cond_norm is not None:
        if cond_values is None:
            Cn = np.zeros((Z.shape[0], est.cond_norm.shift.shape[0]))
        else:
            Cn = est.cond_norm(_cond_dim(cond_values, Z.shape[0]))
        Z = np.hstack([Z, Cn])
    return est.out_norm.inverse(forward(est.effect, Z))


def cond_values_for(estimates: Mapping[Edge, EdgeEstimate], cond_set: Sequence[Edge], data: Dataset) -> np.ndarray:
    """Stack the estimated bottlenecks of ``cond_set`` evaluated on ``data``."""
    parts = [apply_bottleneck(estimates[c], data[c.source]) for c in cond_set]
    return np.hstack(parts) if parts else np.zeros((data.n, 0))


def estimate_all(
    data: Dataset,
    dag: Dag,
    d_hat: int,
    mode: str = LINEAR,
    hyper: EstimatorConfig | None = None,
    rng=None,
    d_hat_per_edge: Mapping[Edge, int] | None = None,
) -> EstimatedScbm:
    """Estimate every edge along :func:`scbm.graph.estimation_schedule`,
    conditioning each fit on bottlenecks estimated earlier."""
    missing = [i for i in dag.nodes if i not in data.blocks]
    if missing:
        raise ValueError(f"nodes {missing} are not observed")
    rng = np.random.default_rng(rng)
    overrides = {Edge(*e): int(v) for e, v in (d_hat_per_edge or {}).items()}
    estimates: dict[Edge, EdgeEstimate] = {}
    for edge in estimation_schedule(dag):
        cond = conditioning_set(dag, edge)
        try:
            C = cond_values_for(estimates, cond, data)
            estimates[edge] = estimate_edge(
                data, edge, C, overrides.get(edge, d_hat), mode, hyper, rng, cond
            )
        except Exception as exc:
            exc.edge = edge
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"edge {edge}: {exc.args[0]}",) + exc.args[1:]
            raise
    return EstimatedScbm(dag, estimates, mode)


def _fit_predict(A_train, B_train, A_test, mode, hyper, rng):
    if mode == LINEAR:
        coef = ols_fit(A_train, B_train).coef
        return (A_test - A_train.mean(axis=0)) @ coef + B_train.mean(axis=0)
    hyper = hyper or SCORE_REGRESSOR
    rng = np.random.default_rng(rng)
    a_norm, b_norm = _Affine.fit(A_train), _Affine.fit(B_train)
    net = init_net([A_train.shape[1], *hyper.encoder_hidden, *hyper.decoder_hidden, B_train.shape[1]],
                   hyper.activation, rng=rng)
    cfg = replace(hyper.train, seed=int(rng.integers(2**63)))
    res = train(net, a_norm(A_train), b_norm(B_train), cfg)
    return b_norm.inverse(forward(res.encoder, a_norm(A_test)))


def identifiability_score(
    z_true,
    z_hat,
    mode: str = LINEAR,
    hyper: EstimatorConfig | None = None,
    rng=None,
    train_frac: float = 0.8,
) -> float:
    """Mean of the held-out average R² of regressing ``z_hat`` on ``z_true``
    and ``z_true`` on ``z_hat``. Rows are split in order: the first
    ``train_frac`` for fitting, the rest for scoring."""
    Zt = np.asarray(z_true, dtype=float)
    Zh = np.asarray(z_hat, dtype=float)
    Zt = Zt[:, None] if Zt.ndim == 1 else Zt
    Zh = Zh[:, None] if Zh.ndim == 1 else Zh
    if Zt.shape[0] != Zh.shape[0]:
        raise ValueError(f"row mismatch: {Zt.shape[0]} vs {Zh.shape[0]}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(rng)
    cut = int(round(train_frac * Zt.shape[0]))
    if cut < 2 or Zt.shape[0] - cut < 2:
        raise ValueError("not enough rows for a train/held-out split")
    scores = []
    for A, B in ((Zt, Zh), (Zh, Zt)):
        pred = _fit_predict(A[:cut], B[:cut], A[cut:], mode, hyper, rng)
        scores.append(r2_score(B[cut:], pred)[1])
    return float(np.mean(scores))


def model_identifiability(
    scbm_truth: Scbm,
    est: EstimatedScbm,
    eval_data: Dataset,
    mode: str | None = None,
    hyper: EstimatorConfig | None = None,
    rng=None,
) -> tuple[dict[Edge, float], float]:
    """Per-edge identifiability scores and their unweighted mean over edges."""
    mode = mode or est.mode
    rng = np.random.default_rng(rng)
    missing = set(scbm_truth.dag.edges) - set(est.estimates)
    if missing:
        raise ValueError(f"no estimate for edges {sorted(missing)}")
    scores = {}
    for edge in scbm_truth.dag.edges:
        X = eval_data[edge.source]
        z = bottleneck_values(scbm_truth, edge, X)
        z_hat = apply_bottleneck(est.estimates[edge], X)
        scores[edge] = identifiability_score(z, z_hat, mode, hyper, rng)
    mean = float(np.mean(list(scores.values()))) if scores else float("nan")
    return scores, mean


def effect_mae(est_map: Callable[[np.ndarray], np.ndarray], truth_oracle: Callable[[np.ndarray], np.ndarray], test_inputs) -> float:
    X = np.asarray(test_inputs, dtype=float)
    a = np.asarray(est_map(X), dtype=float)
    b = np.asarray(truth_oracle(X), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"predictors disagree on output shape: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))
