import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbm.estimate import (
    LINEAR,
    NONLINEAR,
    EstimatorConfig,
    apply_bottleneck,
    effect_mae,
    estimate_all,
    estimate_edge,
    identifiability_score,
    model_identifiability,
)
from scbm.graph import Dag, Edge, estimation_schedule
from scbm.mlp import CosineWarmup, TrainConfig
from scbm.synth import Dataset, mechanism_oracle, sample_dataset, sample_linear_scbm

FAST = EstimatorConfig((16,), (16,), "swish", TrainConfig(15, 128, schedule=CosineWarmup(3e-3, 1e-5, 20, 300)))


def test_noiseless_single_edge_recovery():
    rng = np.random.default_rng(0)
    m = sample_linear_scbm(Dag(2, [(0, 1)], 5), 2, rng)
    X = rng.standard_normal((2000, 5))
    M = m.functions[(0, 1)].joint_map
    data = Dataset({0: X, 1: X @ M})
    est = estimate_edge(data, (0, 1), None, 2)
    assert np.abs(est.bottleneck @ est.effect - M).max() <= 1e-8
    assert est.diagnostics["relative_residual"] <= 1e-8
    z = X @ m.functions[(0, 1)].bottleneck
    assert identifiability_score(z, apply_bottleneck(est, X)) >= 0.999


def test_estimate_edge_validation():
    d = Dataset({0: np.zeros((10, 3)), 1: np.zeros((10, 2))})
    with pytest.raises(ValueError):
        estimate_edge(d, (0, 1), None, 3)
    with pytest.raises(ValueError):
        estimate_edge(d, (0, 1), None, 0)
    with pytest.raises(ValueError):
        estimate_edge(d, (0, 1), None, 1, mode="cubic")
    with pytest.raises(ValueError):
        estimate_edge(d, (0, 1), np.zeros((9, 1)), 1)


def test_estimate_all_follows_schedule():
    rng = np.random.default_rng(1)
    dag = Dag(3, [(0, 1), (0, 2), (1, 2)], 4)
    m = sample_linear_scbm(dag, 2, rng)
    d = sample_dataset(m, 5000, rng)
    est = estimate_all(d, dag, 2)
    assert list(est.estimates) == estimation_schedule(dag)
    assert est.estimates[Edge(0, 2)].cond_set == (Edge(1, 2),)
    assert est.estimates[Edge(0, 2)].diagnostics["regressor_dim"] == 6
    scores, mean = model_identifiability(m, est, sample_dataset(m, 5000, rng))
    assert set(scores) == set(dag.edges) and mean >= 0.95


def test_estimate_all_annotates_failing_edge():
    dag = Dag(2, [(0, 1)], [3, 1])
    d = Dataset({0: np.ones((10, 3)), 1: np.ones((10, 1))})
    with pytest.raises(ValueError) as info:
        estimate_all(d, dag, 2)
    assert info.value.edge == Edge(0, 1) and "edge" in str(info.value)
    with pytest.raises(ValueError):
        estimate_all(Dataset({0: np.ones((10, 3))}), dag, 1)


def test_identifiability_score_examples():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((1000, 3))
    A = rng.standard_normal((3, 3))
    assert identifiability_score(Z, Z @ A) == pytest.approx(1.0, abs=1e-10)
    noise = rng.standard_normal((1000, 3))
    assert abs(identifiability_score(Z, noise)) <= 0.05
    with pytest.raises(ValueError):
        identifiability_score(Z, Z[:10])
    with pytest.raises(ValueError):
        identifiability_score(Z[:3], Z[:3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_identifiability_score_symmetric_and_bounded(seed, sigma):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((200, 2))
    W = Z @ rng.standard_normal((2, 2)) + sigma * rng.standard_normal((200, 2))
    a, b = identifiability_score(Z, W), identifiability_score(W, Z)
    assert a == pytest.approx(b, abs=1e-12)
    assert a <= 1.0 + 1e-12


def test_nonlinear_estimate_small():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((3000, 4))
    z = np.tanh(X @ rng.standard_normal((4, 1)))
    Y = z @ rng.standard_normal((1, 4))
    d = Dataset({0: X, 1: Y})
    est = estimate_edge(d, (0, 1), None, 1, NONLINEAR, FAST, rng=4)
    assert est.diagnostics["final_loss"] < est.diagnostics["initial_loss"]
    again = estimate_edge(d, (0, 1), None, 1, NONLINEAR, FAST, rng=4)
    assert np.array_equal(apply_bottleneck(est, X), apply_bottleneck(again, X))
    assert est.predict(X).shape == Y.shape
    assert identifiability_score(z, apply_bottleneck(est, X), NONLINEAR, FAST, rng=5) >= 0.8


def test_effect_mae_examples():
    rng = np.random.default_rng(6)
    m = sample_linear_scbm(Dag(2, [(0, 1)], 3), 1, rng)
    X = rng.standard_normal((50, 3))
    oracle = lambda A: mechanism_oracle(m, (0, 1), A)
    assert effect_mae(oracle, oracle, X) == 0.0
    assert effect_mae(lambda A: oracle(A) + 0.5, oracle, X) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        effect_mae(lambda A: A, oracle, X[:, :2])
