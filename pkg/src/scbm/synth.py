"""Ground-truth bottleneck models: construction, sampling and interventions.

Every node ``j`` is generated as ``X_j = sum_i f_ij(b_ij(X_i)) + eta_j`` with
one (bottleneck, effect) pair per edge and zero-mean Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .graph import Dag, Edge, causal_order
from .linalg import numerical_rank
from .mlp import NeuralNet, forward, init_net

LINEAR = "linear"
NONLINEAR = "nonlinear"


@dataclass(frozen=True)
class GaussianNoiseModel:
    """Zero-mean Gaussian given by its precision matrix.

    ``scale`` multiplies every draw; ``scale=0`` turns the noise off.
    """

    precision: np.ndarray
    scale: float = 1.0
    cov_cholesky: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ValueError(f"precision must be square, got {P.shape}")
        if not np.allclose(P, P.T, rtol=1e-12, atol=1e-12 * np.abs(P).max()):
            raise ValueError("precision matrix is not symmetric")
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("precision matrix is not positive definite") from exc
        cov = np.linalg.inv(P)
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "precision", P)
        object.__setattr__(self, "cov_cholesky", np.linalg.cholesky(cov))

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        L = self.cov_cholesky
        return self.scale**2 * (L @ L.T)

    def sample(self, n: int, rng) -> np.ndarray:
        eps = rng.standard_normal((n, self.dim))
        return self.scale * (eps @ self.cov_cholesky.T)


def laplacian(dim: int, structure: str = "chain", rng=None) -> np.ndarray:
    W = np.zeros((dim, dim))
    if structure == "chain":
        for k in range(dim - 1):
            W[k, k + 1] = W[k + 1, k] = 1.0
    elif structure == "dense":
        rng = np.random.default_rng(rng)
        U = np.triu(rng.uniform(0.0, 1.0, size=(dim, dim)), 1)
        W = U + U.T
    else:
        raise ValueError(f"unknown noise structure {structure!r}")
    return np.diag(W.sum(axis=1)) - W


def sample_noise_model(dim: int, structure: str = "chain", strength: float = 0.5, rng=None) -> GaussianNoiseModel:
    """Stationary law of a Langevin diffusion on a Gaussian Markov random field:
    precision ``I + strength * L`` with ``L`` the Laplacian of the neighbour
    structure (unit-weight path for ``"chain"``, random weights for ``"dense"``)."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    return GaussianNoiseModel(np.eye(dim) + strength * laplacian(dim, structure, rng))


@dataclass(frozen=True)
class ArchSpec:
    """Ground-truth network shape for nonlinear mechanisms.

    ``hidden_width=None`` means the width of the observed node the net touches
    (source dim for bottleneck nets, target dim for effect nets).

    ``gain`` multiplies every weight matrix after initialization. Orthogonal
    swish layers at unit gain shrink signals by about half per layer, so the
    default of 2 keeps the mechanism well above the noise floor.
    """

    hidden_layers: int = 2
    hidden_width: int | None = None
    activation: str = "swish"
    orthogonalize: bool = True
    gain: float = 2.0


# Generator for the transfer experiment: deeper rectifier nets, no QR step.
TRANSFER_ARCH = ArchSpec(hidden_layers=4, activation="relu", orthogonalize=False, gain=1.0)


@dataclass(frozen=True)
class EdgeFunctions:
    kind: str
    d_z: int
    bottleneck: np.ndarray | NeuralNet
    effect: np.ndarray | NeuralNet

    def bottleneck_values(self, X: np.ndarray) -> np.ndarray:
        if self.kind == LINEAR:
            return X @ self.bottleneck
        return forward(self.bottleneck, X)

    def effect_values(self, Z: np.ndarray) -> np.ndarray:
        if self.kind == LINEAR:
            return Z @ self.effect
        return forward(self.effect, Z)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.effect_values(self.bottleneck_values(X))

    @property
    def joint_map(self) -> np.ndarray:
        if self.kind != LINEAR:
            raise TypeError("only linear edges have a joint matrix")
        return self.bottleneck @ self.effect

    @property
    def in_dim(self) -> int:
        return self.bottleneck.shape[0] if self.kind == LINEAR else self.bottleneck.in_dim

    @property
    def out_dim(self) -> int:
        return self.effect.shape[1] if self.kind == LINEAR else self.effect.out_dim


@dataclass(frozen=True)
class Scbm:
    dag: Dag
    noise: tuple[GaussianNoiseModel, ...]
    functions: Mapping[Edge, EdgeFunctions]

    def __post_init__(self):
        noise = tuple(self.noise)
        if len(noise) != self.dag.num_nodes:
            raise ValueError(f"need {self.dag.num_nodes} noise models, got {len(noise)}")
        for i, (nm, d) in enumerate(zip(noise, self.dag.node_dims)):
            if nm.dim != d:
                raise ValueError(f"node {i}: noise dim {nm.dim} != node dim {d}")
        funcs = {Edge(*e): f for e, f in self.functions.items()}
        if set(funcs) != set(self.dag.edges):
            raise ValueError("every edge needs exactly one bottleneck/effect pair")
        for (i, j), f in funcs.items():
            if f.in_dim != self.dag.node_dims[i] or f.out_dim != self.dag.node_dims[j]:
                raise ValueError(f"edge ({i}, {j}): functions map {f.in_dim} -> {f.out_dim}")
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "functions", funcs)

    @property
    def kind(self) -> str:
        kinds = {f.kind for f in self.functions.values()}
        if len(kinds) > 1:
            return "mixed"
        return kinds.pop() if kinds else LINEAR

    def with_noise_scale(self, scale: float) -> "Scbm":
        return replace(self, noise=tuple(replace(nm, scale=scale) for nm in self.noise))

    def with_functions(self, functions: Mapping[Edge, EdgeFunctions]) -> "Scbm":
        return replace(self, functions=dict(functions))


def _random_full_rank(shape, rank: int, rng) -> np.ndarray:
    while True:
        M = rng.uniform(0.0, 1.0, size=shape)
        if numerical_rank(M, 1e-10) == rank:
            return M


def _default_noise(dag: Dag, rng, structure: str, strength: float):
    return tuple(sample_noise_model(d, structure, strength, rng) for d in dag.node_dims)


def _check_dz(dag: Dag, d_z: int) -> None:
    if d_z < 1:
        raise ValueError(f"d_z must be >= 1, got {d_z}")
    for i, j in dag.edges:
        if d_z > min(dag.node_dims[i], dag.node_dims[j]):
            raise ValueError(
                f"d_z={d_z} exceeds min(d_X({i})={dag.node_dims[i]}, d_X({j})={dag.node_dims[j]})"
            )


def sample_linear_scbm(dag: Dag, d_z: int, rng=None, noise_structure: str = "chain", noise_strength: float = 0.5) -> Scbm:
    """Uniform[0, 1] bottleneck and effect matrices of full rank ``d_z`` per edge."""
    _check_dz(dag, d_z)
    rng = np.random.default_rng(rng)
    noise = _default_noise(dag, rng, noise_structure, noise_strength)
    funcs = {}
    for i, j in dag.edges:
        B = _random_full_rank((dag.node_dims[i], d_z), d_z, rng)
        F = _random_full_rank((d_z, dag.node_dims[j]), d_z, rng)
        funcs[Edge(i, j)] = EdgeFunctions(LINEAR, d_z, B, F)
    return Scbm(dag, noise, funcs)


def sample_nonlinear_scbm(
    dag: Dag,
    d_z: int,
    arch: ArchSpec = ArchSpec(),
    rng=None,
    noise_structure: str = "chain",
    noise_strength: float = 0.5,
) -> Scbm:
    """Independently drawn bottleneck and effect networks per edge."""
    _check_dz(dag, d_z)
    if arch.hidden_layers < 0 or (arch.hidden_width is not None and arch.hidden_width < 1) or arch.gain <= 0:
        raise ValueError(f"invalid architecture {arch}")
    rng = np.random.default_rng(rng)
    noise = _default_noise(dag, rng, noise_structure, noise_strength)
    funcs = {}
    for i, j in dag.edges:
        d_i, d_j = dag.node_dims[i], dag.node_dims[j]
        w_b = arch.hidden_width or d_i
        w_f = arch.hidden_width or d_j
        b = init_net([d_i] + [w_b] * arch.hidden_layers + [d_z], arch.activation, arch.orthogonalize, rng, "ground_truth")
        f = init_net([d_z] + [w_f] * arch.hidden_layers + [d_j], arch.activation, arch.orthogonalize, rng, "ground_truth")
        for net in (b, f):
            net.weights = [arch.gain * W for W in net.weights]
        funcs[Edge(i, j)] = EdgeFunctions(NONLINEAR, d_z, b, f)
    return Scbm(dag, noise, funcs)


@dataclass(frozen=True)
class Dataset:
    """Samples as one ``(n, d_X(node))`` block per observed node."""

    blocks: Mapping[int, np.ndarray]

    def __post_init__(self):
        blocks = {int(k): np.asarray(v, dtype=float) for k, v in sorted(self.blocks.items())}
        sizes = {v.shape[0] for v in blocks.values()}
        if len(sizes) > 1:
            raise ValueError(f"blocks disagree on sample count: {sorted(sizes)}")
        if any(v.ndim != 2 for v in blocks.values()):
            raise ValueError("every block must be a 2-d array")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return next(iter(self.blocks.values())).shape[0] if self.blocks else 0

    @property
    def observed_nodes(self) -> tuple[int, ...]:
        return tuple(self.blocks)

    def __getitem__(self, node: int) -> np.ndarray:
        try:
            return self.blocks[node]
        except KeyError:
            raise KeyError(f"node {node} is not observed in this dataset") from None

    def rows(self, index) -> "Dataset":
        return Dataset({k: v[index] for k, v in self.blocks.items()})

    def restrict(self, nodes: Iterable[int]) -> "Dataset":
        return split_environment(self, nodes)


def _parent_contribution(scbm: Scbm, j: int, blocks: Mapping[int, np.ndarray], n: int) -> np.ndarray:
    out = np.zeros((n, scbm.dag.node_dims[j]))
    for i in scbm.dag.parents(j):
        out += scbm.functions[Edge(i, j)](blocks[i])
    return out


def sample_dataset(scbm: Scbm, n: int, rng=None) -> Dataset:
    """Ancestral sampling of ``n`` observational rows for every node."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng)
    blocks: dict[int, np.ndarray] = {}
    for j in causal_order(scbm.dag):
        blocks[j] = _parent_contribution(scbm, j, blocks, n) + scbm.noise[j].sample(n, rng)
    return Dataset(blocks)


def intervene_sample(scbm: Scbm, node: int, value, n: int, rng=None) -> Dataset:
    """Sample under the hard intervention do(X_node = value)."""
    value = np.asarray(value, dtype=float).reshape(-1)
    if value.shape[0] != scbm.dag.node_dims[node]:
        raise ValueError(f"node {node} has dim {scbm.dag.node_dims[node]}, value has {value.shape[0]}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng)
    blocks: dict[int, np.ndarray] = {}
    for j in causal_order(scbm.dag):
        # noise is drawn for every node, so non-descendants match the observational draw
        eta = scbm.noise[j].sample(n, rng)
        if j == node:
            blocks[j] = np.tile(value, (n, 1))
        else:
            blocks[j] = _parent_contribution(scbm, j, blocks, n) + eta
    return Dataset(blocks)


def _edge_functions(scbm: Scbm, edge) -> tuple[Edge, EdgeFunctions]:
    edge = Edge(int(edge[0]), int(edge[1]))
    try:
        return edge, scbm.functions[edge]
    except KeyError:
        raise ValueError(f"({edge.source}, {edge.target}) is not an edge of the model") from None


def _check_source(scbm: Scbm, edge: Edge, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=float)
    d = scbm.dag.node_dims[edge.source]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"edge {edge} takes (n, {d}) inputs, got {X.shape}")
    return X


def mechanism_oracle(scbm: Scbm, edge, inputs) -> np.ndarray:
    """Noise-free ``f_ij(b_ij(inputs))``."""
    edge, f = _edge_functions(scbm, edge)
    return f(_check_source(scbm, edge, inputs))


def bottleneck_values(scbm: Scbm, edge, inputs) -> np.ndarray:
    """Ground-truth ``Z_ij = b_ij(inputs)``."""
    edge, f = _edge_functions(scbm, edge)
    return f.bottleneck_values(_check_source(scbm, edge, inputs))


def split_environment(dataset: Dataset, nodes: Iterable[int]) -> Dataset:
    """Keep only the blocks of ``nodes``."""
    nodes = sorted({int(k) for k in nodes})
    missing = [k for k in nodes if k not in dataset.blocks]
    if missing:
        raise ValueError(f"nodes {missing} are not observed in this dataset")
    return Dataset({k: dataset.blocks[k] for k in nodes})


def reparameterize(scbm: Scbm, psi: Mapping[Edge, np.ndarray]) -> Scbm:
    """Insert invertible maps on linear bottleneck spaces: B' = B psi, F' = psi^-1 F."""
    funcs = dict(scbm.functions)
    for e, P in psi.items():
        f = funcs[Edge(*e)]
        if f.kind != LINEAR:
            raise TypeError(f"edge {e} is not linear")
        P = np.asarray(P, dtype=float)
        funcs[Edge(*e)] = EdgeFunctions(LINEAR, f.d_z, f.bottleneck @ P, np.linalg.solve(P, f.effect))
    return scbm.with_functions(funcs)


def share_source_bottlenecks(scbm: Scbm, node: int) -> Scbm:
    """Make every outgoing edge of ``node`` reuse one bottleneck (that of its
    first child), so ``node`` affects all children through a single summary.
    Effects are left as they are."""
    children = scbm.dag.children(node)
    if not children:
        raise ValueError(f"node {node} has no children")
    first = scbm.functions[Edge(node, children[0])]
    funcs = dict(scbm.functions)
    for j in children[1:]:
        f = funcs[Edge(node, j)]
        if f.kind != first.kind or f.d_z != first.d_z:
            raise ValueError(f"edges out of {node} disagree on kind or d_z")
        funcs[Edge(node, j)] = EdgeFunctions(f.kind, f.d_z, first.bottleneck, f.effect)
    return scbm.with_functions(funcs)
