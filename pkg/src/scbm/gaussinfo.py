"""Closed-form Gaussian checks for linear bottleneck models.

The joint law of a linear model with Gaussian noise is Gaussian, so
conditional independence statements reduce to vanishing partial covariances
and conditional mutual information has a determinant formula. Bottleneck
coordinates are appended to the covariance as extra (singular) blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .graph import Edge, causal_order
from .linalg import pinv
from .synth import LINEAR, Scbm


class UnsupportedModelError(TypeError):
    pass


@dataclass(frozen=True)
class JointCovariance:
    """Covariance over stacked blocks; ``blocks[key]`` lists the coordinates of a block.

    Node blocks are keyed by node index, appended bottleneck blocks by
    ``("Z", source, target)``.
    """

    matrix: np.ndarray
    blocks: Mapping[Hashable, np.ndarray]

    def __post_init__(self):
        S = np.asarray(self.matrix, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"covariance must be square, got {S.shape}")
        tol = 1e-10 * max(1.0, np.abs(S).max())
        if np.abs(S - S.T).max() > tol:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "matrix", S)
        object.__setattr__(self, "blocks", {k: np.asarray(v, dtype=int) for k, v in self.blocks.items()})

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def index(self, keys: Iterable[Hashable]) -> np.ndarray:
        parts = [self.blocks[k] for k in keys]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def append_linear(self, key: Hashable, node: Hashable, proj: np.ndarray) -> "JointCovariance":
        """Add the block ``X_node @ proj`` as new coordinates."""
        idx = self.blocks[node]
        proj = np.asarray(proj, dtype=float)
        if proj.shape[0] != idx.size:
            raise ValueError(f"projection has {proj.shape[0]} rows, block {node!r} has {idx.size} coordinates")
        S = self.matrix
        cross = proj.T @ S[idx, :]
        inner = proj.T @ S[np.ix_(idx, idx)] @ proj
        top = np.hstack([S, cross.T])
        bottom = np.hstack([cross, 0.5 * (inner + inner.T)])
        blocks = dict(self.blocks)
        blocks[key] = np.arange(self.dim, self.dim + proj.shape[1])
        return JointCovariance(np.vstack([top, bottom]), blocks)

    def with_bottlenecks(self, scbm: Scbm, edges: Iterable[Edge] | None = None) -> "JointCovariance":
        """Append ground-truth bottleneck coordinates for ``edges`` (all by default)."""
        cov = self
        for e in scbm.dag.edges if edges is None else edges:
            e = Edge(*e)
            cov = cov.append_linear(("Z", e.source, e.target), e.source, scbm.functions[e].bottleneck)
        return cov


def _check_linear(scbm: Scbm) -> None:
    if any(f.kind != LINEAR for f in scbm.functions.values()):
        raise UnsupportedModelError("analytic covariance needs every edge to be linear")


def analytic_covariance(scbm: Scbm) -> JointCovariance:
    """Exact covariance of all node vectors.

    With row vectors ``X = X A + eta`` where ``A`` holds the joint maps
    ``B @ F``, so ``Cov(X) = (I - A)^-T Cov(eta) (I - A)^-1``.
    """
    _check_linear(scbm)
    dims = scbm.dag.node_dims
    offsets = np.concatenate([[0], np.cumsum(dims)])
    D = int(offsets[-1])
    A = np.zeros((D, D))
    for (i, j), f in scbm.functions.items():
        A[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = f.joint_map
    S_eta = np.zeros((D, D))
    for i, nm in enumerate(scbm.noise):
        S_eta[offsets[i] : offsets[i + 1], offsets[i] : offsets[i + 1]] = nm.covariance
    # (I - A) is unit block-triangular in causal order, hence invertible
    T = np.linalg.inv(np.eye(D) - A)
    S = T.T @ S_eta @ T
    blocks = {i: np.arange(offsets[i], offsets[i + 1]) for i in range(len(dims))}
    return JointCovariance(0.5 * (S + S.T), blocks)


def _idx(cov: JointCovariance, keys) -> np.ndarray:
    if isinstance(keys, np.ndarray) and keys.dtype.kind in "iu":
        return keys
    return cov.index(keys)


def partial_covariance(cov: JointCovariance, A, B, C=()) -> np.ndarray:
    """``S_AB - S_AC S_CC^+ S_CB``. Arguments are lists of block keys (or raw
    coordinate arrays). The pseudoinverse absorbs singular conditioning blocks."""
    a, b, c = _idx(cov, A), _idx(cov, B), _idx(cov, C)
    S = cov.matrix
    out = S[np.ix_(a, b)]
    if c.size:
        out = out - S[np.ix_(a, c)] @ pinv(S[np.ix_(c, c)], 1e-12) @ S[np.ix_(c, b)]
    return out


class Cmi(NamedTuple):
    nats: float
    degenerate: bool


def _logdet(S: np.ndarray, rel_tol: float = 1e-10) -> tuple[float, bool]:
    """log-determinant, falling back to the pseudo-determinant when singular."""
    if S.size == 0:
        return 0.0, False
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    top = max(w.max(), 0.0)
    keep = w > rel_tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    return float(np.sum(np.log(w[keep]))), bool(not keep.all())


def gaussian_cmi(cov: JointCovariance, A, B, C=()) -> Cmi:
    """I(A; B | C) in nats for jointly Gaussian blocks."""
    a, b, c = _idx(cov, A), _idx(cov, B), _idx(cov, C)
    ab = np.sort(np.concatenate([a, b]))
    la, da = _logdet(partial_covariance(cov, a, a, c))
    lb, db = _logdet(partial_covariance(cov, b, b, c))
    lab, dab = _logdet(partial_covariance(cov, ab, ab, c))
    return Cmi(0.5 * (la + lb - lab), da or db or dab)


def ib_constraint_report(scbm: Scbm, omit: Iterable[Edge] = ()) -> dict[int, dict]:
    """Per non-sink node ``i``: the largest |partial covariance| between the
    children of ``i`` and ``X_i`` given the bottlenecks out of ``i`` and into
    ``i``. Ground-truth models give zero up to roundoff.

    ``omit`` drops bottlenecks from the conditioning (negative controls).
    """
    _check_linear(scbm)
    dag = scbm.dag
    omit = {Edge(*e) for e in omit}
    cov = analytic_covariance(scbm).with_bottlenecks(scbm)
    report = {}
    for i in causal_order(dag):
        children = dag.children(i)
        if not children:
            continue
        cond_edges = [Edge(i, j) for j in children] + [Edge(k, i) for k in dag.parents(i)]
        cond = [("Z", *e) for e in cond_edges if e not in omit]
        pc = partial_covariance(cov, list(children), [i], cond)
        scale = float(np.sqrt(np.abs(np.diag(cov.matrix)).max()))
        report[i] = {
            "residual": float(np.abs(pc).max()),
            "relative_residual": float(np.abs(pc).max()) / scale**2,
            "conditioning": [list(map(int, e)) for e in cond_edges if e not in omit],
            "omitted": [list(map(int, e)) for e in cond_edges if e in omit],
        }
    return report
