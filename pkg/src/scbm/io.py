"""JSON for models and estimates; CSV and a packed binary format for datasets."""

from __future__ import annotations

import csv
import io
import json
import re
import struct
from pathlib import Path

import numpy as np

from .estimate import EdgeEstimate, EstimatedScbm, _Affine
from .graph import Dag, Edge
from .mlp import NeuralNet
from .synth import LINEAR, Dataset, EdgeFunctions, GaussianNoiseModel, Scbm

BINARY_MAGIC = b"SCBMDATA"
BINARY_VERSION = 1


def _rows(M: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.asarray(M, dtype=float)]


def _fn_to_json(kind: str, fn):
    return _rows(fn) if kind == LINEAR else fn.to_dict()


def _fn_from_json(kind: str, obj):
    if kind == LINEAR:
        return np.asarray(obj, dtype=float)
    return NeuralNet.from_dict(obj)


def scbm_to_dict(scbm: Scbm) -> dict:
    return {
        "graph": scbm.dag.to_dict(),
        "noise": [{"precision": _rows(nm.precision), "scale": float(nm.scale)} for nm in scbm.noise],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "kind": f.kind,
                "d_z": f.d_z,
                "B": _fn_to_json(f.kind, f.bottleneck),
                "F": _fn_to_json(f.kind, f.effect),
            }
            for e, f in sorted(scbm.functions.items())
        ],
    }


def scbm_from_dict(obj: dict) -> Scbm:
    dag = Dag.from_dict(obj["graph"])
    noise = [GaussianNoiseModel(np.asarray(n["precision"], dtype=float), float(n.get("scale", 1.0))) for n in obj["noise"]]
    funcs = {}
    for e in obj["edges"]:
        kind = e["kind"]
        funcs[Edge(int(e["source"]), int(e["target"]))] = EdgeFunctions(
            kind, int(e["d_z"]), _fn_from_json(kind, e["B"]), _fn_from_json(kind, e["F"])
        )
    return Scbm(dag, tuple(noise), funcs)


def _affine_to_json(a: _Affine | None):
    return None if a is None else {"shift": [float(v) for v in a.shift], "scale": [float(v) for v in a.scale]}


def _affine_from_json(obj):
    return None if obj is None else _Affine(np.asarray(obj["shift"], dtype=float), np.asarray(obj["scale"], dtype=float))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def estimated_to_dict(est: EstimatedScbm) -> dict:
    edges = []
    for e, ee in sorted(est.estimates.items()):
        edges.append({
            "source": e.source,
            "target": e.target,
            "kind": ee.kind,
            "d_z": ee.d_hat,
            "B": _fn_to_json(ee.kind, ee.bottleneck),
            "F": _fn_to_json(ee.kind, ee.effect),
            "cond_set": [list(c) for c in ee.cond_set],
            "joint_map": None if ee.joint_map is None else _rows(ee.joint_map),
            "diagnostics": _jsonable(ee.diagnostics),
            "norms": {
                "in": _affine_to_json(ee.in_norm),
                "cond": _affine_to_json(ee.cond_norm),
                "out": _affine_to_json(ee.out_norm),
            },
        })
    return {"graph": est.dag.to_dict(), "mode": est.mode, "edges": edges}


def estimated_from_dict(obj: dict) -> EstimatedScbm:
    dag = Dag.from_dict(obj["graph"])
    estimates = {}
    for e in obj["edges"]:
        kind = e["kind"]
        edge = Edge(int(e["source"]), int(e["target"]))
        norms = e.get("norms") or {}
        estimates[edge] = EdgeEstimate(
            edge,
            int(e["d_z"]),
            kind,
            _fn_from_json(kind, e["B"]),
            _fn_from_json(kind, e["F"]),
            tuple(Edge(int(a), int(b)) for a, b in e.get("cond_set", [])),
            None if e.get("joint_map") is None else np.asarray(e["joint_map"], dtype=float),
            dict(e.get("diagnostics", {})),
            _affine_from_json(norms.get("in")),
            _affine_from_json(norms.get("cond")),
            _affine_from_json(norms.get("out")),
        )
    return EstimatedScbm(dag, estimates, obj["mode"])


def dump_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


_COLUMN = re.compile(r"node(\d+)_dim(\d+)$")


def dataset_to_csv(data: Dataset) -> str:
    header = [f"node{i}_dim{k}" for i, block in data.blocks.items() for k in range(block.shape[1])]
    table = np.hstack(list(data.blocks.values())) if data.blocks else np.zeros((0, 0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in table:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    cols: dict[int, list[tuple[int, int]]] = {}
    for pos, name in enumerate(header):
        m = _COLUMN.match(name)
        if not m:
            raise ValueError(f"bad column name {name!r}")
        cols.setdefault(int(m.group(1)), []).append((int(m.group(2)), pos))
    table = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    blocks = {}
    for node, entries in cols.items():
        entries.sort()
        if [k for k, _ in entries] != list(range(len(entries))):
            raise ValueError(f"node {node} has non-contiguous dims")
        blocks[node] = table[:, [p for _, p in entries]]
    return Dataset(blocks)


def dataset_to_bytes(data: Dataset) -> bytes:
    """Header ``magic, u32 version, u32 blocks`` then per block
    ``u32 node, u64 rows, u64 cols`` and row-major little-endian float64."""
    out = [BINARY_MAGIC, struct.pack("<II", BINARY_VERSION, len(data.blocks))]
    for node, block in data.blocks.items():
        out.append(struct.pack("<IQQ", node, *block.shape))
        out.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return b"".join(out)


def dataset_from_bytes(raw: bytes) -> Dataset:
    if raw[:8] != BINARY_MAGIC:
        raise ValueError("not a packed dataset")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != BINARY_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    pos = 16
    blocks = {}
    for _ in range(count):
        node, n, d = struct.unpack_from("<IQQ", raw, pos)
        pos += 20
        size = 8 * n * d
        if pos + size > len(raw):
            raise ValueError("truncated dataset")
        blocks[node] = np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d).astype(float)
        pos += size
    if pos != len(raw):
        raise ValueError("trailing bytes after dataset")
    return Dataset(blocks)


def clouds_to_csv(z_true: np.ndarray, z_hat: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"z_true_{k}" for k in range(z_true.shape[1])] + [f"z_hat_{k}" for k in range(z_hat.shape[1])])
    for a, b in zip(z_true, z_hat):
        w.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b])
    return buf.getvalue()
