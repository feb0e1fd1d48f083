"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .. import io as sio
from ..estimate import estimate_all, model_identifiability
from ..gaussinfo import UnsupportedModelError, ib_constraint_report
from ..linalg import RankDeficientError
from ..mlp import DivergenceError
from ..graph import Dag, Edge
from ..synth import LINEAR, NONLINEAR, Dataset, sample_dataset
from .config import (
    IDENTIFIABILITY,
    MISSPECIFICATION,
    RANK_COLLAPSE,
    TRANSFER,
    ConfigError,
    config_from_dict,
    load_config,
    paper_scale,
)
from .experiments import MODEL, DATA, ESTIMATE, SCORE, _sample_dag, _sample_model, run_experiment, stream
from .report import manifest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

EXPERIMENT_COMMANDS = {
    "identifiability": IDENTIFIABILITY,
    "misspec": MISSPECIFICATION,
    "transfer": TRANSFER,
    "rank-collapse": RANK_COLLAPSE,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed {text} is not an unsigned 64-bit integer")
    return v


def _edge(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(",")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an edge as i,j, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scbm", description="Structural causal bottleneck models: simulation, estimation, experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=_u64, help="run this seed only")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--mode", choices=(LINEAR, NONLINEAR))

    g = sub.add_parser("gen", help="sample a model and a dataset")
    common(g)

    e = sub.add_parser("estimate", help="estimate all edges from stored data")
    common(e)
    e.add_argument("--model", required=True, help="model JSON (graph and, optionally, ground truth)")
    e.add_argument("--data", required=True, help="dataset as .csv or packed .bin")
    e.add_argument("--eval-data", help="held-out dataset for scoring against the ground truth")
    e.add_argument("--d-hat", type=int, required=True)

    for name in EXPERIMENT_COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        common(sp)
        sp.add_argument("--paper-scale", action="store_true", help="full-size nonlinear settings (slow)")

    ib = sub.add_parser("ib-check", help="information-bottleneck constraint residuals of a linear model")
    common(ib)
    ib.add_argument("--model", help="model JSON; sampled from --config/--seed if omitted")
    ib.add_argument("--omit", type=_edge, action="append", default=[], help="leave bottleneck i,j out of the conditioning")
    return p


def _digest(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_manifest(out: Path, config: dict, digest: str, seeds, command: str) -> None:
    sio.dump_json(manifest(config, digest, seeds, command), out / "manifest.json")


def _gen_config(args):
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    obj.setdefault("experiment", IDENTIFIABILITY)
    cfg = config_from_dict(obj, args.mode)
    if cfg.swept():
        raise ConfigError(f"gen takes scalar parameters, {cfg.swept()} are lists")
    return cfg


def cmd_gen(args) -> int:
    cfg = _gen_config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = Path(args.out or "gen")
    out.mkdir(parents=True, exist_ok=True)
    mrng = stream(seed, MODEL)
    dag = _sample_dag(cfg, mrng)
    scbm = _sample_model(cfg, dag, mrng)
    data = sample_dataset(scbm, cfg.n, stream(seed, DATA))
    sio.dump_json(sio.scbm_to_dict(scbm), out / "model.json")
    (out / "data.csv").write_text(sio.dataset_to_csv(data))
    (out / "data.bin").write_bytes(sio.dataset_to_bytes(data))
    _write_manifest(out, cfg.to_dict(), cfg.digest(), [seed], "gen")
    return EXIT_OK


def _read_dataset(path: str) -> Dataset:
    p = Path(path)
    raw = p.read_bytes()
    if raw[:8] == sio.BINARY_MAGIC:
        return sio.dataset_from_bytes(raw)
    return sio.dataset_from_csv(raw.decode())


def cmd_estimate(args) -> int:
    model_obj = sio.load_json(args.model)
    data = _read_dataset(args.data)
    mode = args.mode or LINEAR
    seed = 0 if args.seed is None else args.seed
    hyper = None
    if args.config:
        hyper = load_config(args.config, mode).estimator
    dag = Dag.from_dict(model_obj["graph"])
    est = estimate_all(data, dag, args.d_hat, mode, hyper, stream(seed, ESTIMATE))
    out = Path(args.out or "estimate")
    out.mkdir(parents=True, exist_ok=True)
    sio.dump_json(sio.estimated_to_dict(est), out / "estimate.json")
    if "edges" in model_obj and args.eval_data:
        truth = sio.scbm_from_dict(model_obj)
        scores, mean = model_identifiability(truth, est, _read_dataset(args.eval_data), mode, rng=stream(seed, SCORE))
        sio.dump_json({"edges": {f"{e.source}-{e.target}": s for e, s in sorted(scores.items())}, "mean": mean},
                      out / "scores.json")
    cfg = {"model": str(args.model), "data": str(args.data), "d_hat": args.d_hat, "mode": mode}
    digest = _digest(cfg)
    _write_manifest(out, cfg, digest, [seed], "estimate")
    return EXIT_OK


def cmd_experiment(args) -> int:
    experiment = EXPERIMENT_COMMANDS[args.command]
    if args.config:
        cfg = load_config(args.config, args.mode)
        if cfg.experiment != experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, command runs {experiment!r}")
    else:
        cfg = config_from_dict({"experiment": experiment}, args.mode)
    if args.paper_scale:
        cfg = paper_scale(cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    out = Path(args.out or cfg.output_dir or f"out/{args.command}")
    report = run_experiment(cfg)
    report.write(out, manifest(cfg.to_dict(), cfg.digest(), cfg.seeds, args.command))
    for a in report.aggregates:
        print(f"{a.sweep_param}={a.value} {a.metric}: mean {a.mean:.4f} std {a.std:.4f} (n={a.count})")
    return EXIT_OK


def cmd_ib_check(args) -> int:
    if args.model:
        scbm = sio.scbm_from_dict(sio.load_json(args.model))
        cfg_dict, digest, seed = {"model": str(args.model)}, None, args.seed
    else:
        cfg = _gen_config(args)
        seed = cfg.seeds[0] if args.seed is None else args.seed
        mrng = stream(seed, MODEL)
        scbm = _sample_model(cfg, _sample_dag(cfg, mrng), mrng)
        cfg_dict, digest = cfg.to_dict(), cfg.digest()
    omit = [Edge(*e) for e in args.omit]
    bad = [e for e in omit if e not in scbm.dag.edges]
    if bad:
        raise ConfigError(f"--omit names edges not in the model: {bad}")
    report = ib_constraint_report(scbm, omit)
    body = {str(i): v for i, v in report.items()}
    text = json.dumps(body, indent=1, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ib_report.json").write_text(text)
        if digest is None:
            digest = _digest(cfg_dict)
        _write_manifest(out, cfg_dict, digest, [] if seed is None else [seed], "ib-check")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "estimate": cmd_estimate, "ib-check": cmd_ib_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = COMMANDS.get(args.command, cmd_experiment)
        return handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, UnsupportedModelError, json.JSONDecodeError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, RankDeficientError, DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
