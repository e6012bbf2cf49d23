"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import skeleton as sk
from .config import ConfigError, RunConfig
from .metrics import METRIC_FIELDS, FeatureExtractor, apd, evaluate_sets, frechet_distance
from .motion_io import dumps, motion_to_dict, save_motion_csv, scene_to_dict
from .nn import checkpoint, configure
from .seeding import stream

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _parser() -> argparse.ArgumentParser:
    from .pipeline.models import SUBMODELS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded deterministic kernels")

    p = argparse.ArgumentParser(prog="hiermotion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="synthetic dataset tools")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    gen = ds_sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    gen.add_argument("--n", type=int, help="number of sequences")
    gen.add_argument("--out", required=True, help="output directory")

    tr = sub.add_parser("train", parents=[common], help="train one sub-model")
    tr.add_argument("submodel", choices=SUBMODELS)
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="model directory")
    tr.add_argument("--steps", type=int, help="override training steps")

    g = sub.add_parser("generate", parents=[common], help="generate approach-interact-leave motions")
    g.add_argument("--data", required=True, help="dataset directory providing scenes and starts")
    g.add_argument("--models", required=True, help="model directory with all six checkpoints")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--samples", type=int, help="number of sequences to generate")
    g.add_argument("--split", default="validation", choices=("train", "validation"))

    ev = sub.add_parser("evaluate", parents=[common], help="compute the metric report")
    ev.add_argument("--generated", required=True, help="generated motion set directory")
    ev.add_argument("--reference", required=True, help="reference dataset directory")
    ev.add_argument("--split", default=None, choices=("train", "validation"))
    ev.add_argument("--out", required=True, help="report directory")
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    return cfg


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_dataset(args, cfg: RunConfig) -> int:
    from .synthetic import make_dataset

    if args.n is not None:
        cfg.data.n_sequences = args.n
    digest = make_dataset(cfg.gen_config(), args.out)
    print(digest)
    return EXIT_OK


def _load_records(path, split=None):
    from .synthetic import load_dataset

    try:
        return load_dataset(path, split)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except KeyError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def cmd_train(args, cfg: RunConfig) -> int:
    from .pipeline.models import load_submodel, save_submodel, train_submodel
    from .plotting import plot_curve

    if args.steps is not None:
        cfg.training.steps = args.steps
    pcfg = cfg.pipeline_config()
    records = _load_records(args.data, "train")
    if not records:
        raise CliError("dataset has no training records", EXIT_USAGE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vqvae = None
    if args.submodel == "prior":
        path = out / "vqvae.ckpt"
        if not path.exists():
            raise CliError(f"missing checkpoint: vqvae ({path}); train the VQ-VAE first", EXIT_MISSING)
        vqvae = load_submodel("vqvae", path)
    rng = stream(cfg.seed, f"train/{args.submodel}")
    every = max(1, pcfg.steps // 20)

    def log(rec):
        if rec["step"] % every == 0:
            _log(f"{args.submodel} step {rec['step']}: loss {rec['loss']:.5f}")

    t0 = time.perf_counter()
    try:
        model, curve = train_submodel(args.submodel, records, pcfg, rng, vqvae, log)
    except FloatingPointError as exc:
        raise CliError(f"numeric failure while training {args.submodel}: {exc}", EXIT_NUMERIC) from exc
    digest = save_submodel(args.submodel, model, out / f"{args.submodel}.ckpt")
    keys = sorted({k for rec in curve for k in rec})
    with open(out / f"{args.submodel}.curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(curve)
    if curve:
        plot_curve(out / f"{args.submodel}.curve.png", curve, title=args.submodel)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    _log(f"trained {args.submodel} in {time.perf_counter() - t0:.1f} s")
    print(digest)
    return EXIT_OK


def _record_meta(rid: str, result, source: str, seconds: float) -> dict:
    g = result.goal
    return {
        "id": rid, "motion": f"{rid}.motion.json", "scene": f"{rid}.scene.json", "csv": f"{rid}.motion.csv",
        "boundary": result.boundary, "length": len(result.motion), "source": source,
        "goal": {"root": {"pos": g.root.position.tolist(), "facing": g.root.facing.tolist()},
                 "action": sk.ACTIONS[g.action], "pose": g.pose.joints.tolist()},
        "endpoint": {"pos": result.legs[1].motion.root_pos[-1].tolist(),
                     "facing": result.legs[1].motion.root_facing[-1].tolist()},
        "n_milestones": [leg.n_milestones for leg in result.legs],
        "seconds": round(seconds, 3),
    }


def cmd_generate(args, cfg: RunConfig) -> int:
    from .pipeline import ModelBundle, generate_interaction, legs_from_record
    from .pipeline.models import SUBMODELS

    samples = cfg.generate.samples if args.samples is None else args.samples
    if samples < 1:
        raise ConfigError("generate.samples must be >= 1")
    model_dir = Path(args.models)
    missing = [n for n in SUBMODELS if not (model_dir / f"{n}.ckpt").exists()]
    if missing:
        raise CliError(f"missing checkpoints: {', '.join(missing)}", EXIT_MISSING)
    records = _load_records(args.data, args.split) or _load_records(args.data)
    if not records:
        raise CliError("dataset has no records", EXIT_USAGE)
    bundle = ModelBundle.load(cfg.pipeline_config(), model_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metas, trajs = [], []
    for i in range(samples):
        rec = records[i % len(records)]
        start = legs_from_record(rec)[0].start
        rng = stream(cfg.seed, f"generate/{i}")
        t0 = time.perf_counter()
        result = generate_interaction(start, rec.scene.objects[0], rec.endpoint, rec.scene, bundle, rng,
                                      action=rec.goal.action)
        rid = f"gen_{i:05d}"
        meta = _record_meta(rid, result, f"record {records.index(rec)}", time.perf_counter() - t0)
        (out / meta["motion"]).write_text(dumps(motion_to_dict(result.motion)))
        (out / meta["scene"]).write_text(dumps(scene_to_dict(rec.scene)))
        save_motion_csv(result.motion, out / meta["csv"])
        metas.append(meta)
        trajs.append(FeatureExtractor("trajectory", 32)(result.motion))
        _log(f"sample {i}: {len(result.motion)} frames, N = {meta['n_milestones']}")
    summary = {"samples": samples, "apd_t": apd(np.stack(trajs)) if samples >= 2 else None}
    manifest = {
        "kind": "generated", "seed": cfg.seed, "split": args.split,
        "models": {n: checkpoint.file_hash(model_dir / f"{n}.ckpt") for n in SUBMODELS},
        "records": metas, "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .plotting import plot_foot_heights, plot_metrics, plot_trajectories

    gen = _load_records(args.generated)
    ref = _load_records(args.reference, args.split)
    if len(gen) < 2:
        raise CliError("evaluation needs at least 2 generated sequences (APD is undefined for one)",
                       EXIT_USAGE)
    if len(ref) < 2:
        raise CliError("evaluation needs at least 2 reference sequences", EXIT_USAGE)
    if gen[0].motion.joint_names != ref[0].motion.joint_names:
        raise CliError("generated and reference skeletons differ", EXIT_USAGE)
    try:
        report = evaluate_sets([r.motion for r in gen], [r.motion for r in ref], [r.goal for r in gen],
                               [r.scene for r in gen])
        ref_report = evaluate_sets([r.motion for r in ref], [r.motion for r in ref], [r.goal for r in ref],
                                   [r.scene for r in ref])
    except FloatingPointError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clean = {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in report.items()}
    (out / "metrics.json").write_text(json.dumps(clean, indent=1, sort_keys=True))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set"] + list(METRIC_FIELDS))
        w.writerow(["generated"] + [report[k] for k in METRIC_FIELDS])
        w.writerow(["reference"] + [ref_report[k] for k in METRIC_FIELDS])
    plot_trajectories(out / "trajectories.png", [r.motion for r in gen], [r.motion for r in ref],
                      [gen[0].scene])
    plot_metrics(out / "metrics.png", {"generated": report, "reference": ref_report})
    plot_foot_heights(out / "foot_heights.png", gen[0].motion)
    print(json.dumps(clean, sort_keys=True))
    return EXIT_OK


def split_half_fd(records, seed: int = 0) -> float:
    """FD between two random halves of a set: the noise floor of the metric."""
    feats = FeatureExtractor("motion").batch([r.motion for r in records])
    perm = np.random.default_rng(seed).permutation(len(feats))
    h = len(feats) // 2
    return frechet_distance(feats[perm[:h]], feats[perm[h:]])


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "generate": cmd_generate, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = _run_config(args)
        configure(deterministic=args.deterministic)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
