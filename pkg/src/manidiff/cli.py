"""Command-line front door: reproducible gen-data / train / sample / eval /
bench runs with JSON configs, seeded determinism, and a fixed output layout

    runs/<name>/{config.json, data.jsonl, ckpt.bin, log.csv, samples.*, report.*}

Flag precedence: command-line flags > config-file values > defaults. Unknown
config-file keys are rejected. Exit codes: 0 success, 2 usage or config
error, 3 numerical failure. MANIDIFF_SEED is the seed fallback.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (
    OscillatorSpec,
    WrappedGaussianSpec,
    load_dataset,
    oscillator_dataset,
    sample_wrapped_gaussian,
    save_dataset,
)
from .errors import ConfigError, ContractError, DegeneracyError, NumericalError, SingularityError
from .evaluate import C2stConfig, c2st, nll, report
from .forward import GateConfig
from .manifolds import Sphere, Torus, make_manifold
from .nn import load_checkpoint
from .sample import SampleConfig, cov_fn_from_model, drift_fn_from_model, generate, load_samples, save_samples
from .train import TrainConfig, load_models, per_iteration_bench, train

DEFAULTS = {
    "gen-data": {
        "run": "default", "out": None, "manifold": None, "dim": None, "n": None,
        "dataset": None, "sigma2": 0.2, "components": 1, "count": 10000,
        "grid_points": 128, "half_width": 10.0, "evolution_time": 1.0,
        "omega_min": 2.0, "omega_max": 3.0, "x0_std": 1.0, "seed": None,
    },
    "train": {
        "run": "default", "data": None, "iters": 5000, "batch": 512, "lr": 1e-3,
        "horizon": 5.0, "hidden": None, "cov_hidden": None, "depth": 4,
        "cov_depth": 4, "arch": None, "time_embed_dim": 64, "optimizer": "adam",
        "min_gap": 1e-6, "min_norm": 0.5, "s_min": 1e-3, "checkpoint_every": 0,
        "adam_beta2": 0.999, "resume": False, "workers": 1, "manifold": None,
        "dim": None, "n": None, "seed": None,
    },
    "sample": {
        "run": "default", "ckpt": None, "out": None, "count": 1000,
        "step": 1e-2, "s_min": 1e-3, "seed": None,
    },
    "eval-nll": {
        "run": "default", "samples": None, "data": None, "truncation": 6,
        "seed": None,
    },
    "eval-c2st": {
        "run": "default", "samples": None, "held_out": None, "hidden": 128,
        "layers": 3, "epochs": 200, "split": 0.5, "null_split": False,
        "seed": None,
    },
    "bench": {
        "run": "default", "manifold": None, "sizes": None, "batch": 512,
        "trials": 7, "hidden": 512, "seed": None,
    },
}


def _config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _resolve(command: str, args: argparse.Namespace) -> dict:
    resolved = dict(DEFAULTS[command])
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in resolved:
                raise ConfigError(f"unknown config key for {command}: {key!r}")
            resolved[key] = value
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    if resolved.get("seed") is None:
        resolved["seed"] = int(os.environ.get("MANIDIFF_SEED", "0"))
    resolved["seed"] = int(resolved["seed"])
    return resolved


def _run_dir(cfg: dict) -> str:
    path = os.path.join("runs", str(cfg["run"]))
    os.makedirs(path, exist_ok=True)
    return path


def _record_config(run_dir: str, command: str, cfg: dict, cfg_hash: str) -> None:
    path = os.path.join(run_dir, "config.json")
    doc = {}
    if os.path.exists(path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError:
            doc = {}
    doc[command] = {"config": cfg, "config_hash": cfg_hash, "seed": cfg["seed"]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _build_manifold(cfg: dict):
    kind = cfg.get("manifold")
    if kind is None:
        raise ConfigError("a manifold kind is required (torus, sphere, so, u)")
    if kind in ("torus", "sphere"):
        if cfg.get("dim") is None:
            raise ConfigError(f"--dim is required for the {kind}")
        return make_manifold(kind, dim=int(cfg["dim"]))
    if kind in ("so", "u"):
        if cfg.get("n") is None:
            raise ConfigError(f"--n is required for {kind}")
        return make_manifold(kind, n=int(cfg["n"]))
    raise ConfigError(f"unknown manifold kind {kind!r}")


def _origin_means(man, components: int, seed: int) -> np.ndarray:
    if components < 1:
        raise ConfigError("components must be >= 1")
    if components == 1:
        if isinstance(man, Torus):
            return np.zeros((1, man.dim))
        if isinstance(man, Sphere):
            e = np.zeros((1, man.dim))
            e[0, 0] = 1.0
            return e
        eye = np.eye(man.n)
        return (eye[None].astype(complex) if man.complex_entries else eye[None]).copy()
    rng = np.random.default_rng(seed + 7919)
    return man.random_point(rng, count=components)


def cmd_gen_data(args) -> int:
    cfg = _resolve("gen-data", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "gen-data", cfg, cfg_hash)
    man = _build_manifold(cfg)
    kind = cfg["dataset"]
    if kind is None:
        kind = "oscillator" if getattr(man, "complex_entries", False) else "wrapped_gaussian"
    rng = np.random.default_rng(cfg["seed"])
    count = int(cfg["count"])
    if count < 0:
        raise ConfigError("count must be >= 0")
    meta = {"config_hash": cfg_hash, "seed": cfg["seed"], "dataset": kind}
    if kind == "wrapped_gaussian":
        means = _origin_means(man, int(cfg["components"]), cfg["seed"])
        spec = WrappedGaussianSpec(manifold=man, means=means, cov_scale=float(cfg["sigma2"]))
        points = sample_wrapped_gaussian(spec, count, rng)
        if np.iscomplexobj(means):
            meta["means_re"] = means.real.tolist()
            meta["means_im"] = means.imag.tolist()
        else:
            meta["means"] = means.tolist()
        meta["cov_scale"] = float(cfg["sigma2"])
    elif kind == "oscillator":
        if not getattr(man, "complex_entries", False):
            raise ConfigError("the oscillator dataset lives on U(n)")
        spec = OscillatorSpec(n=man.n, grid_points=int(cfg["grid_points"]),
                              half_width=float(cfg["half_width"]),
                              evolution_time=float(cfg["evolution_time"]),
                              omega_range=(float(cfg["omega_min"]), float(cfg["omega_max"])),
                              x0_std=float(cfg["x0_std"]))
        points = oscillator_dataset(spec, count, rng)
        meta["oscillator"] = {
            "grid_points": spec.grid_points, "half_width": spec.half_width,
            "evolution_time": spec.evolution_time, "omega_range": list(spec.omega_range),
            "x0_std": spec.x0_std,
        }
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    out = cfg["out"] or os.path.join(run_dir, "data.jsonl")
    save_dataset(out, man, points, meta=meta)
    print(f"wrote {count} points to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve("train", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "train", cfg, cfg_hash)
    data_path = cfg["data"] or os.path.join(run_dir, "data.jsonl")
    if not os.path.exists(data_path):
        raise ConfigError(f"dataset not found: {data_path}")
    man, points, _header = load_dataset(data_path)
    if cfg["manifold"] is not None:
        requested = _build_manifold(cfg)
        if requested.to_json() != man.to_json():
            raise ConfigError(
                f"manifold mismatch: dataset holds {man.to_json()}, config asks {requested.to_json()}")
    gate = GateConfig(min_gap=float(cfg["min_gap"]), min_norm=float(cfg["min_norm"]),
                      s_min=float(cfg["s_min"]))
    tc_kwargs = dict(manifold=man, iterations=int(cfg["iters"]), batch=int(cfg["batch"]),
                     lr=float(cfg["lr"]), horizon=float(cfg["horizon"]), seed=cfg["seed"],
                     gate=gate, optimizer=cfg["optimizer"], adam_beta2=float(cfg["adam_beta2"]),
                     drift_depth=int(cfg["depth"]), cov_depth=int(cfg["cov_depth"]),
                     drift_arch=cfg["arch"], time_embed_dim=int(cfg["time_embed_dim"]),
                     checkpoint_every=int(cfg["checkpoint_every"]), workers=int(cfg["workers"]))
    if cfg["hidden"] is not None:
        tc_kwargs["drift_hidden"] = int(cfg["hidden"])
    if cfg["cov_hidden"] is not None:
        tc_kwargs["cov_hidden"] = int(cfg["cov_hidden"])
    tc = TrainConfig(**tc_kwargs)
    ckpt_path = os.path.join(run_dir, "ckpt.bin")
    resume_doc = None
    if cfg["resume"]:
        if not os.path.exists(ckpt_path):
            raise ConfigError(f"cannot resume: no checkpoint at {ckpt_path}")
        resume_doc = load_checkpoint(ckpt_path)
        if float(resume_doc["horizon"]) != tc.horizon:
            raise ConfigError("cannot resume: checkpoint horizon differs from the config")
    train(points, tc,
          log_path=os.path.join(run_dir, "log.csv"),
          checkpoint_path=ckpt_path,
          checkpoint_meta={"config_hash": cfg_hash, "seed": cfg["seed"]},
          resume_doc=resume_doc,
          log_comment=f"config_hash={cfg_hash} seed={cfg['seed']}")
    print(f"trained {tc.iterations} iterations; checkpoint at {ckpt_path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _resolve("sample", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "sample", cfg, cfg_hash)
    ckpt_path = cfg["ckpt"] or os.path.join(run_dir, "ckpt.bin")
    if not os.path.exists(ckpt_path):
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    doc = load_checkpoint(ckpt_path)
    man, horizon, drift, cov = load_models(doc)
    count = int(cfg["count"])
    suffix = "csv" if isinstance(man, (Torus, Sphere)) else "jsonl"
    out = cfg["out"] or os.path.join(run_dir, f"samples.{suffix}")
    meta = {"config_hash": cfg_hash, "seed": cfg["seed"]}
    if count == 0:
        if isinstance(man, (Torus, Sphere)):
            empty = np.zeros((0, man.dim))
        else:
            empty = np.zeros((0, man.n, man.n),
                             dtype=complex if man.complex_entries else float)
        save_samples(out, man, empty, meta=meta)
        print(f"wrote 0 samples to {out}")
        return 0
    sc = SampleConfig(horizon=float(horizon), step=float(cfg["step"]), count=count,
                      seed=cfg["seed"], s_min=float(cfg["s_min"]))
    points = generate(man, drift_fn_from_model(drift, sc.horizon),
                      cov_fn_from_model(cov, sc.horizon), sc)
    save_samples(out, man, points, meta=meta)
    print(f"wrote {len(points)} samples to {out}")
    return 0


def _load_log(path: str) -> dict | None:
    if not os.path.exists(path):
        return None
    names, columns = None, None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if names is None:
                names = line.split(",")
                columns = [[] for _ in names]
                continue
            for col, tok in zip(columns, line.split(",")):
                col.append(float(tok))
    if not names or not columns or not columns[0]:
        return None
    return {name: np.asarray(col) for name, col in zip(names, columns)}


def cmd_eval_nll(args) -> int:
    cfg = _resolve("eval-nll", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "eval-nll", cfg, cfg_hash)
    data_path = cfg["data"] or os.path.join(run_dir, "data.jsonl")
    if not os.path.exists(data_path):
        raise ConfigError(f"dataset not found: {data_path}")
    man, _points, header = load_dataset(data_path)
    meta = header.get("meta", {})
    if "means" not in meta or "cov_scale" not in meta:
        raise ConfigError("dataset header lacks the wrapped-Gaussian target parameters")
    spec = WrappedGaussianSpec(manifold=man, means=np.asarray(meta["means"], dtype=float),
                               cov_scale=float(meta["cov_scale"]))
    samples_path = cfg["samples"] or os.path.join(run_dir, "samples.csv")
    if not os.path.exists(samples_path):
        raise ConfigError(f"samples not found: {samples_path}")
    samples = load_samples(samples_path, man)
    if samples.shape[0] == 0:
        raise ConfigError("no samples to evaluate")
    value = nll(samples, spec, truncation=int(cfg["truncation"]))
    row = {"run": cfg["run"], "manifold": man.name, "metric": "nll",
           "value": value, "config_hash": cfg_hash, "seed": cfg["seed"]}
    report(run_dir, [row], loss_log=_load_log(os.path.join(run_dir, "log.csv")),
           samples=samples if samples.shape[1] >= 2 else None,
           title=f"Run {cfg['run']} (config {cfg_hash[:12]}, seed {cfg['seed']})")
    print(f"nll = {value:.6f}")
    return 0


def cmd_eval_c2st(args) -> int:
    cfg = _resolve("eval-c2st", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "eval-c2st", cfg, cfg_hash)
    held_path = cfg["held_out"]
    if not held_path:
        raise ConfigError("--held-out is required (dataset or samples file)")
    if not os.path.exists(held_path):
        raise ConfigError(f"held-out file not found: {held_path}")
    samples_path = cfg["samples"]
    if samples_path is None:
        for suffix in ("jsonl", "csv"):
            candidate = os.path.join(run_dir, f"samples.{suffix}")
            if os.path.exists(candidate):
                samples_path = candidate
                break
    if samples_path is None or not os.path.exists(samples_path):
        raise ConfigError("generated samples not found; pass --samples")
    held, held_name = _load_points(held_path)
    gen, gen_name = _load_points(samples_path)
    man_name = gen_name or held_name or "-"
    c2st_cfg = C2stConfig(hidden=int(cfg["hidden"]), layers=int(cfg["layers"]),
                          epochs=int(cfg["epochs"]), split=float(cfg["split"]),
                          seed=cfg["seed"])
    rows = []
    m = min(len(gen), len(held))
    if m == 0:
        raise ConfigError("no samples to evaluate")
    score = c2st(gen[:m], held[:m], c2st_cfg)
    rows.append({"run": cfg["run"], "manifold": man_name, "metric": "c2st",
                 "value": score, "config_hash": cfg_hash, "seed": cfg["seed"]})
    if cfg["null_split"]:
        half = len(held) // 2
        null_score = c2st(held[:half], held[half:2 * half], c2st_cfg)
        rows.append({"run": cfg["run"], "manifold": man_name, "metric": "c2st_null",
                     "value": null_score, "config_hash": cfg_hash, "seed": cfg["seed"]})
    report(run_dir, rows, loss_log=_load_log(os.path.join(run_dir, "log.csv")),
           title=f"Run {cfg['run']} (config {cfg_hash[:12]}, seed {cfg['seed']})")
    for row in rows:
        print(f"{row['metric']} = {row['value']:.4f}")
    return 0


def _load_points(path: str):
    """(points, manifold name or None) from a dataset/sample file."""
    if path.endswith(".jsonl"):
        man, pts, _header = load_dataset(path)
        return pts, man.name
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x0"):
                continue
            rows.append([float(tok) for tok in line.split(",")])
    return np.asarray(rows), None


def cmd_bench(args) -> int:
    cfg = _resolve("bench", args)
    cfg_hash = _config_hash(cfg)
    run_dir = _run_dir(cfg)
    _record_config(run_dir, "bench", cfg, cfg_hash)
    kind = cfg["manifold"]
    if kind is None:
        raise ConfigError("--manifold is required")
    sizes = cfg["sizes"]
    if not sizes:
        raise ConfigError("--sizes is required (one or more n or d values)")
    rows = []
    for size in sizes:
        size = int(size)
        man = (make_manifold(kind, dim=size) if kind in ("torus", "sphere")
               else make_manifold(kind, n=size))
        mean_s, std_s = per_iteration_bench(man, batch=int(cfg["batch"]),
                                            trials=int(cfg["trials"]),
                                            hidden=int(cfg["hidden"]), seed=cfg["seed"])
        rows.append({"manifold": kind, "n_or_d": size, "mean_s": mean_s, "std_s": std_s})
        print(f"{kind} {size}: {mean_s:.4f} s/iter (std {std_s:.4f})")
    bench_path = os.path.join(run_dir, "bench.csv")
    with open(bench_path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={cfg['seed']}\n")
        fh.write("manifold,n_or_d,mean_s,std_s\n")
        for row in rows:
            fh.write(f"{row['manifold']},{row['n_or_d']},{row['mean_s']!r},{row['std_s']!r}\n")
    report(run_dir, [], bench_rows=rows,
           title=f"Benchmark {cfg['run']} (config {cfg_hash[:12]}, seed {cfg['seed']})")
    print(f"wrote {bench_path}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run", help="run name under runs/")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, help="RNG seed (fallback: MANIDIFF_SEED, then 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manidiff",
                                     description="diffusion generative modeling on symmetric manifolds")
    parser.add_argument("--version", action="version", version=f"manidiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a dataset")
    _add_common(p)
    p.add_argument("--manifold", choices=("torus", "sphere", "so", "u"))
    p.add_argument("--dim", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--dataset", choices=("wrapped_gaussian", "oscillator"))
    p.add_argument("--sigma2", type=float, help="tangent variance of the wrapped Gaussian")
    p.add_argument("--components", type=int, help="mixture components (1 = at the origin)")
    p.add_argument("--count", type=int)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--half-width", type=float)
    p.add_argument("--evolution-time", type=float)
    p.add_argument("--omega-min", type=float)
    p.add_argument("--omega-max", type=float)
    p.add_argument("--x0-std", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit drift/covariance models")
    _add_common(p)
    p.add_argument("--data", help="dataset path (default: runs/<run>/data.jsonl)")
    p.add_argument("--manifold", choices=("torus", "sphere", "so", "u"),
                   help="expected manifold; mismatch with the dataset is an error")
    p.add_argument("--dim", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--cov-hidden", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--cov-depth", type=int)
    p.add_argument("--arch", choices=("plain", "skip"))
    p.add_argument("--time-embed-dim", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--adam-beta2", type=float)
    p.add_argument("--min-gap", type=float)
    p.add_argument("--min-norm", type=float)
    p.add_argument("--s-min", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--resume", action="store_const", const=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="integrate the reverse SDE from a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint path (default: runs/<run>/ckpt.bin)")
    p.add_argument("--count", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--s-min", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval-nll", help="NLL of torus samples under the dataset target")
    _add_common(p)
    p.add_argument("--samples", help="samples file (default: runs/<run>/samples.csv)")
    p.add_argument("--data", help="dataset path carrying the target parameters")
    p.add_argument("--truncation", type=int)
    p.set_defaults(func=cmd_eval_nll)

    p = sub.add_parser("eval-c2st", help="classifier two-sample test")
    _add_common(p)
    p.add_argument("--samples", help="generated samples (default: runs/<run>/samples.*)")
    p.add_argument("--held-out", help="held-out points (dataset or samples file)")
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--null-split", action="store_const", const=True,
                   help="also score half of held-out against the other half")
    p.set_defaults(func=cmd_eval_c2st)

    p = sub.add_parser("bench", help="per-iteration training cost across sizes")
    _add_common(p)
    p.add_argument("--manifold", choices=("torus", "sphere", "so", "u"))
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--batch", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, SingularityError, DegeneracyError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
