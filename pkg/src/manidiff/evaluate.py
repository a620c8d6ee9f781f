"""Sample-quality metrics and run reports.

Negative log-likelihood against a known torus target density, the classifier
two-sample test (C2ST) for distributions without a tractable density, and a
report writer emitting markdown + CSV (plus rendered figures) per run.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .data import WrappedGaussianSpec, wrapped_gaussian_log_density
from .errors import ContractError
from . import nn


def nll(samples: np.ndarray, spec: WrappedGaussianSpec, truncation: int = 6) -> float:
    """Per-dimension negative log-likelihood of torus samples under the
    wrapped-Gaussian target: -(1/(n d)) sum_i log g(y_i)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ContractError("nll needs at least one sample")
    log_g = wrapped_gaussian_log_density(spec, samples, truncation=truncation)
    value = float(-np.mean(log_g) / samples.shape[1])
    if not np.isfinite(value):
        raise ContractError("non-finite log-likelihood")
    return value


@dataclass
class C2stConfig:
    hidden: int = 128
    layers: int = 3
    epochs: int = 200
    split: float = 0.5
    seed: int = 0
    lr: float = 1e-3
    val_fraction: float = 0.1
    patience: int = 20

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ContractError("split must lie in (0, 1)")
        if self.layers < 1 or self.hidden < 1 or self.epochs < 1:
            raise ContractError("need layers >= 1, hidden >= 1, epochs >= 1")


def _feature_matrix(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points)
    m = points.shape[0]
    if np.iscomplexobj(points):
        return np.stack([points.real, points.imag], axis=-1).reshape(m, -1)
    return points.reshape(m, -1).astype(float)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logistic_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, logits) - labels * logits))


def c2st(generated: np.ndarray, held_out: np.ndarray, cfg: C2stConfig | None = None) -> float:
    """Classifier two-sample test score |t_hat - 1/2| + 1/2 in [0.5, 1].

    0.5 means the classifier cannot distinguish the two sets, 1.0 means fully
    separable. A 3-layer MLP with logistic loss is trained full-batch on a
    shuffled half of the pooled points (features standardized on that half)
    and t_hat is its accuracy on the other half.
    """
    if cfg is None:
        cfg = C2stConfig()
    a = _feature_matrix(generated)
    b = _feature_matrix(held_out)
    if a.shape[0] != b.shape[0]:
        raise ContractError("c2st needs equal sample counts per side")
    if a.shape[1] != b.shape[1]:
        raise ContractError("feature dimensions differ between the two sets")
    m = a.shape[0]
    if m < 100:
        warnings.warn("fewer than 100 samples per side: high-variance estimate")
    rng = np.random.default_rng(cfg.seed)
    x = np.concatenate([a, b], axis=0)
    y = np.concatenate([np.ones(m), np.zeros(m)])
    perm = rng.permutation(2 * m)
    x, y = x[perm], y[perm]
    n_tr = int(round(2 * m * cfg.split))
    n_tr = min(max(n_tr, 2), 2 * m - 2)
    x_tr, y_tr = x[:n_tr], y[:n_tr]
    x_te, y_te = x[n_tr:], y[n_tr:]

    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd

    n_val = max(1, int(round(cfg.val_fraction * n_tr)))
    x_val, y_val = x_tr[:n_val], y_tr[:n_val]
    x_fit, y_fit = x_tr[n_val:], y_tr[n_val:]

    mlp_cfg = nn.MlpConfig(in_dim=x.shape[1], hidden=cfg.hidden, out_dim=1,
                           depth=cfg.layers - 1, arch="plain", time_embed_dim=0)
    params = nn.init_params(mlp_cfg, rng)
    flat = nn.flatten_params(params)
    state = nn.AdamState.fresh(flat.size, lr=cfg.lr)
    best_flat, best_val, since_best = flat.copy(), np.inf, 0
    nb = y_fit.shape[0]
    for _ in range(cfg.epochs):
        out, cache = nn.forward_cache(params, x_fit, 0.0)
        logits = out[:, 0]
        dout = ((_sigmoid(logits) - y_fit) / nb)[:, None]
        grad = nn.backward(params, cache, dout)
        flat = nn.adam_step(flat, state, grad)
        params = nn.unflatten_params(mlp_cfg, flat)
        val_logits = nn.forward_cache(params, x_val, 0.0)[0][:, 0]
        val_loss = _logistic_loss(val_logits, y_val)
        if val_loss < best_val - 1e-12:
            best_val, best_flat, since_best = val_loss, flat.copy(), 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    params = nn.unflatten_params(mlp_cfg, best_flat)
    te_logits = nn.forward_cache(params, x_te, 0.0)[0][:, 0]
    t_hat = float(np.mean((te_logits > 0.0) == (y_te > 0.5)))
    return abs(t_hat - 0.5) + 0.5


REPORT_COLUMNS = ("run", "manifold", "metric", "value", "config_hash", "seed")
BENCH_COLUMNS = ("manifold", "n_or_d", "mean_s", "std_s")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report(
    out_dir: str,
    metrics: list[dict],
    bench_rows: list[dict] | None = None,
    loss_log: dict | None = None,
    samples: np.ndarray | None = None,
    title: str = "Run report",
) -> dict:
    """Write report.csv (stable column order, no wall-clock fields) and
    report.md; render figures to PNG files alongside when material exists.

    metrics rows use keys from REPORT_COLUMNS; bench_rows use BENCH_COLUMNS
    and mirror the runtime-table layout (manifold, n_or_d, mean_s, std_s).
    loss_log maps column name -> array (from the training log) and yields a
    loss-curve figure; samples holds 2d torus points and yields a scatter.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in metrics:
            fh.write(",".join(_fmt(row.get(c)) for c in REPORT_COLUMNS) + "\n")
    paths["csv"] = csv_path

    figures = []
    if loss_log:
        figures.append(_render_loss_curve(out_dir, loss_log))
    if samples is not None and np.asarray(samples).ndim == 2 and np.asarray(samples).shape[1] >= 2:
        figures.append(_render_scatter(out_dir, np.asarray(samples)))
    paths["figures"] = figures

    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w") as fh:
        fh.write(f"# {title}\n\n## Metrics\n\n")
        fh.write("| " + " | ".join(REPORT_COLUMNS) + " |\n")
        fh.write("|" + "---|" * len(REPORT_COLUMNS) + "\n")
        for row in metrics:
            fh.write("| " + " | ".join(_fmt(row.get(c)) for c in REPORT_COLUMNS) + " |\n")
        if bench_rows:
            fh.write("\n## Runtime\n\n")
            fh.write("| " + " | ".join(BENCH_COLUMNS) + " |\n")
            fh.write("|" + "---|" * len(BENCH_COLUMNS) + "\n")
            for row in bench_rows:
                fh.write("| " + " | ".join(_fmt(row.get(c)) for c in BENCH_COLUMNS) + " |\n")
        if figures:
            fh.write("\n## Figures\n\n")
            for fig in figures:
                name = os.path.basename(fig)
                fh.write(f"![{name}]({name})\n")
    paths["md"] = md_path
    return paths


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _render_loss_curve(out_dir: str, loss_log: dict) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    it = np.asarray(loss_log.get("iteration", np.arange(len(next(iter(loss_log.values()))))))
    for key in ("drift_loss", "cov_loss"):
        if key in loss_log:
            vals = np.asarray(loss_log[key], dtype=float)
            ok = np.isfinite(vals)
            if np.any(ok):
                ax.plot(it[ok], vals[ok], label=key, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "loss_curve.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _render_scatter(out_dir: str, samples: np.ndarray) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(samples[:, 0], samples[:, 1], s=4, alpha=0.4)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    fig.tight_layout()
    path = os.path.join(out_dir, "samples.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
