"""Training loop: batched regression of the reverse-drift and covariance models
onto their closed-form targets.

Each iteration draws one t ~ Unif([0, T]) shared by the whole batch, samples
the forward process in closed form at s = T - t, computes targets, and takes
one optimizer step per model. Gated samples keep their slot in the batch with
weight zero (the objective is multiplied by the gate indicator, never
renormalized). Iterations whose entire batch is gated are skipped and counted;
their log rows carry NaN losses.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError
from .forward import GateConfig, clip_elapsed, ou_sample
from .manifolds import Manifold, Sphere, Torus, _MatrixGroup
from .nn import (
    AdamState,
    MlpConfig,
    MlpParams,
    adam_step,
    adam_to_doc,
    backward,
    doc_to_adam,
    doc_to_params,
    flatten_params,
    forward_cache,
    init_params,
    params_to_doc,
    save_checkpoint,
    sgd_step,
    unflatten_params,
)
from .targets import covariance_target, drift_target


@dataclass
class TrainConfig:
    manifold: Manifold
    iterations: int
    horizon: float = 5.0
    batch: int = 512
    lr: float = 1e-3
    seed: int = 0
    gate: GateConfig = field(default_factory=GateConfig)
    optimizer: str = "adam"          # "adam" | "sgd"
    adam_beta2: float = 0.999        # shorter memory recovers faster from
                                     # the heavy-tailed small-s gradient spikes
    drift_hidden: int = 512
    drift_depth: int = 4
    drift_arch: str | None = None    # default: "skip" for groups, "plain" otherwise
    cov_hidden: int = 512
    cov_depth: int = 4
    time_embed_dim: int = 64
    checkpoint_every: int = 0        # 0 disables periodic checkpoints
    workers: int = 1                 # accepted for config compatibility; computation is vectorized, not threaded

    def __post_init__(self):
        if self.horizon <= 0 or self.iterations < 1 or self.batch < 1:
            raise ContractError("need horizon > 0, iterations >= 1, batch >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.drift_arch is None:
            self.drift_arch = "skip" if isinstance(self.manifold, _MatrixGroup) else "plain"


@dataclass
class TrainReport:
    drift_loss: np.ndarray
    cov_loss: np.ndarray
    gated_count: np.ndarray
    seconds: np.ndarray


class DriftModel:
    """Net from (features, s/T) to an ambient drift; group outputs are
    tangent-projected before the loss and at prediction time."""

    def __init__(self, manifold: Manifold, params: MlpParams):
        self.manifold = manifold
        self.params = params

    @classmethod
    def fresh(cls, manifold: Manifold, rng, hidden=512, depth=4, arch=None, time_embed_dim=64):
        if arch is None:
            arch = "skip" if isinstance(manifold, _MatrixGroup) else "plain"
        cfg = MlpConfig(in_dim=manifold.feature_dim, hidden=hidden,
                        out_dim=manifold.ambient_dim, depth=depth, arch=arch,
                        time_embed_dim=time_embed_dim)
        return cls(manifold, init_params(cfg, rng))

    def _raw(self, points: np.ndarray, t_norm):
        feats = self.manifold.features(points)
        out, cache = forward_cache(self.params, feats, t_norm)
        return out, cache

    def predict(self, points: np.ndarray, t_norm) -> np.ndarray:
        single = points.ndim == (1 if isinstance(self.manifold, (Torus, Sphere)) else 2)
        pts = points[None] if single else points
        out, _ = self._raw(pts, t_norm)
        amb = self.manifold.flat_to_ambient(out)
        if isinstance(self.manifold, _MatrixGroup):
            amb = self.manifold.tangent_project(pts, amb)
        return amb[0] if single else amb

    def loss_and_grad(self, points: np.ndarray, t_norm, target: np.ndarray, weights: np.ndarray):
        out, cache = self._raw(points, t_norm)
        amb = self.manifold.flat_to_ambient(out)
        if isinstance(self.manifold, _MatrixGroup):
            amb = self.manifold.tangent_project(points, amb)
        res = amb - target
        b = len(points)
        w = weights.reshape((b,) + (1,) * (res.ndim - 1))
        loss = float(np.sum(w * np.abs(res) ** 2) / b)
        # the tangent projector is self-adjoint and fixes res, so the chain
        # rule through it leaves the scaled residual unchanged
        dout = self.manifold.ambient_to_flat((2.0 / b) * w * res)
        return loss, backward(self.params, cache, dout)


class CovarianceModel:
    """Scalar head (sphere) or strictly-upper antisymmetric head (groups)."""

    def __init__(self, manifold: Manifold, params: MlpParams):
        if isinstance(manifold, Torus):
            raise ContractError("the torus has identity covariance; no model")
        self.manifold = manifold
        self.params = params
        if isinstance(manifold, _MatrixGroup):
            self._iu, self._ju = np.triu_indices(manifold.n, k=1)

    @classmethod
    def fresh(cls, manifold: Manifold, rng, hidden=512, depth=4, time_embed_dim=64):
        out_dim = 1 if isinstance(manifold, Sphere) else manifold.n * (manifold.n - 1) // 2
        cfg = MlpConfig(in_dim=manifold.feature_dim, hidden=hidden, out_dim=out_dim,
                        depth=depth, arch="plain", time_embed_dim=time_embed_dim)
        return cls(manifold, init_params(cfg, rng))

    def predict(self, points: np.ndarray, t_norm):
        single = points.ndim == (1 if isinstance(self.manifold, Sphere) else 2)
        pts = points[None] if single else points
        feats = self.manifold.features(pts)
        out, _ = forward_cache(self.params, feats, t_norm)
        if isinstance(self.manifold, Sphere):
            val = out[:, 0]
            return float(val[0]) if single else val
        n = self.manifold.n
        a = np.zeros(out.shape[:-1] + (n, n))
        a[..., self._iu, self._ju] = out
        a = a - np.swapaxes(a, -1, -2)
        return a[0] if single else a

    def loss_and_grad(self, points: np.ndarray, t_norm, target, weights: np.ndarray):
        feats = self.manifold.features(points)
        out, cache = forward_cache(self.params, feats, t_norm)
        b = len(points)
        if isinstance(self.manifold, Sphere):
            res = out[:, 0] - target
            loss = float(np.sum(weights * res**2) / b)
            dout = ((2.0 / b) * weights * res)[:, None]
        else:
            res = out - target[..., self._iu, self._ju]
            # ||A_hat - A||_F^2 doubles the strict upper entries by antisymmetry
            loss = float(np.sum(weights[:, None] * 2.0 * res**2) / b)
            dout = (4.0 / b) * weights[:, None] * res
        return loss, backward(self.params, cache, dout)


def _step(flat, params_cfg, state, grad, optimizer, lr):
    if optimizer == "adam":
        new_flat = adam_step(flat, state, grad)
    else:
        new_flat = sgd_step(flat, lr, grad)
    return new_flat, unflatten_params(params_cfg, new_flat)


def train(
    dataset: np.ndarray,
    cfg: TrainConfig,
    log_path: str | None = None,
    checkpoint_path: str | None = None,
    checkpoint_meta: dict | None = None,
    resume_doc: dict | None = None,
    log_comment: str | None = None,
):
    """Returns (DriftModel, CovarianceModel or None, TrainReport).

    resume_doc: a loaded checkpoint document; training continues from its
    parameters, optimizer states, and iteration counter (log rows append
    to the existing count).
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    m = cfg.manifold
    rng = np.random.default_rng(cfg.seed)
    offset = 0
    if resume_doc is not None:
        if resume_doc["manifold"] != m.to_json():
            raise ContractError("checkpoint manifold does not match the config")
        _, _, drift, cov = load_models(resume_doc)
        offset = int(resume_doc.get("iterations_done", 0))
        drift_flat = flatten_params(drift.params)
        drift_state = (doc_to_adam(resume_doc["adam_drift"])
                       if resume_doc.get("adam_drift")
                       else AdamState.fresh(drift_flat.size, lr=cfg.lr, beta2=cfg.adam_beta2))
        cov_flat = flatten_params(cov.params) if cov else None
        cov_state = None
        if cov:
            cov_state = (doc_to_adam(resume_doc["adam_cov"])
                         if resume_doc.get("adam_cov")
                         else AdamState.fresh(cov_flat.size, lr=cfg.lr, beta2=cfg.adam_beta2))
    else:
        drift = DriftModel.fresh(m, rng, hidden=cfg.drift_hidden, depth=cfg.drift_depth,
                                 arch=cfg.drift_arch, time_embed_dim=cfg.time_embed_dim)
        cov = None
        if not isinstance(m, Torus):
            cov = CovarianceModel.fresh(m, rng, hidden=cfg.cov_hidden, depth=cfg.cov_depth,
                                        time_embed_dim=cfg.time_embed_dim)
        drift_flat = flatten_params(drift.params)
        drift_state = AdamState.fresh(drift_flat.size, lr=cfg.lr, beta2=cfg.adam_beta2)
        cov_flat = flatten_params(cov.params) if cov else None
        cov_state = (AdamState.fresh(cov_flat.size, lr=cfg.lr, beta2=cfg.adam_beta2)
                     if cov else None)

    origins_all = m.lift(dataset)
    report = TrainReport(
        drift_loss=np.full(cfg.iterations, np.nan),
        cov_loss=np.full(cfg.iterations, np.nan),
        gated_count=np.zeros(cfg.iterations, dtype=int),
        seconds=np.zeros(cfg.iterations),
    )
    log_fh = open(log_path, "a" if offset else "w") if log_path else None
    if log_fh and not offset:
        if log_comment:
            log_fh.write(f"# {log_comment}\n")
        log_fh.write("iteration,drift_loss,cov_loss,gated_count,seconds\n")
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            # one diffusion time per sample: a shared per-batch time lets the
            # high-frequency part of the time embedding memorize the
            # conditional noise of individual iterations, which shows up as a
            # ~1e4-frequency comb in the learned drift
            t_diff = rng.uniform(0.0, cfg.horizon, size=cfg.batch)
            s = clip_elapsed(cfg.horizon - t_diff, cfg.gate)
            idx = rng.integers(0, len(dataset), size=cfg.batch)
            origin = origins_all[idx]
            smp = ou_sample(m, origin, s, rng, cfg.gate)
            ok = np.atleast_1d(smp.gate_ok)
            gated = int(cfg.batch - ok.sum())
            report.gated_count[it] = gated
            if gated == cfg.batch:
                report.seconds[it] = time.perf_counter() - t0
                if log_fh:
                    log_fh.write(f"{it + offset},nan,nan,{gated},{report.seconds[it]:.6f}\n")
                continue
            # degenerate rows would break projection; give them a safe stand-in,
            # their weight is zero
            mask = ok.reshape((cfg.batch,) + (1,) * (smp.z.ndim - 1))
            z = np.where(mask, smp.z, origin)
            points = m.project(z)
            w = ok.astype(float)
            t_norm = s / cfg.horizon
            dt = drift_target(m, z, origin, s, cfg.gate)
            d_loss, d_grad = drift.loss_and_grad(points, t_norm, dt.value, w)
            if not np.isfinite(d_loss):
                raise NumericalError(f"drift loss became non-finite at iteration {it}")
            drift_flat, drift.params = _step(drift_flat, drift.params.cfg, drift_state,
                                             d_grad, cfg.optimizer, cfg.lr)
            report.drift_loss[it] = d_loss
            c_loss = np.nan
            if cov is not None:
                ct = covariance_target(m, z, cfg.gate)
                tgt = ct.alpha if isinstance(m, Sphere) else ct.gap
                c_loss, c_grad = cov.loss_and_grad(points, t_norm, tgt, w)
                if not np.isfinite(c_loss):
                    raise NumericalError(f"covariance loss became non-finite at iteration {it}")
                cov_flat, cov.params = _step(cov_flat, cov.params.cfg, cov_state,
                                             c_grad, cfg.optimizer, cfg.lr)
                report.cov_loss[it] = c_loss
            report.seconds[it] = time.perf_counter() - t0
            if log_fh:
                log_fh.write(f"{it + offset},{d_loss:.8e},{c_loss:.8e},{gated},{report.seconds[it]:.6f}\n")
            if (checkpoint_path and cfg.checkpoint_every
                    and (it + 1) % cfg.checkpoint_every == 0):
                save_models(checkpoint_path, cfg, drift, cov, drift_state, cov_state,
                            meta=checkpoint_meta, iterations_done=offset + it + 1)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_models(checkpoint_path, cfg, drift, cov, drift_state, cov_state,
                    meta=checkpoint_meta, iterations_done=offset + cfg.iterations)
    return drift, cov, report


def save_models(path, cfg: TrainConfig, drift: DriftModel, cov, drift_state=None,
                cov_state=None, meta=None, iterations_done=0):
    payload = {
        "manifold": cfg.manifold.to_json(),
        "horizon": cfg.horizon,
        "iterations_done": int(iterations_done),
        "drift": params_to_doc(drift.params),
        "cov": params_to_doc(cov.params) if cov else None,
        "adam_drift": adam_to_doc(drift_state) if drift_state else None,
        "adam_cov": adam_to_doc(cov_state) if cov_state else None,
    }
    if meta:
        payload["meta"] = meta
    save_checkpoint(path, payload)


def load_models(doc: dict):
    """(manifold, horizon, DriftModel, CovarianceModel or None) from a
    checkpoint document (see nn.load_checkpoint)."""
    from .manifolds import manifold_from_json

    m = manifold_from_json(doc["manifold"])
    drift = DriftModel(m, doc_to_params(doc["drift"]))
    cov = CovarianceModel(m, doc_to_params(doc["cov"])) if doc.get("cov") else None
    return m, doc["horizon"], drift, cov


def per_iteration_bench(manifold: Manifold, batch: int = 512, trials: int = 7,
                        hidden: int = 512, seed: int = 0):
    """Mean and std of one full training-iteration wall clock, in seconds.

    Runs trials + 2 iterations on a small synthetic dataset and discards the
    first two as warmup.
    """
    if trials < 5:
        raise ContractError("trials must be at least 5")
    rng = np.random.default_rng(seed)
    dataset = manifold.random_point(rng, count=min(batch, 256))
    cfg = TrainConfig(manifold=manifold, iterations=trials + 2, batch=batch,
                      seed=seed, drift_hidden=hidden, cov_hidden=hidden)
    _, _, report = train(dataset, cfg)
    timed = report.seconds[2:]
    return float(np.mean(timed)), float(np.std(timed))
