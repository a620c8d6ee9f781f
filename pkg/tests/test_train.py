"""Training loop: determinism, gating semantics, optimizer plumbing, resume."""

import numpy as np
import pytest

from manidiff.errors import ContractError, NumericalError
from manidiff.forward import GateConfig
from manidiff.manifolds import make_manifold
from manidiff.nn import flatten_params, load_checkpoint
from manidiff.train import (
    DriftModel,
    TrainConfig,
    load_models,
    per_iteration_bench,
    save_models,
    train,
)


def _torus_data(rng, d=2, count=400):
    return rng.uniform(0, 2 * np.pi, size=(count, d))


def test_config_validation():
    man = make_manifold("torus", dim=2)
    with pytest.raises(ContractError):
        TrainConfig(manifold=man, iterations=0)
    with pytest.raises(ContractError):
        TrainConfig(manifold=man, iterations=1, horizon=0.0)
    with pytest.raises(ContractError):
        TrainConfig(manifold=man, iterations=1, optimizer="lbfgs")
    assert TrainConfig(manifold=man, iterations=1).drift_arch == "plain"
    assert TrainConfig(manifold=make_manifold("u", n=2), iterations=1).drift_arch == "skip"


def test_empty_dataset_rejected():
    man = make_manifold("torus", dim=2)
    with pytest.raises(ContractError):
        train(np.zeros((0, 2)), TrainConfig(manifold=man, iterations=1))


def test_lr_zero_keeps_initialization(rng):
    man = make_manifold("torus", dim=2)
    data = _torus_data(rng)
    cfg = TrainConfig(manifold=man, iterations=1, batch=16, lr=0.0, seed=3,
                      drift_hidden=8, drift_depth=2, time_embed_dim=4)
    drift, cov, _ = train(data, cfg)
    assert cov is None
    fresh = DriftModel.fresh(man, np.random.default_rng(3), hidden=8, depth=2,
                             arch="plain", time_embed_dim=4)
    assert np.array_equal(flatten_params(drift.params), flatten_params(fresh.params))


def test_training_is_deterministic(rng):
    man = make_manifold("sphere", dim=3)
    data = man.random_point(np.random.default_rng(1), count=200)
    cfg = TrainConfig(manifold=man, iterations=25, batch=32, seed=9,
                      drift_hidden=8, drift_depth=2, cov_hidden=8, cov_depth=2,
                      time_embed_dim=4)
    d1, c1, r1 = train(data, cfg)
    d2, c2, r2 = train(data, cfg)
    assert np.array_equal(r1.drift_loss, r2.drift_loss)
    assert np.array_equal(r1.cov_loss, r2.cov_loss)
    assert np.array_equal(r1.gated_count, r2.gated_count)
    assert np.array_equal(flatten_params(d1.params), flatten_params(d2.params))
    assert np.array_equal(flatten_params(c1.params), flatten_params(c2.params))


def test_report_lengths_match_iterations(rng):
    man = make_manifold("torus", dim=2)
    cfg = TrainConfig(manifold=man, iterations=7, batch=8, drift_hidden=4,
                      drift_depth=1, time_embed_dim=2)
    _, _, rep = train(_torus_data(rng, count=50), cfg)
    for arr in (rep.drift_loss, rep.cov_loss, rep.gated_count, rep.seconds):
        assert len(arr) == 7
    assert np.all(np.isfinite(rep.drift_loss))
    assert np.all(np.isnan(rep.cov_loss))  # torus trains no covariance model


def test_gated_rows_contribute_exactly_zero(rng):
    # weight-0 rows and physically-removed rows give the same gradient once
    # the 1/batch scaling is undone
    man = make_manifold("sphere", dim=3)
    model = DriftModel.fresh(man, rng, hidden=8, depth=2, time_embed_dim=4)
    pts = man.random_point(np.random.default_rng(2), count=3)
    tgt = np.random.default_rng(3).standard_normal((3, 3))
    _, g3 = model.loss_and_grad(pts, 0.4, tgt, np.array([1.0, 1.0, 0.0]))
    _, g2 = model.loss_and_grad(pts[:2], 0.4, tgt[:2], np.ones(2))
    assert np.allclose(3.0 * g3, 2.0 * g2, atol=1e-14)


def test_all_gated_batches_are_skipped(rng):
    # a norm gate nothing can pass: every iteration skips, params never move
    man = make_manifold("sphere", dim=3)
    data = man.random_point(rng, count=64)
    cfg = TrainConfig(manifold=man, iterations=4, batch=16, seed=5,
                      gate=GateConfig(min_norm=50.0), drift_hidden=8,
                      drift_depth=1, cov_hidden=8, cov_depth=1, time_embed_dim=2)
    drift, cov, rep = train(data, cfg)
    assert np.all(rep.gated_count == 16)
    assert np.all(np.isnan(rep.drift_loss))
    fresh_rng = np.random.default_rng(5)
    fd = DriftModel.fresh(man, fresh_rng, hidden=8, depth=1, time_embed_dim=2)
    assert np.array_equal(flatten_params(drift.params), flatten_params(fd.params))


def test_nonfinite_loss_aborts(rng):
    man = make_manifold("torus", dim=2)
    cfg = TrainConfig(manifold=man, iterations=3, batch=8, lr=1e300,
                      optimizer="sgd", drift_hidden=4, drift_depth=1,
                      time_embed_dim=2)
    with pytest.raises(NumericalError):
        train(_torus_data(rng, count=32), cfg)


def test_single_point_learns_conditional_mean():
    # one-point dataset: the posterior over ambient branches is closed-form,
    # so the learned drift at the data point, late in the reverse pass, must
    # approach the conditional mean of the regression target
    man = make_manifold("torus", dim=1)
    data = np.full((64, 1), np.pi)
    cfg = TrainConfig(manifold=man, iterations=2000, batch=128, seed=0,
                      drift_hidden=64, drift_depth=3, lr=3e-3,
                      time_embed_dim=32, gate=GateConfig(s_min=0.05))
    drift, _, rep = train(data, cfg)
    b = float(man.lift(data[:1])[0, 0])
    y = np.pi
    for s in (0.25, 0.5):
        ms = np.arange(-6, 7)
        z = y + 2 * np.pi * ms
        es = np.exp(-s)
        mu = b * np.exp(-s / 2)
        logw = -0.5 * (z - mu) ** 2 / (1 - es)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        oracle = float(np.sum(w * (0.5 * z + (z - mu) / (es - 1.0))))
        got = float(drift.predict(np.array([y]), s / cfg.horizon)[0])
        assert abs(got - oracle) < 0.1, f"s={s}: drift {got} vs mean {oracle}"


def test_loss_curve_reaches_one_fifth_of_start(torus_e2e):
    # wrapped-Gaussian torus run: smoothed late loss under 20% of the early loss
    loss = torus_e2e["report"].drift_loss
    early = np.median(loss[:60])
    late = np.median(loss[-101:])
    assert late < 0.2 * early, f"late {late:.3f} vs early {early:.3f}"


def test_checkpoint_and_resume(tmp_path, rng):
    man = make_manifold("torus", dim=2)
    data = _torus_data(rng, count=100)
    path = str(tmp_path / "ck.json")
    cfg = TrainConfig(manifold=man, iterations=6, batch=8, seed=1,
                      drift_hidden=4, drift_depth=1, time_embed_dim=2,
                      checkpoint_every=2)
    d1, _, _ = train(data, cfg, checkpoint_path=path)
    doc = load_checkpoint(path)
    assert doc["iterations_done"] == 6
    m2, horizon, d2, c2 = load_models(doc)
    assert m2.to_json() == man.to_json()
    assert horizon == cfg.horizon
    assert c2 is None
    assert np.array_equal(flatten_params(d1.params), flatten_params(d2.params))

    more = TrainConfig(manifold=man, iterations=4, batch=8, seed=1,
                       drift_hidden=4, drift_depth=1, time_embed_dim=2)
    d3, _, _ = train(data, more, checkpoint_path=path, resume_doc=doc)
    doc2 = load_checkpoint(path)
    assert doc2["iterations_done"] == 10
    assert not np.array_equal(flatten_params(d3.params), flatten_params(d1.params))

    bad = dict(doc, manifold={"kind": "torus", "dim": 3})
    with pytest.raises(ContractError):
        train(data, more, resume_doc=bad)


def test_save_models_round_trip(tmp_path, rng):
    man = make_manifold("sphere", dim=3)
    data = man.random_point(rng, count=50)
    cfg = TrainConfig(manifold=man, iterations=2, batch=8, seed=2,
                      drift_hidden=4, drift_depth=1, cov_hidden=4, cov_depth=1,
                      time_embed_dim=2)
    drift, cov, _ = train(data, cfg)
    path = str(tmp_path / "models.json")
    save_models(path, cfg, drift, cov, iterations_done=2)
    m2, horizon, d2, c2 = load_models(load_checkpoint(path))
    assert isinstance(m2, type(man)) and horizon == cfg.horizon
    assert np.array_equal(flatten_params(d2.params), flatten_params(drift.params))
    assert np.array_equal(flatten_params(c2.params), flatten_params(cov.params))


def test_train_log_file(tmp_path, rng):
    man = make_manifold("torus", dim=2)
    path = str(tmp_path / "log.csv")
    cfg = TrainConfig(manifold=man, iterations=3, batch=8, drift_hidden=4,
                      drift_depth=1, time_embed_dim=2)
    train(_torus_data(rng, count=40), cfg, log_path=path)
    lines = open(path).read().strip().splitlines()
    assert lines[0] == "iteration,drift_loss,cov_loss,gated_count,seconds"
    assert len(lines) == 4
    assert lines[1].startswith("0,")


def test_sgd_optimizer_moves_params(rng):
    man = make_manifold("torus", dim=2)
    cfg = TrainConfig(manifold=man, iterations=5, batch=16, optimizer="sgd",
                      lr=1e-3, seed=4, drift_hidden=4, drift_depth=1,
                      time_embed_dim=2)
    drift, _, rep = train(_torus_data(rng, count=80), cfg)
    fresh = DriftModel.fresh(man, np.random.default_rng(4), hidden=4, depth=1,
                             arch="plain", time_embed_dim=2)
    assert not np.array_equal(flatten_params(drift.params), flatten_params(fresh.params))
    assert np.all(np.isfinite(rep.drift_loss))


def test_bench_contract():
    man = make_manifold("torus", dim=2)
    with pytest.raises(ContractError):
        per_iteration_bench(man, trials=4)
    mean_s, std_s = per_iteration_bench(man, batch=16, trials=5, hidden=8)
    assert mean_s > 0 and std_s >= 0
