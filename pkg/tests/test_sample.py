import numpy as np
import pytest

from manidiff.errors import ContractError, NumericalError
from manidiff.manifolds import make_manifold
from manidiff.sample import (
    SampleConfig,
    generate,
    load_samples,
    save_samples,
    stub_sampler_check,
    true_torus_reversal,
)

TWO_PI = 2.0 * np.pi


def zero_drift(y, s):
    return np.zeros_like(y)


def zero_cov_torus(y, s):
    return np.zeros(y.shape[:-1])


# -- config contract ---------------------------------------------------------------

def test_config_rejects_non_divisor_step():
    with pytest.raises(ContractError):
        SampleConfig(horizon=1.0, step=0.3, count=10)


def test_config_accepts_exact_divisor():
    SampleConfig(horizon=5.0, step=1e-2, count=10)
    SampleConfig(horizon=1.0, step=0.25, count=1)


@pytest.mark.parametrize("kwargs", [
    dict(horizon=1.0, step=-0.1, count=10),
    dict(horizon=0.0, step=0.1, count=10),
    dict(horizon=1.0, step=0.1, count=0),
    dict(horizon=1.0, step=0.1, count=10, s_min=0.0),
    dict(horizon=1.0, step=0.1, count=10, s_min=1.0),
])
def test_config_rejects_bad_fields(kwargs):
    with pytest.raises(ContractError):
        SampleConfig(**kwargs)


# -- degenerate SDEs with known outcomes -------------------------------------------

def test_zero_drift_zero_cov_is_fixed_point():
    man = make_manifold("torus", dim=3)
    cfg = SampleConfig(horizon=2.0, step=0.1, count=50, seed=4, s_min=0.05)
    start = man.project(np.random.default_rng(cfg.seed)
                        .standard_normal((cfg.count, man.dim)))
    out = generate(man, zero_drift, zero_cov_torus, cfg)
    assert np.allclose(out, start, atol=1e-12)


def test_zero_drift_zero_cov_fixed_point_on_groups():
    for kind, kw in (("so", dict(n=3)), ("u", dict(n=3))):
        man = make_manifold(kind, **kw)
        cfg = SampleConfig(horizon=1.0, step=0.1, count=8, seed=2, s_min=0.05)
        rng = np.random.default_rng(cfg.seed)
        z0 = rng.standard_normal((cfg.count, man.n, man.n))
        if man.complex_entries:
            z0 = z0 + 1j * rng.standard_normal((cfg.count, man.n, man.n))
        start = man.project(z0)

        def gcov(y, s):
            return np.zeros(y.shape[:-2] + (man.n, man.n))

        out = generate(man, lambda y, s: np.zeros_like(y), gcov, cfg)
        assert np.max(np.abs(out - start)) < 1e-12


def test_constant_drift_is_exact_euler():
    # d=1, f == c, g == 0: every step adds exactly c*h, so the terminal point
    # is the start plus c times the integrated span, wrapped
    man = make_manifold("torus", dim=1)
    c = 1.3
    cfg = SampleConfig(horizon=2.0, step=0.1, count=200, seed=9, s_min=1e-9)
    start = man.project(np.random.default_rng(cfg.seed)
                        .standard_normal((cfg.count, 1)))
    out = generate(man, lambda y, s: np.full_like(y, c), zero_cov_torus, cfg)
    expect = np.mod(start + c * (cfg.horizon - cfg.s_min), TWO_PI)
    diff = np.abs(np.mod(out - expect + np.pi, TWO_PI) - np.pi)
    assert np.max(diff) < 1e-7


def test_deterministic_given_seed():
    man = make_manifold("torus", dim=2)
    drift = true_torus_reversal(np.zeros(2))
    cfg = SampleConfig(horizon=3.0, step=0.05, count=64, seed=123, s_min=0.3)
    a = generate(man, drift, None, cfg)
    b = generate(man, drift, None, cfg)
    assert np.array_equal(a, b)


# -- analytic reverse SDE against the forward process -------------------------------

def test_point_mass_reversal_matches_forward_projection():
    # dataset = single point at angle 0; reverse-integrate the closed-form
    # drift and compare terminal circular moments against directly projected
    # OU marginals at the stop time
    man = make_manifold("torus", dim=1)
    origin = np.zeros(1)
    cfg = SampleConfig(horizon=5.0, step=1e-2, count=10_000, seed=3, s_min=0.3)
    stats = stub_sampler_check(man, true_torus_reversal(origin), None, cfg)

    rng = np.random.default_rng(77)
    s = cfg.s_min
    amb = origin * np.exp(-0.5 * s) + np.sqrt(1.0 - np.exp(-s)) * rng.standard_normal((cfg.count, 1))
    fwd = man.project(amb)
    ph = np.mean(np.exp(1j * fwd), axis=0)
    mean_diff = np.abs(np.angle(np.exp(1j * (stats["circular_mean"] - np.angle(ph)))))
    assert np.max(mean_diff) < 0.05
    cv_fwd = 1.0 - np.abs(ph)
    cv_rev = stats["circular_variance"]
    assert np.max(np.abs(cv_rev - cv_fwd) / cv_fwd) < 0.05


def test_step_refinement_is_first_order():
    # g == 0 and state-independent drift c*cos(s): the scheme reduces to a
    # rectangle rule for the time integral, so the error against the exact
    # integral should halve when the step halves
    man = make_manifold("torus", dim=1)
    c = 0.7

    def drift(y, s):
        return np.full_like(y, c * np.cos(s))

    s_min = 0.25
    horizon = 2.0
    start = man.project(np.random.default_rng(5).standard_normal((32, 1)))
    exact = np.mod(start + c * (np.sin(horizon) - np.sin(s_min)), TWO_PI)
    errs = []
    for step in (0.25, 0.125):
        cfg = SampleConfig(horizon=horizon, step=step, count=32, seed=5, s_min=s_min)
        out = generate(man, drift, zero_cov_torus, cfg)
        diff = np.abs(np.mod(out - exact + np.pi, TWO_PI) - np.pi)
        errs.append(np.max(diff))
    ratio = errs[0] / errs[1]
    assert 1.5 < ratio < 2.5, f"refinement ratio {ratio} (errors {errs})"


def test_halved_step_changes_stats_within_mc_error():
    man = make_manifold("torus", dim=1)
    drift = true_torus_reversal(np.zeros(1))
    res = []
    for step in (2e-2, 1e-2):
        cfg = SampleConfig(horizon=5.0, step=step, count=10_000, seed=31, s_min=0.3)
        stats = stub_sampler_check(man, drift, None, cfg)
        res.append(float(stats["circular_variance"][0]))
    # MC standard error of the resultant at 1e4 paths is about 0.5/sqrt(n)
    assert abs(res[0] - res[1]) < 3.0 * 0.5 / np.sqrt(10_000)


# -- manifold preservation ----------------------------------------------------------

def test_invariant_residuals_torus_sphere():
    for kind, dim, tol in (("torus", 3, 1e-12), ("sphere", 4, 1e-12)):
        man = make_manifold(kind, dim=dim)
        cfg = SampleConfig(horizon=1.0, step=0.05, count=32, seed=8, s_min=0.05)
        rng_drift = np.random.default_rng(1)
        w = rng_drift.standard_normal((man.ambient_dim,))

        def drift(y, s):
            return np.broadcast_to(0.3 * w, y.shape)

        _, info = generate(man, drift, None, cfg, return_info=True)
        assert info["max_residual"] <= tol
        assert info["dropped"] == 0


def test_invariant_residuals_groups():
    for kind, n in (("so", 3), ("u", 3)):
        man = make_manifold(kind, n=n)
        cfg = SampleConfig(horizon=1.0, step=0.05, count=16, seed=8, s_min=0.05)

        def drift(y, s):
            rnd = np.random.default_rng(0).standard_normal(y.shape[-2:])
            return man.tangent_project(y, np.broadcast_to(rnd, y.shape))

        def cov(y, s):
            return np.ones(y.shape[:-2] + (n, n))

        _, info = generate(man, drift, cov, cfg, return_info=True)
        assert info["max_residual"] <= 1e-6
        assert info["dropped"] == 0


def test_group_sampling_requires_covariance():
    man = make_manifold("so", n=3)
    cfg = SampleConfig(horizon=1.0, step=0.1, count=4, seed=1, s_min=0.1)
    with pytest.raises(ContractError):
        generate(man, lambda y, s: np.zeros_like(y), None, cfg)


# -- failure handling ---------------------------------------------------------------

def test_partial_nan_paths_dropped_with_warning():
    man = make_manifold("torus", dim=1)
    cfg = SampleConfig(horizon=1.0, step=0.5, count=10, seed=0, s_min=0.25)

    def drift(y, s):
        f = np.zeros_like(y)
        f[0] = np.nan
        return f

    with pytest.warns(UserWarning, match="dropped"):
        out = generate(man, drift, zero_cov_torus, cfg)
    assert out.shape == (9, 1)
    assert np.all(np.isfinite(out))


def test_all_nan_paths_raise():
    man = make_manifold("torus", dim=1)
    cfg = SampleConfig(horizon=1.0, step=0.5, count=5, seed=0, s_min=0.25)

    def drift(y, s):
        return np.full_like(y, np.nan)

    with pytest.raises(NumericalError):
        generate(man, drift, zero_cov_torus, cfg)


# -- sample files -------------------------------------------------------------------

def test_save_load_csv_round_trip(tmp_path):
    man = make_manifold("torus", dim=3)
    pts = np.random.default_rng(0).uniform(0, TWO_PI, size=(17, 3))
    path = str(tmp_path / "samples.csv")
    save_samples(path, man, pts, meta={"seed": 0})
    back = load_samples(path, man)
    assert np.array_equal(back, pts)
    first = open(path).readline()
    assert first.startswith("#") and "seed=0" in first


def test_save_load_jsonl_round_trip(tmp_path):
    man = make_manifold("u", n=3)
    pts = man.random_point(np.random.default_rng(1), count=5)
    path = str(tmp_path / "samples.jsonl")
    save_samples(path, man, pts, meta={"seed": 1})
    back = load_samples(path, man)
    assert np.array_equal(back, pts)


def test_empty_sample_file_round_trip(tmp_path):
    man = make_manifold("torus", dim=2)
    path = str(tmp_path / "empty.csv")
    save_samples(path, man, np.zeros((0, 2)))
    back = load_samples(path, man)
    assert back.shape == (0, 2)


# -- end-to-end statistics (shared trained model) -----------------------------------

def test_trained_torus_samples_match_target_moments(torus_e2e):
    samples = torus_e2e["samples"]
    assert len(samples) == 2000
    ph = np.mean(np.exp(1j * samples), axis=0)
    mean_angles = np.abs(np.angle(ph))
    assert np.max(mean_angles) < 0.15
    cvar = 1.0 - np.abs(ph)
    target = 1.0 - np.exp(-0.2 / 2.0)
    assert np.max(np.abs(cvar - target) / target) < 0.25
