import time

import numpy as np
import pytest

from manidiff.manifolds import make_manifold

ALL_MANIFOLDS = {
    "torus-2": lambda: make_manifold("torus", dim=2),
    "torus-5": lambda: make_manifold("torus", dim=5),
    "sphere-3": lambda: make_manifold("sphere", dim=3),
    "sphere-7": lambda: make_manifold("sphere", dim=7),
    "so-3": lambda: make_manifold("so", n=3),
    "so-4": lambda: make_manifold("so", n=4),
    "u-2": lambda: make_manifold("u", n=2),
    "u-3": lambda: make_manifold("u", n=3),
}


@pytest.fixture(params=sorted(ALL_MANIFOLDS), ids=sorted(ALL_MANIFOLDS))
def manifold(request):
    return ALL_MANIFOLDS[request.param]()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def relerr(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = max(np.max(np.abs(b)), 1e-30)
    return np.max(np.abs(a - b)) / denom


# -- shared end-to-end pipelines (trained once per session) ---------------------

@pytest.fixture(scope="session")
def torus_e2e():
    """Wrapped-Gaussian torus pipeline: 30k points, 5k iterations, 2000 samples.

    Shared by the training-curve example and the end-to-end checks so the
    expensive run happens once.
    """
    from manidiff.data import WrappedGaussianSpec, sample_wrapped_gaussian
    from manidiff.targets import GateConfig
    from manidiff.train import TrainConfig, train
    from manidiff.sample import (SampleConfig, cov_fn_from_model,
                                 drift_fn_from_model, generate)

    man = make_manifold("torus", dim=2)
    rng = np.random.default_rng(42)
    spec = WrappedGaussianSpec(manifold=man, means=np.zeros((1, 2)), cov_scale=0.2)
    data = sample_wrapped_gaussian(spec, 30_000, rng)
    cfg = TrainConfig(manifold=man, iterations=5000, batch=512, seed=0,
                      lr=1e-3, drift_hidden=128, drift_arch="plain",
                      time_embed_dim=64, gate=GateConfig(s_min=0.02))
    t0 = time.perf_counter()
    drift, cov, report = train(data, cfg)
    scfg = SampleConfig(horizon=cfg.horizon, step=5e-3, count=2000, seed=11,
                        s_min=0.02)
    pts = generate(man, drift_fn_from_model(drift, cfg.horizon),
                   cov_fn_from_model(cov, cfg.horizon), scfg)
    seconds = time.perf_counter() - t0
    return {"manifold": man, "spec": spec, "data": data, "cfg": cfg,
            "drift": drift, "report": report, "samples": pts,
            "seconds": seconds}


@pytest.fixture(scope="session")
def unitary_e2e():
    """Oscillator U(3) pipeline: 10k iterations, C2ST evaluation inputs."""
    from manidiff.data import OscillatorSpec, oscillator_dataset
    from manidiff.train import TrainConfig, train
    from manidiff.sample import (SampleConfig, cov_fn_from_model,
                                 drift_fn_from_model, generate)

    man = make_manifold("u", n=3)
    spec = OscillatorSpec(n=3)
    rng = np.random.default_rng(7)
    dataset = oscillator_dataset(spec, 3000, rng)
    cfg = TrainConfig(manifold=man, iterations=10_000, batch=256, seed=0,
                      lr=1e-3, drift_hidden=256, cov_hidden=128)
    t0 = time.perf_counter()
    drift, cov, report = train(dataset[:2000], cfg)
    scfg = SampleConfig(horizon=cfg.horizon, step=1e-2, count=500, seed=5,
                        s_min=0.02)
    pts = generate(man, drift_fn_from_model(drift, cfg.horizon),
                   cov_fn_from_model(cov, cfg.horizon), scfg)
    seconds = time.perf_counter() - t0
    return {"manifold": man, "dataset": dataset, "cfg": cfg, "drift": drift,
            "report": report, "samples": pts, "seconds": seconds}
