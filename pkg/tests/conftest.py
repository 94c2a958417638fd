import numpy as np
import pytest

from trml.dataset import SyntheticConfig, build_missingness_plan, generate_synthetic, make_batch
from trml.model import Hyper, init_params
from trml.numkernel import Rng, seeded_gaussian


def tiny_dataset(seed=0, d=8, n_train=4, n_frames=3, task="regression"):
    return generate_synthetic(SyntheticConfig(
        d=d, latent_k=3, n_frames=n_frames, n_train=n_train, n_valid=2, n_test=2, task=task, seed=seed))


def mixed_batch(seed=0, d=8, modes=("c", "c", "mt", "mv"), task="regression"):
    """Train batch with a forced mode mix and one partially masked sample."""
    ds = tiny_dataset(seed, d=d, n_train=len(modes), task=task)
    plan = build_missingness_plan(ds, "B", "text", 1.0, seed)
    batch = make_batch(ds, ds.split_indices("train"), plan)
    batch.modes = list(modes)
    batch.masks[0] = np.array([1, 0, 1])
    if task == "classification":
        batch.labels = np.arange(len(modes), dtype=np.float64) % 3
    return batch


def random_point(params, seed, std=0.5, tau=0.3):
    """Move every parameter to a random point (biases included)."""
    rng = Rng(seed)
    for k, (name, _) in enumerate(params.store):
        if name == "log_tau":
            params.store[name] = [[np.log(tau)]]
        else:
            params.store[name] = seeded_gaussian(rng.child(k), *params.store[name].shape, 0.0, std)
    return params


def random_params(seed=0, d=8, task="regression", out_dim=1, **hyper):
    p = init_params(Hyper(d=d, task=task, out_dim=out_dim, **hyper), seed)
    return random_point(p, 1000 + seed)


@pytest.fixture
def small_ds():
    return tiny_dataset(0, d=8, n_train=20)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
