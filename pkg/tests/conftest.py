import os
import pickle

import numpy as np
import pytest


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_check(f, arr, grad, idx, h=1e-4):
    """Central finite differences of scalar ``f`` at flat indices of ``arr``.

    Returns the worst relative error against ``grad``.
    """
    worst = 0.0
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        worst = max(worst, rel_err((up - down) / (2 * h), gflat[i]))
    return worst


def probe(arr, n, seed):
    return np.random.default_rng(seed).choice(arr.size, size=min(n, arr.size), replace=False)


@pytest.fixture(scope="session")
def toy_run():
    """The desk-scale separation experiment, trained and scored once per session."""
    from toy_experiment import run_toy_experiment

    # optional pickle cache for iterating on tests; unset means always retrain
    cache = os.environ.get("ECGQ_TOY_CACHE")
    if cache and os.path.exists(cache):
        with open(cache, "rb") as fh:
            return pickle.load(fh)
    run = run_toy_experiment()
    if cache:
        with open(cache, "wb") as fh:
            pickle.dump(run, fh)
    return run


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
