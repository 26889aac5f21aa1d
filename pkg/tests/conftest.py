"""Shared test helpers: the finite-difference gradient oracle and fixtures.

The oracle only ever calls forward evaluations, so it stays independent of
the backward implementation it checks.
"""

import numpy as np
import pytest


def numerical_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar f() w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def random_readout(rng, shape):
    """Fixed random projection turning a matrix output into a scalar loss."""
    return rng.normal(size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_graph(rng, n_nodes, group="co_ethylene", composition="A+B",
               targets=(0.4, 0.6), scale=1.0):
    """A random but valid SensorGraph for model-level tests."""
    from gvit.graph import SensorGraph

    targets = np.asarray(targets, dtype=float)
    ppm = targets * np.array([533.33, 20.0])
    if composition == "A":
        targets = np.array([targets[0], 0.0])
        ppm = np.array([ppm[0], 0.0])
    elif composition == "B":
        targets = np.array([0.0, targets[1]])
        ppm = np.array([0.0, ppm[1]])
    return SensorGraph(
        features=rng.normal(size=(n_nodes, 16)) * scale,
        targets=targets,
        targets_ppm=ppm,
        composition=composition,
        group=group,
        meta={"source": "test"},
    ).validate()
