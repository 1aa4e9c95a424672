"""Numba and numpy kernel backends must agree on every dispatched
operation, and the selection machinery must be safe to toggle."""

import numpy as np
import pytest

from proxslim import kernels
from proxslim.network import Dataset, tiny_vgg
from proxslim.optim import Hyperparams, init_state, proximal_epoch
from proxslim.tensor import Tape, Tensor, backward, conv2d, max_pool, softmax_pool

pytestmark = pytest.mark.skipif(
    not kernels.numba_available(), reason="numba backend not installed"
)


def both_backends(fn):
    with kernels.use_backend("numpy"):
        a = fn()
    with kernels.use_backend("numba"):
        b = fn()
    return a, b


def test_backend_selection_machinery():
    assert kernels.active_backend() in ("numba", "numpy")
    before = kernels.active_backend()
    with kernels.use_backend("numpy"):
        assert kernels.active_backend() == "numpy"
        with kernels.use_backend("numba"):
            assert kernels.active_backend() == "numba"
        assert kernels.active_backend() == "numpy"
    assert kernels.active_backend() == before
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_default_backend_honors_environment(monkeypatch):
    monkeypatch.setenv("PROXSLIM_BACKEND", "numpy")
    assert kernels._default_backend() == "numpy"
    monkeypatch.setenv("PROXSLIM_BACKEND", "NUMBA")
    assert kernels._default_backend() == "numba"
    monkeypatch.setenv("PROXSLIM_BACKEND", "cuda")
    with pytest.raises(ValueError):
        kernels._default_backend()
    monkeypatch.delenv("PROXSLIM_BACKEND")
    assert kernels._default_backend() == "numba"  # importable here


def test_conv2d_parity():
    rng = np.random.default_rng(70)
    x = rng.normal(size=(3, 4, 7, 6))
    w = rng.normal(size=(5, 4, 3, 3))
    b = rng.normal(size=5)
    coef = rng.normal(size=(3, 5, 5, 4))

    def run():
        tx, tw, tb = Tensor(x), Tensor(w), Tensor(b)
        with Tape() as tape:
            loss = (conv2d(tx, tw, tb) * Tensor(coef)).sum()
        g = backward(tape, loss)
        return loss.item(), g[tx], g[tw], g[tb]

    a, b2 = both_backends(run)
    assert a[0] == pytest.approx(b2[0], rel=1e-13)
    for ga, gb in zip(a[1:], b2[1:]):
        np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-13)


def test_pool_parity():
    rng = np.random.default_rng(71)
    x = rng.normal(size=(2, 3, 6, 6))
    coef = rng.normal(size=(2, 3, 3, 3))

    def run_softmax():
        tx = Tensor(x)
        with Tape() as tape:
            loss = (softmax_pool(tx, 2, 9.0) * Tensor(coef)).sum()
        return loss.item(), backward(tape, loss)[tx]

    def run_max():
        tx = Tensor(x)
        with Tape() as tape:
            loss = (max_pool(tx, 2) * Tensor(coef)).sum()
        return loss.item(), backward(tape, loss)[tx]

    a, b = both_backends(run_softmax)
    assert a[0] == pytest.approx(b[0], rel=1e-13)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-14)

    a, b = both_backends(run_max)
    # max pooling moves single entries; both backends agree exactly
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])


def test_training_epoch_parity():
    net = tiny_vgg(in_shape=(2, 10, 10), classes=3, widths=(3, 4))
    rng = np.random.default_rng(72)
    data = Dataset(
        x=rng.normal(size=(9, 2, 10, 10)),
        y=rng.integers(0, 3, size=9),
        classes=3,
    )
    hp = Hyperparams(lam=0.01, beta=40.0, alpha=8.0, batch_size=3)

    def run():
        state = init_state(net, 6)
        for epoch in range(2):
            state, loss = proximal_epoch(net, state, data, hp, epoch, seed=6)
        return state, loss

    (sa, la), (sb, lb) = both_backends(run)
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(sa.w, sb.w, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sa.gamma, sb.gamma, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sa.xi, sb.xi, rtol=1e-10, atol=1e-12)
