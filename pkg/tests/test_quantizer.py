import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffpcc.diffnet import grad_check
from diffpcc.diffnet import tensor as tt
from diffpcc.errors import ConfigurationError, CorruptStreamError
from diffpcc.quantizer import (Codebook, QuantizedCode, bits_per_index, dequantize, fit_codebook, init_from_chunks,
                               nearest_entry, quantization_mse, quantize, quantize_st, rate_bits, split_chunks,
                               vq_loss)


def _brute_nearest(entries, chunk):
    best, best_d = 0, np.inf
    for i, e in enumerate(entries):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(chunk, e))
        if d < best_d:
            best, best_d = i, d
    return best


def test_split_chunks_examples():
    parts = split_chunks(np.array([1.0, 2, 3, 4]), 2)
    np.testing.assert_array_equal(parts, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(split_chunks(np.arange(4.0), 1), [np.arange(4.0)])
    assert split_chunks(np.arange(6.0), 6).shape == (6, 1)
    with pytest.raises(ValueError):
        split_chunks(np.arange(6.0), 4)


def test_nearest_entry_examples():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert nearest_entry(cb, [0.1, 0.2]) == 0
    assert nearest_entry(cb, [0.5, 0.5]) == 0
    big = Codebook(np.random.default_rng(0).standard_normal((8, 2)))
    assert nearest_entry(big, big.entries[5]) == 5
    with pytest.raises(ValueError):
        nearest_entry(cb, [0.0, 0.0, 0.0])


def test_nearest_entry_matches_brute_force(rng):
    for _ in range(300):
        N, k = int(rng.integers(1, 20)), int(rng.integers(1, 5))
        cb = Codebook(rng.standard_normal((N, k)))
        q = rng.standard_normal(k)
        assert nearest_entry(cb, q) == _brute_nearest(cb.entries, q)


def test_nearest_entry_lowest_index_on_duplicate_entries():
    cb = Codebook(np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))
    assert nearest_entry(cb, [0.1, 0.0]) == 1
    assert nearest_entry(cb, [0.9, 1.0]) == 0


def test_chunkwise_is_globally_optimal(rng):
    for N in (1, 2, 5, 8):
        for C in (1, 2, 3):
            k = 2
            cb = Codebook(rng.standard_normal((N, k)))
            z = rng.standard_normal(C * k)
            code, zhat = quantize(z, cb, C)
            best = min(itertools.product(range(N), repeat=C),
                       key=lambda tup: sum(np.sum((z[c * k:(c + 1) * k] - cb.entries[i]) ** 2)
                                           for c, i in enumerate(tup)))
            assert code.indices == best


def test_quantize_roundtrip_and_fixed_point(rng):
    cb = Codebook(rng.standard_normal((16, 4)))
    z = rng.standard_normal(32)
    code, zhat = quantize(z, cb, 8)
    assert np.array_equal(dequantize(code, cb), zhat)
    code2, zhat2 = quantize(zhat, cb, 8)
    assert code2 == code and np.array_equal(zhat2, zhat)
    np.testing.assert_array_equal(dequantize([0] * 8, cb), np.tile(cb.entries[0], 8))


def test_dequantize_rejects_out_of_range():
    cb = Codebook(np.zeros((4, 2)))
    with pytest.raises(CorruptStreamError):
        dequantize([0, 4], cb)
    with pytest.raises(CorruptStreamError):
        QuantizedCode((0, 4), 4)


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Codebook(np.zeros((0, 2)))


def test_vq_loss_plug_in():
    cb = tt.Tensor(np.array([[0.0, 0.0], [2.0, 2.0]]))
    assert float(vq_loss(np.array([[0.5, 0.5]]), cb).data) == 1.0
    assert float(vq_loss(np.array([[2.0, 2.0], [0.0, 0.0]]), cb).data) == 0.0


def _term1(chunks, cb, idx):
    return float(np.sum((chunks - cb[idx]) ** 2)) / len(chunks)


def test_vq_loss_gradient_routing(rng):
    """Codebook gradient follows the first term only, the chunk gradient the second only."""
    C, k, N = 4, 3, 5
    chunks = rng.standard_normal((C, k))
    cb = rng.standard_normal((N, k))
    zt = tt.Tensor(chunks, requires_grad=True)
    ct = tt.Tensor(cb, requires_grad=True)
    idx = np.array([0, 2, 2, 4])
    grads = tt.backward(vq_loss(zt, ct, idx), {"z": zt, "cb": ct})
    h = 1e-6
    fd_cb = np.zeros_like(cb)
    for i in range(N):
        for j in range(k):
            up, dn = cb.copy(), cb.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd_cb[i, j] = (_term1(chunks, up, idx) - _term1(chunks, dn, idx)) / (2 * h)
    fd_z = np.zeros_like(chunks)
    for i in range(C):
        for j in range(k):
            up, dn = chunks.copy(), chunks.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd_z[i, j] = (_term1(up, cb, idx) - _term1(dn, cb, idx)) / (2 * h)  # term 2 has the same value
    np.testing.assert_allclose(grads["cb"], fd_cb, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(grads["z"], fd_z, rtol=1e-6, atol=1e-9)
    assert np.all(grads["cb"][[1, 3]] == 0)


def test_vq_loss_gradcheck_per_term():
    idx = np.array([[1, 0], [2, 2]])

    def make(rng):
        z, cb = rng.standard_normal((2, 2, 3)), rng.standard_normal((3, 3))
        return {"z": z, "cb": cb, "z0": z.copy(), "cb0": cb.copy()}

    def surrogate(i):
        # term 1 moves only the codebook, term 2 only the chunks
        t1 = tt.sum_(tt.square(tt.sub(i["z0"], tt.take_rows(i["cb"], idx))))
        t2 = tt.sum_(tt.square(tt.sub(tt.take_rows(i["cb0"], idx), i["z"])))
        return tt.mul(tt.add(t1, t2), 0.25)

    report = grad_check(lambda i: vq_loss(i["z"], i["cb"], idx), make, trials=10, wrt=["z", "cb"],
                        reference=surrogate)
    assert report.passed, report


def test_vq_loss_naive_fd_disagrees():
    """Sanity check on the oracle: differencing the loss value itself double-counts."""
    idx = np.array([[1, 0]])
    report = grad_check(lambda i: vq_loss(i["z"], i["cb"], idx),
                        lambda rng: {"z": rng.standard_normal((1, 2, 3)), "cb": rng.standard_normal((3, 3))},
                        trials=2)
    assert not report.passed


def test_straight_through_forward_and_gradient(rng):
    z = tt.Tensor(rng.standard_normal((2, 8)), requires_grad=True)
    cb = tt.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    zhat, _, idx = quantize_st(z, cb, 4)
    assert np.array_equal(zhat.data, cb.data[idx].reshape(2, 8))
    w = rng.standard_normal((2, 8))
    grads = tt.backward(tt.sum_(tt.mul(zhat, w)), {"z": z, "cb": cb})
    assert np.array_equal(grads["z"], w)
    assert np.all(grads["cb"] == 0)


def test_rate_bits_examples():
    assert rate_bits(4, 128) == 28
    assert rate_bits(256, 128) == 1792
    assert bits_per_index(256) == 8
    assert rate_bits(3, 1) == 0
    for bad in (0, 3, 100, 129):
        with pytest.raises(ConfigurationError):
            rate_bits(4, bad)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)), elements=st.floats(-5, 5)),
       arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_nearest_entry_property(entries, q):
    cb = Codebook(entries)
    i = nearest_entry(cb, q[:cb.chunk_dim])
    d = np.sum((entries - q[:cb.chunk_dim]) ** 2, axis=1)
    assert d[i] == d.min() and i == int(np.flatnonzero(d == d.min())[0])


def test_init_from_chunks_distinct_when_few(rng):
    chunks = rng.standard_normal((3, 2))
    entries = init_from_chunks(chunks, 8, seed=0)
    assert entries.shape == (8, 2)
    assert len(np.unique(entries, axis=0)) == 8


def test_fit_codebook_mse_nonincreasing_in_C(rng):
    # frozen latent corpus with correlated coordinates
    d, M, N = 64, 400, 16
    basis = rng.standard_normal((8, d))
    z = rng.standard_normal((M, 8)) @ basis + 0.1 * rng.standard_normal((M, d))
    mses = []
    for C in (4, 16, 64):
        entries = fit_codebook(split_chunks(z, C).reshape(-1, d // C), N, iters=100, seed=0)
        mses.append(quantization_mse(z, entries, C))
    assert mses[1] <= mses[0] * 1.05 and mses[2] <= mses[1] * 1.05, mses


def test_fit_codebook_reduces_error(rng):
    x = rng.standard_normal((500, 2))
    start = init_from_chunks(x, 8, seed=0)
    fitted = fit_codebook(x, 8, iters=50, seed=0)
    assert quantization_mse(x, fitted, 1) <= quantization_mse(x, start, 1)
