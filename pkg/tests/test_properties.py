"""Property-based checks of the invariants that hold for every input."""

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffpcc.codec import pack_indices, unpack_indices
from diffpcc.diffnet import ModelConfig, encode, init_params
from diffpcc.diffusion import build_schedule
from diffpcc.metrics import chamfer, emd
from diffpcc.quantizer import Codebook, dequantize, quantize
from diffpcc.training import PRESETS, lr_at_step

CFG = ModelConfig(d=8, C=4, N=8, T=10, point_widths=(6, 8), head_widths=(8,), denoiser_widths=(6,), time_dim=4)
PARAMS = init_params(CFG, seed=0)
coords = st.floats(-100, 100, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 400), st.floats(1e-6, 0.2), st.floats(0.0, 0.7))
def test_schedule_identities(T, b1, extra):
    bT = min(b1 + extra, 0.99)
    s = build_schedule(T, b1, bT)
    assert s.beta[0] == b1 and s.beta[-1] == bT
    assert np.array_equal(s.alpha, 1.0 - s.beta)
    assert np.array_equal(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:])
    assert np.all(np.diff(s.beta) >= 0) and np.all((s.beta > 0) & (s.beta < 1))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords), st.randoms())
def test_encoder_permutation_invariance(points, rnd):
    perm = list(range(len(points)))
    rnd.shuffle(perm)
    W = PARAMS.constants()
    assert np.array_equal(encode(W, points, CFG).data, encode(W, points[perm], CFG).data)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (5, 3), elements=coords), arrays(np.float64, 12, elements=coords))
def test_quantize_dequantize_roundtrip(entries, z):
    cb = Codebook(entries)
    code, zhat = quantize(z, cb, 4)
    assert np.array_equal(dequantize(code, cb), zhat)
    again, zhat2 = quantize(zhat, cb, 4)
    # re-quantizing an exact concatenation of entries is a fixed point (up to duplicate entries)
    assert np.array_equal(zhat2, zhat)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (7, 3), elements=st.floats(-10, 10)), arrays(np.float64, (7, 3), elements=st.floats(-10, 10)),
       arrays(np.float64, 3, elements=st.floats(-50, 50)))
def test_metric_translation_invariance(a, b, shift):
    assert abs(chamfer(a + shift, b + shift) - chamfer(a, b)) < 1e-9
    assert abs(emd(a + shift, b + shift) - emd(a, b)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)))
def test_metric_identity_zero(a):
    assert chamfer(a, a) == 0.0 and emd(a, a) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 600_000), st.integers(0, 600_000))
def test_lr_monotone(s1, s2):
    cfg = PRESETS["paper"]
    lo, hi = sorted((s1, s2))
    assert lr_at_step(hi, cfg) <= lr_at_step(lo, cfg)
    assert cfg.lr_end <= lr_at_step(lo, cfg) <= cfg.lr_start


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12).flatmap(lambda b: st.tuples(st.just(b), st.lists(st.integers(0, (1 << b) - 1), min_size=1,
                                                                           max_size=30))), st.integers(0, 7))
def test_nonzero_padding_or_changed_indices(case, flip):
    # flipping any payload bit either changes the decoded indices or lands in the padding
    from diffpcc.errors import CorruptStreamError
    bits, idx = case
    data = bytearray(pack_indices(idx, bits))
    pos = (len(data) * 8 - 1) * flip // 7
    data[pos // 8] ^= 0x80 >> (pos % 8)
    try:
        assert unpack_indices(bytes(data), len(idx), bits) != idx
    except CorruptStreamError:
        assert pos >= bits * len(idx)
