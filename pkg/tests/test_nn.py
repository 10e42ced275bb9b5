"""Neural building blocks against independent scalar-loop oracles."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from trajflow import autodiff as ad
from trajflow import nn


def _affine_loops(x, w, b):
    out = np.zeros(x.shape[:-1] + (w.shape[1],))
    for idx in np.ndindex(*x.shape[:-1]):
        for o in range(w.shape[1]):
            acc = float(b[o])
            for i in range(w.shape[0]):
                acc += float(x[idx + (i,)]) * float(w[i, o])
            out[idx + (o,)] = acc
    return out


def attention_oracle(x1, x2, axis_q, axis_kv, mask, params):
    """Straight-line softmax(QK^T/sqrt(d))V with explicit python loops."""
    q = _affine_loops(x1, params["wq"].data, params["bq"].data)
    k = _affine_loops(x2, params["wk"].data, params["bk"].data)
    v = _affine_loops(x2, params["wv"].data, params["bv"].data)
    qm = np.moveaxis(q, axis_q, -2)
    km = np.moveaxis(k, axis_kv, -2)
    vm = np.moveaxis(v, axis_kv, -2)
    if mask is None:
        mask = np.ones(x2.shape[:-1], dtype=bool)
    maskm = np.moveaxis(mask, axis_kv, -1)
    d = q.shape[-1]
    shared_kv = km.ndim < qm.ndim  # rank-2 x2 broadcasts over query batch axes
    mixed = np.zeros_like(qm)
    empty = np.zeros(qm.shape[:-1], dtype=bool)
    for bidx in np.ndindex(*qm.shape[:-2]):
        ks = km if shared_kv else km[bidx]
        vs = vm if shared_kv else vm[bidx]
        ms = maskm if shared_kv else maskm[bidx]
        for qi in range(qm.shape[-2]):
            scores = []
            for ki in range(ks.shape[0]):
                s = 0.0
                for c in range(d):
                    s += float(qm[bidx + (qi, c)]) * float(ks[ki, c])
                scores.append(s / math.sqrt(d))
            valid = [i for i in range(len(scores)) if ms[i]]
            if not valid:
                empty[bidx + (qi,)] = True
                continue
            mx = max(scores[i] for i in valid)
            exps = [math.exp(scores[i] - mx) if ms[i] else 0.0 for i in range(len(scores))]
            z = sum(exps)
            for c in range(d):
                acc = 0.0
                for ki in range(ks.shape[0]):
                    acc += (exps[ki] / z) * float(vs[ki, c])
                mixed[bidx + (qi, c)] = acc
    out = _affine_loops(mixed, params["wo"].data, params["bo"].data)
    out[empty] = 0.0
    return np.moveaxis(out, -2, axis_q)


def _identity_attention(d):
    """Projections that leave values untouched and make all scores equal."""
    rng = np.random.default_rng(0)
    p = nn.attention_params(rng, d)
    p["wq"].data[:] = 0.0
    p["wk"].data[:] = 0.0
    p["wv"].data[:] = np.eye(d)
    p["wo"].data[:] = np.eye(d)
    for k in ("bq", "bk", "bv", "bo"):
        p[k].data[:] = 0.0
    return p


def test_uniform_scores_give_value_mean():
    rng = np.random.default_rng(1)
    x = ad.tensor(rng.normal(size=(4, 5, 6)))
    p = _identity_attention(6)
    for axis in (0, 1):
        out = nn.axis_self_attention(x, axis, None, p)
        npt.assert_allclose(out.data, np.broadcast_to(x.data.mean(axis=axis, keepdims=True), x.shape), atol=1e-14)


def test_singleton_axis_passes_value_through():
    rng = np.random.default_rng(2)
    x = ad.tensor(rng.normal(size=(1, 3, 8)))
    p = nn.attention_params(rng, 8)
    out = nn.axis_self_attention(x, 0, None, p)
    v = x.data @ p["wv"].data + p["bv"].data
    expected = v @ p["wo"].data + p["bo"].data
    npt.assert_allclose(out.data, expected, atol=1e-12)


def test_self_attention_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    x = ad.tensor(rng.normal(size=(2, 3, 8)))
    p = nn.attention_params(rng, 8)
    out = nn.axis_self_attention(x, 1, None, p)
    ref = attention_oracle(x.data, x.data, 1, 1, None, p)
    npt.assert_allclose(out.data, ref, atol=1e-10)


def test_cross_attention_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    x1 = ad.tensor(rng.normal(size=(4, 2, 8)))
    x2 = ad.tensor(rng.normal(size=(7, 2, 8)))
    p = nn.attention_params(rng, 8)
    mask = rng.random((7, 2)) > 0.3
    mask[0, :] = True  # keep one valid key per row
    out = nn.axis_cross_attention(x1, x2, 0, 0, mask, p)
    ref = attention_oracle(x1.data, x2.data, 0, 0, mask, p)
    npt.assert_allclose(out.data, ref, atol=1e-10)


def test_cross_attention_broadcast_kv_matches_oracle():
    rng = np.random.default_rng(5)
    x1 = ad.tensor(rng.normal(size=(3, 4, 8)))
    x2 = ad.tensor(rng.normal(size=(6, 8)))  # shared keys across query batch
    p = nn.attention_params(rng, 8)
    mask = np.array([True, True, False, True, False, True])
    out = nn.axis_cross_attention(x1, x2, 1, 0, mask, p)
    ref = attention_oracle(x1.data, x2.data, 1, 0, mask, p)
    npt.assert_allclose(out.data, ref, atol=1e-10)


def test_cross_with_x2_equal_x1_is_self_exactly():
    rng = np.random.default_rng(6)
    x = ad.tensor(rng.normal(size=(3, 5, 8)))
    p = nn.attention_params(rng, 8)
    mask = rng.random((3, 5)) > 0.2
    a = nn.axis_self_attention(x, 0, mask, p)
    b = nn.axis_cross_attention(x, x, 0, 0, mask, p)
    npt.assert_array_equal(a.data, b.data)


def test_attention_weights_convex_and_masked_exactly_zero():
    rng = np.random.default_rng(7)
    x = ad.tensor(rng.normal(size=(6, 4, 8)) * 3)
    p = nn.attention_params(rng, 8)
    mask = rng.random((6, 4)) > 0.4
    mask[0, :] = True
    stats = {}
    nn.axis_self_attention(x, 0, mask, p, stats=stats)
    w = stats["weights"]  # [T, Lq, Lkv] after axis move
    assert (w >= 0.0).all()
    npt.assert_allclose(w.sum(axis=-1), np.ones(w.shape[:-1]), atol=1e-12)
    for t in range(4):
        for ki in range(6):
            if not mask[ki, t]:
                assert (w[t, :, ki] == 0.0).all()


def test_all_invalid_row_outputs_zeros_and_is_flagged():
    rng = np.random.default_rng(8)
    x = ad.tensor(rng.normal(size=(3, 2, 8)))
    p = nn.attention_params(rng, 8)
    mask = np.ones((3, 2), dtype=bool)
    mask[:, 1] = False  # second column has no valid keys
    stats = {}
    out = nn.axis_self_attention(x, 0, mask, p, stats=stats)
    assert (out.data[:, 1, :] == 0.0).all()
    assert stats["empty_rows"][1].all() and not stats["empty_rows"][0].any()


def test_attention_equivariant_along_non_attended_axis():
    rng = np.random.default_rng(9)
    x = ad.tensor(rng.normal(size=(5, 6, 8)))
    p = nn.attention_params(rng, 8)
    mask = rng.random((5, 6)) > 0.3
    mask[0, :] = True
    perm = rng.permutation(6)
    out_then_perm = nn.axis_self_attention(x, 0, mask, p).data[:, perm, :]
    perm_then_out = nn.axis_self_attention(
        ad.tensor(x.data[:, perm, :]), 0, mask[:, perm], p
    ).data
    npt.assert_array_equal(out_then_perm, perm_then_out)


def test_attention_errors():
    rng = np.random.default_rng(10)
    x = ad.tensor(rng.normal(size=(3, 4, 8)))
    p = nn.attention_params(rng, 8)
    with pytest.raises(ValueError):
        nn.axis_self_attention(x, 2, None, p)  # feature axis
    with pytest.raises(ValueError):
        nn.axis_self_attention(x, 5, None, p)
    with pytest.raises(ValueError):
        nn.axis_self_attention(x, 0, np.ones((3, 5), dtype=bool), p)
    bad = ad.tensor(np.full((3, 4, 8), np.nan))
    with pytest.raises(ValueError):
        nn.axis_self_attention(bad, 0, None, p)
    x2 = ad.tensor(rng.normal(size=(7, 5, 8)))
    with pytest.raises(ValueError):
        nn.axis_cross_attention(x, x2, 0, 0, None, p)  # non-attended 4 vs 5
    with pytest.raises(ValueError):
        nn.axis_self_attention(ad.tensor(rng.normal(size=(3, 4, 16))), 0, None, p)


def test_mlp_constant_and_identity_and_oracle():
    rng = np.random.default_rng(11)
    p = nn.mlp_params(rng, 4, 6, 3)
    p["w1"].data[:] = 0.0
    p["w2"].data[:] = 0.0
    p["b1"].data[:] = 1.0
    p["b2"].data[:] = np.array([0.5, -1.0, 2.0])
    x = ad.tensor(rng.normal(size=(5, 4)))
    npt.assert_array_equal(nn.mlp(x, p).data, np.broadcast_to(p["b2"].data, (5, 3)))

    ident = nn.mlp_params(rng, 4, 4, 4)
    ident["w1"].data[:] = np.eye(4)
    ident["w2"].data[:] = np.eye(4)
    ident["b1"].data[:] = 0.0
    ident["b2"].data[:] = 0.0
    pos = ad.tensor(np.abs(rng.normal(size=(6, 4))) + 0.1)
    npt.assert_array_equal(nn.mlp(pos, ident).data, pos.data)

    p2 = nn.mlp_params(rng, 4, 6, 3)
    x2 = ad.tensor(rng.normal(size=(2, 4)))
    hidden = np.maximum(_affine_loops(x2.data, p2["w1"].data, p2["b1"].data), 0.0)
    ref = _affine_loops(hidden, p2["w2"].data, p2["b2"].data)
    npt.assert_allclose(nn.mlp(x2, p2).data, ref, atol=1e-10)

    with pytest.raises(ValueError):
        nn.mlp(ad.tensor(np.ones((2, 5))), p2)


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_recurrent_one_step_matches_scalar_gates():
    rng = np.random.default_rng(12)
    h = 3
    p = nn.lstm_params(rng, 2, h)
    x = ad.tensor(rng.normal(size=(1, 1, 2)))
    out = nn.recurrent_sequence(x, 0, p).data[0, 0]
    a = x.data[0, 0] @ p["wx"].data + p["b"].data  # h_prev = 0
    for j in range(h):
        gi = _sigmoid(a[j])
        gf = _sigmoid(a[h + j])
        gg = math.tanh(a[2 * h + j])
        go = _sigmoid(a[3 * h + j])
        c = gf * 0.0 + gi * gg
        assert abs(out[j] - go * math.tanh(c)) <= 1e-12


def test_recurrent_zero_weights_bias_driven():
    rng = np.random.default_rng(13)
    h = 4
    p = nn.lstm_params(rng, 3, h)
    p["wx"].data[:] = 0.0
    p["wh"].data[:] = 0.0
    b = p["b"].data
    x = ad.tensor(rng.normal(size=(5, 2, 3)))
    out = nn.recurrent_sequence(x, 0, p).data
    c = np.zeros(h)
    for t in range(5):
        gi = 1.0 / (1.0 + np.exp(-b[:h]))
        gf = 1.0 / (1.0 + np.exp(-b[h : 2 * h]))
        gg = np.tanh(b[2 * h : 3 * h])
        go = 1.0 / (1.0 + np.exp(-b[3 * h :]))
        c = gf * c + gi * gg
        expected = go * np.tanh(c)
        npt.assert_allclose(out[t], np.broadcast_to(expected, (2, h)), atol=1e-12)


def test_recurrent_causality():
    rng = np.random.default_rng(14)
    p = nn.lstm_params(rng, 3, 4)
    x = rng.normal(size=(6, 2, 3))
    base = nn.recurrent_sequence(ad.tensor(x), 0, p).data
    bumped = x.copy()
    bumped[4] += 10.0
    out = nn.recurrent_sequence(ad.tensor(bumped), 0, p).data
    npt.assert_array_equal(out[:4], base[:4])
    assert np.abs(out[4:] - base[4:]).max() > 0


def test_recurrent_time_axis_choice_and_errors():
    rng = np.random.default_rng(15)
    p = nn.lstm_params(rng, 3, 4)
    x = rng.normal(size=(2, 6, 3))
    out = nn.recurrent_sequence(ad.tensor(x), 1, p).data
    ref = nn.recurrent_sequence(ad.tensor(np.moveaxis(x, 1, 0).copy()), 0, p).data
    npt.assert_allclose(out, np.moveaxis(ref, 0, 1), atol=1e-14)
    with pytest.raises(ValueError):
        nn.recurrent_sequence(ad.tensor(np.zeros((0, 2, 3))), 0, p)


def test_pyramid_hand_unrolled_length_4():
    rng = np.random.default_rng(16)
    d = 5
    p = nn.pyramid_params(rng, d)
    x = rng.normal(size=(4, d))
    out = nn.temporal_pyramid(ad.tensor(x), p).data
    p0 = (x[0] + x[1]) / 2.0
    p1 = (x[2] + x[3]) / 2.0
    d0 = p0 @ p["w_pool"].data + p["b_pool"].data
    d1 = p1 @ p["w_pool"].data + p["b_pool"].data
    up = np.stack([d0, d0, d1, d1])
    lat = x @ p["w_lat"].data + p["b_lat"].data
    npt.assert_allclose(out, up + lat, atol=1e-10)


def test_pyramid_constant_in_time_stays_constant():
    rng = np.random.default_rng(17)
    p = nn.pyramid_params(rng, 6)
    c = rng.normal(size=(3, 1, 6))
    x = np.broadcast_to(c, (3, 7, 6)).copy()
    out = nn.temporal_pyramid(ad.tensor(x), p).data
    npt.assert_allclose(out, np.broadcast_to(out[:, :1], out.shape), atol=1e-12)


def test_pyramid_shape_contract_and_min_length():
    rng = np.random.default_rng(18)
    p = nn.pyramid_params(rng, 4)
    for t in (4, 60, 5):
        x = rng.normal(size=(2, t, 4))
        assert nn.temporal_pyramid(ad.tensor(x), p).shape == (2, t, 4)
    with pytest.raises(ValueError):
        nn.temporal_pyramid(ad.tensor(rng.normal(size=(2, 1, 4))), p)


def test_layer_norm_constant_slice_gives_bias():
    rng = np.random.default_rng(19)
    p = nn.layer_norm_params(5)
    p["beta"].data[:] = rng.normal(size=5)
    x = ad.tensor(np.full((3, 5), 2.7))
    npt.assert_allclose(nn.layer_norm(x, -1, p).data, np.broadcast_to(p["beta"].data, (3, 5)), atol=1e-12)


def test_layer_norm_normalized_slice_near_identity():
    p = nn.layer_norm_params(2)
    x = ad.tensor(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    out = nn.layer_norm(x, -1, p).data
    npt.assert_allclose(out, x.data, atol=1e-4)


def test_layer_norm_scalar_oracle():
    rng = np.random.default_rng(20)
    d = 7
    p = nn.layer_norm_params(d)
    p["gamma"].data[:] = rng.normal(size=d)
    p["beta"].data[:] = rng.normal(size=d)
    x = rng.normal(size=(4, d))
    out = nn.layer_norm(ad.tensor(x), -1, p).data
    for r in range(4):
        mean = sum(float(v) for v in x[r]) / d
        var = sum((float(v) - mean) ** 2 for v in x[r]) / d
        rstd = 1.0 / math.sqrt(var + 1e-5)
        for c in range(d):
            ref = (x[r, c] - mean) * rstd * p["gamma"].data[c] + p["beta"].data[c]
            assert abs(out[r, c] - ref) <= 1e-10


def test_layer_norm_other_axis():
    rng = np.random.default_rng(21)
    p = nn.layer_norm_params(3)
    x = rng.normal(size=(3, 4))
    out = nn.layer_norm(ad.tensor(x), 0, p).data
    ref = nn.layer_norm(ad.tensor(x.T.copy()), -1, p).data.T
    npt.assert_allclose(out, ref, atol=1e-14)


def _gc(f, shape, seed, points=3, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        x = ad.tensor(rng.normal(size=shape))
        worst = max(worst, ad.grad_check(f, x))
    assert worst <= tol, worst


def test_gradients_attention():
    rng = np.random.default_rng(22)
    p = nn.attention_params(rng, 6)
    mask = rng.random((4, 3)) > 0.3
    mask[0, :] = True
    _gc(lambda x: (nn.axis_self_attention(x, 0, mask, p) ** 2.0).sum(), (4, 3, 6), 23)
    kv = ad.tensor(rng.normal(size=(5, 6)))
    _gc(lambda x: (nn.axis_cross_attention(x, kv, 1, 0, None, p) ** 2.0).sum(), (2, 3, 6), 24)


def test_gradients_mlp_lstm_pyramid_layernorm():
    rng = np.random.default_rng(25)
    mp = nn.mlp_params(rng, 4, 5, 4)
    _gc(lambda x: (nn.mlp(x, mp) ** 2.0).sum(), (3, 4), 26)
    lp = nn.lstm_params(rng, 3, 4)
    _gc(lambda x: (nn.recurrent_sequence(x, 0, lp) ** 2.0).sum(), (5, 2, 3), 27)
    pp = nn.pyramid_params(rng, 4)
    _gc(lambda x: (nn.temporal_pyramid(x, pp) ** 2.0).sum(), (2, 5, 4), 28)
    ln = nn.layer_norm_params(5)
    ln["gamma"].data[:] = rng.normal(size=5)
    _gc(lambda x: (nn.layer_norm(x, -1, ln) ** 2.0).sum(), (4, 5), 29)


def test_gradients_reach_attention_parameters():
    rng = np.random.default_rng(30)
    p = nn.attention_params(rng, 5)
    x = ad.tensor(rng.normal(size=(3, 4, 5)))
    loss = (nn.axis_self_attention(x, 0, None, p) ** 2.0).sum()
    grads, disconnected = ad.gradients(loss, p)
    assert not disconnected
    # bk shifts every score in a row equally, which softmax cancels: its
    # gradient is analytically zero, so a relative check is meaningless there
    assert np.abs(grads["bk"]).max() <= 1e-10
    eps = 1e-6
    for name in ("wq", "wk", "wv", "bo"):
        t = p[name]
        fd = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = t.data[idx]
            t.data[idx] = orig + eps
            hi = float((nn.axis_self_attention(x, 0, None, p) ** 2.0).sum().data)
            t.data[idx] = orig - eps
            lo = float((nn.axis_self_attention(x, 0, None, p) ** 2.0).sum().data)
            t.data[idx] = orig
            fd[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        err = np.max(np.abs(grads[name] - fd) / np.maximum(1e-8, np.abs(grads[name]) + np.abs(fd)))
        assert err <= 1e-4, (name, err)
