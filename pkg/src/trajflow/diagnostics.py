"""Finite-difference audits of the autodiff tape, runnable from the CLI.

Each check compares the tape gradient of a scalar functional against central
differences at a random float64 point and reports the worst relative error.
"""

import numpy as np

from . import autodiff as ad
from . import losses as tl
from . import model as tm
from . import nn
from . import scenario as sc


def _check_attention(rng):
    d = 6
    params = nn.attention_params(rng, d)
    w = rng.normal(size=(2, 5, d))

    def f(x):
        y = nn.axis_self_attention(x.reshape((2, 5, d)), 1, None, params)
        return (y * ad.Tensor(w) * y).sum()

    x = ad.Tensor(rng.normal(size=(2, 5, d)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_mlp(rng):
    params = nn.mlp_params(rng, 4, 7, 3)
    w = rng.normal(size=(5, 3))

    def f(x):
        y = nn.mlp(x.reshape((5, 4)), params)
        return (y * ad.Tensor(w) * y).sum()

    x = ad.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_lstm(rng):
    params = nn.lstm_params(rng, 3, 4)
    w = rng.normal(size=(6, 2, 4))

    def f(x):
        y = nn.recurrent_sequence(x.reshape((6, 2, 3)), 0, params)
        return (y * ad.Tensor(w) * y).sum()

    x = ad.Tensor(rng.normal(size=(6, 2, 3)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_pyramid(rng):
    params = nn.pyramid_params(rng, 5)
    w = rng.normal(size=(7, 5))

    def f(x):
        y = nn.temporal_pyramid(x.reshape((7, 5)), params)
        return (y * ad.Tensor(w) * y).sum()

    x = ad.Tensor(rng.normal(size=(7, 5)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_layer_norm(rng):
    params = nn.layer_norm_params(6)
    w = rng.normal(size=(4, 6))

    def f(x):
        y = nn.layer_norm(x.reshape((4, 6)), -1, params)
        return (y * ad.Tensor(w) * y).sum()

    x = ad.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_gmm(rng):
    gt = rng.normal(size=(4, 5))
    valid = np.array([True, True, False, True])

    def f(x):
        scores = ad.softmax(x[:2].reshape((1, 2)), axis=-1).reshape((2,))
        return tl.gmm_loss(x[2:].reshape((2, 4, 5)), scores, gt, valid)

    x = ad.Tensor(np.concatenate([rng.normal(size=2), rng.normal(size=40) * 0.3]),
                  requires_grad=True)
    return ad.grad_check(f, x)


def _check_margin(rng):
    def f(x):
        s = ad.softmax(x.reshape((1, 4)), axis=-1).reshape((4,))
        return tl.margin_loss(s, 0)

    x = ad.Tensor(rng.normal(size=4), requires_grad=True)
    return ad.grad_check(f, x)


def _check_temporal_flow(rng):
    h_gt = rng.normal(size=(6, 2))

    def f(x):
        return tl.temporal_flow_loss(x.reshape((6, 2)), h_gt)

    x = ad.Tensor(rng.normal(size=(6, 2)), requires_grad=True)
    return ad.grad_check(f, x)


def _check_model_loss(rng):
    cfg = tm.ModelConfig(d=8, k=2, a_max=3, m_max=6, encoder_depth=1, decoder_depth=1,
                         seed=int(rng.integers(2**31)))
    params = tm.init_params(cfg)
    s = sc.generate_one(int(rng.integers(2**31)), 0, n_agents=3, n_lanes=2)
    ns = sc.filter_radius(sc.normalize(s))
    gt_track = sc.target_track(ns)

    def f(x):
        p = dict(params)
        p["tokens"] = x.reshape((cfg.k, cfg.d))
        bundle = tm.forward(ns, cfg, p)
        return tl.total_loss(bundle, gt_track)[0]

    x = ad.Tensor(params["tokens"].data.astype(np.float64).ravel().copy(),
                  requires_grad=True)
    return ad.grad_check(f, x)


CHECKS = (
    ("attention", _check_attention),
    ("mlp", _check_mlp),
    ("recurrent", _check_lstm),
    ("temporal_pyramid", _check_pyramid),
    ("layer_norm", _check_layer_norm),
    ("gmm_loss", _check_gmm),
    ("margin_loss", _check_margin),
    ("temporal_flow_loss", _check_temporal_flow),
    ("model_total_loss", _check_model_loss),
)


def run_gradient_checks(seed, verbose=False):
    """Run every check once; returns the worst relative error observed."""
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for name, check in CHECKS:
        err = check(rng)
        worst = max(worst, err)
        if verbose:
            print(f"gradcheck {name}: {err:.3e}")
    return worst
