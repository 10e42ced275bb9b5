"""Neural building blocks: axis attention, MLP, recurrent sequence, temporal
feature pyramid, layer norm.

All ops take and return `autodiff.Tensor` and keep their parameters in plain
name->Tensor dicts so the model can register them under dotted prefixes.

Convention: the last axis is always the feature axis.  Attention mixes
information along exactly one non-feature axis; every other axis is treated
as an independent batch dimension.
"""

import numpy as np

from . import autodiff as ad


def _normalize_axis(axis, ndim, what):
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim - 1:
        raise ValueError(f"{what} axis {axis} out of range for rank-{ndim} tensor (feature axis excluded)")
    return ax


def _require_finite(t, what):
    if not np.isfinite(t.data).all():
        raise ValueError(f"non-finite values in {what}")


# -- parameter constructors ---------------------------------------------------


def _glorot(rng, fan_in, fan_out, dtype):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.Tensor(rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype), requires_grad=True)


def _zeros_param(n, dtype):
    return ad.Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


def attention_params(rng, d, dtype=np.float64):
    """Single-head query/key/value/output projections at width d."""
    return {
        "wq": _glorot(rng, d, d, dtype),
        "bq": _zeros_param(d, dtype),
        "wk": _glorot(rng, d, d, dtype),
        "bk": _zeros_param(d, dtype),
        "wv": _glorot(rng, d, d, dtype),
        "bv": _zeros_param(d, dtype),
        "wo": _glorot(rng, d, d, dtype),
        "bo": _zeros_param(d, dtype),
    }


def mlp_params(rng, d_in, d_hidden, d_out, dtype=np.float64):
    return {
        "w1": _glorot(rng, d_in, d_hidden, dtype),
        "b1": _zeros_param(d_hidden, dtype),
        "w2": _glorot(rng, d_hidden, d_out, dtype),
        "b2": _zeros_param(d_out, dtype),
    }


def lstm_params(rng, d_in, d_hidden, dtype=np.float64):
    return {
        "wx": _glorot(rng, d_in, 4 * d_hidden, dtype),
        "wh": _glorot(rng, d_hidden, 4 * d_hidden, dtype),
        "b": _zeros_param(4 * d_hidden, dtype),
    }


def pyramid_params(rng, d, dtype=np.float64):
    return {
        "w_pool": _glorot(rng, d, d, dtype),
        "b_pool": _zeros_param(d, dtype),
        "w_lat": _glorot(rng, d, d, dtype),
        "b_lat": _zeros_param(d, dtype),
    }


def layer_norm_params(d, dtype=np.float64):
    return {
        "gamma": ad.Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        "beta": _zeros_param(d, dtype),
    }


# -- ops ----------------------------------------------------------------------


def affine(x, w, b):
    return ad.matmul(x, w) + b


def mlp(x, params):
    """Two affine layers with a ReLU between."""
    if x.shape[-1] != params["w1"].shape[0]:
        raise ValueError(f"mlp width mismatch: input {x.shape[-1]}, params expect {params['w1'].shape[0]}")
    return affine(ad.relu(affine(x, params["w1"], params["b1"])), params["w2"], params["b2"])


def layer_norm(x, axis, params, eps=1e-5):
    return ad.layer_norm(x, params["gamma"], params["beta"], axis=axis, eps=eps)


_MASK_FILL = -1e30  # exp(fill - rowmax) underflows to exactly 0 once any position is valid


def axis_cross_attention(x1, x2, axis_q, axis_kv, mask, params, stats=None):
    """Attention with queries along `axis_q` of x1 and keys/values along
    `axis_kv` of x2; all other axes are independent.

    `mask` is a boolean array of x2's shape without the feature axis (None
    means all valid).  Masked positions get exactly zero weight.  A query row
    with no valid key outputs zeros; pass a `stats` dict to receive the
    weights and the empty-row flags.
    """
    _require_finite(x1, "x1")
    _require_finite(x2, "x2")
    axis_q = _normalize_axis(axis_q, x1.ndim, "query")
    axis_kv = _normalize_axis(axis_kv, x2.ndim, "key/value")
    d = params["wq"].shape[0]
    if x1.shape[-1] != d or x2.shape[-1] != d:
        raise ValueError(f"attention width mismatch: got {x1.shape[-1]}/{x2.shape[-1]}, params expect {d}")

    if mask is None:
        mask = np.ones(x2.shape[:-1], dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype != np.bool_ or mask.shape != x2.shape[:-1]:
        raise ValueError(f"mask shape {mask.shape} does not match key/value positions {x2.shape[:-1]}")

    q = affine(x1, params["wq"], params["bq"]).moveaxis(axis_q, -2)
    k = affine(x2, params["wk"], params["bk"]).moveaxis(axis_kv, -2)
    v = affine(x2, params["wv"], params["bv"]).moveaxis(axis_kv, -2)

    batch_q, batch_kv = q.shape[:-2], k.shape[:-2]
    try:
        if np.broadcast_shapes(batch_q, batch_kv) != batch_q:
            raise ValueError
    except ValueError:
        raise ValueError(
            f"incompatible non-attended axes: queries {batch_q}, keys {batch_kv}"
        ) from None

    scores = ad.matmul(q, k.moveaxis(-1, -2)) * (1.0 / np.sqrt(d))
    mask_rows = np.moveaxis(mask, axis_kv, -1)  # [batch_kv..., L_kv]
    fill = np.where(mask_rows, 0.0, _MASK_FILL)[..., None, :].astype(scores.dtype)
    weights = ad.softmax(scores + ad.Tensor(fill), axis=-1)

    # rows with no valid key come out uniform from the softmax; zero them
    any_valid = mask_rows.any(axis=-1)
    row_ok = np.broadcast_to(any_valid[..., None, None], (*batch_q, q.shape[-2], 1))
    if not any_valid.all():
        weights = weights * ad.Tensor(row_ok.astype(weights.dtype))
    if stats is not None:
        stats["weights"] = weights.data
        stats["empty_rows"] = ~row_ok[..., 0]

    mixed = ad.matmul(weights, v)
    out = affine(mixed, params["wo"], params["bo"]).moveaxis(-2, axis_q)
    if not any_valid.all():
        keep = np.broadcast_to(np.moveaxis(row_ok, -2, axis_q), out.shape).astype(out.dtype)
        out = out * ad.Tensor(keep)
    return out


def axis_self_attention(x, axis, mask, params, stats=None):
    """Attention along one axis of x, queries and keys/values both from x."""
    return axis_cross_attention(x, x, axis, axis, mask, params, stats=stats)


def recurrent_sequence(x, time_axis, params):
    """Gated recurrent pass along `time_axis`; other axes are batch."""
    time_axis = _normalize_axis(time_axis, x.ndim, "time")
    if x.shape[time_axis] == 0:
        raise ValueError("recurrent_sequence needs time extent >= 1")
    moved = x.moveaxis(time_axis, 0)
    t = moved.shape[0]
    rest = moved.shape[1:-1]
    batch = int(np.prod(rest)) if rest else 1
    flat = moved.reshape((t, batch, moved.shape[-1]))
    h = ad.lstm(flat, params["wx"], params["wh"], params["b"])
    return h.reshape((t, *rest, h.shape[-1])).moveaxis(0, time_axis)


def temporal_pyramid(x, params):
    """Two-scale temporal feature pyramid over the second-to-last axis.

    Bottom level is the input; the coarse level is stride-2 average pooling
    (odd lengths pad-right by repeating the last step) followed by a linear
    map, upsampled back by nearest neighbor and added to a per-timestep
    lateral linear of the input.
    """
    t = x.shape[-2]
    if t < 2:
        raise ValueError(f"temporal_pyramid needs time extent >= 2, got {t}")
    if t % 2 == 1:
        x_even = ad.concat([x, x[..., -1:, :]], axis=-2)
    else:
        x_even = x
    pooled = (x_even[..., 0::2, :] + x_even[..., 1::2, :]) * 0.5
    down = affine(pooled, params["w_pool"], params["b_pool"])
    t2, d = down.shape[-2], down.shape[-1]
    lead = down.shape[:-2]
    doubled = ad.concat(
        [down.reshape((*lead, t2, 1, d)), down.reshape((*lead, t2, 1, d))], axis=-2
    ).reshape((*lead, 2 * t2, d))
    up = doubled[..., :t, :]
    lateral = affine(x, params["w_lat"], params["b_lat"])
    return up + lateral
