"""The forecasting network: axis-factored encoder over agents and time,
cross-attention map fusion, K-learnable-token decoder, and the regression,
score, and temporal-flow heads, plus checkpoint persistence.

Parameters live in a flat name->Tensor dict with dotted prefixes
(``enc0.att_t.wq`` ...).  Everything except the per-slot agent embedding is
capacity-agnostic, so a checkpoint trained at one (A_max, M_max) can be
loaded at another; `load_checkpoint` resizes the slot table by zero-padding
or slicing.
"""

import dataclasses
import hashlib
import json

import numpy as np

from . import autodiff as ad
from . import nn
from . import scenario as sc

AGENT_FEATURES = 6
MAP_FEATURES = 6
TRAJ_CHANNELS = 5  # (x, y, cos h, sin h, v)

CKPT_MAGIC = b"TFCKPT1\n"


@dataclasses.dataclass
class ModelConfig:
    d: int = 128
    k: int = 6
    a_max: int = 32
    m_max: int = 128
    t_h: int = 50
    t_f: int = 60
    encoder_depth: int = 3
    decoder_depth: int = 2
    seed: int = 0
    dtype: str = "float64"

    def validate(self):
        if self.k < 2:
            raise ValueError("need at least 2 modes")
        if self.a_max < 1 or self.m_max < 1:
            raise ValueError("capacities must be >= 1")
        if self.d < 1 or self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ValueError("width and depths must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def t_total(self):
        return self.t_h + self.t_f


@dataclasses.dataclass
class MixedFeature:
    features: ad.Tensor  # [A, T_h, D]
    agent_mask: np.ndarray  # [A, T_h] bool


@dataclasses.dataclass
class PredictionBundle:
    trajectories: ad.Tensor  # [K, T_total, 5]
    scores: ad.Tensor  # [K], simplex
    h_pred: ad.Tensor  # [T_h, 2]


def _sub(params, prefix):
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def init_params(cfg):
    """Fresh parameter dict, deterministic in cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    d = cfg.d
    params = {}

    def put(prefix, group):
        for k, v in group.items():
            params[f"{prefix}.{k}"] = v

    params["embed.agent.w"] = nn._glorot(rng, AGENT_FEATURES, d, dt)
    params["embed.agent.b"] = nn._zeros_param(d, dt)
    put("embed.map", nn.mlp_params(rng, MAP_FEATURES, d, d, dt))
    params["embed.time"] = ad.Tensor(
        rng.normal(0.0, 0.02, size=(cfg.t_total, d)).astype(dt), requires_grad=True
    )
    params["embed.slot"] = ad.Tensor(
        rng.normal(0.0, 0.02, size=(cfg.a_max, d)).astype(dt), requires_grad=True
    )

    for i in range(cfg.encoder_depth):
        for ln in ("ln_t", "ln_a", "ln_m", "ln_f"):
            put(f"enc{i}.{ln}", nn.layer_norm_params(d, dt))
        put(f"enc{i}.att_t", nn.attention_params(rng, d, dt))
        put(f"enc{i}.att_a", nn.attention_params(rng, d, dt))
        put(f"enc{i}.att_m", nn.attention_params(rng, d, dt))
        put(f"enc{i}.mlp", nn.mlp_params(rng, d, d, d, dt))
    put("enc_out.ln", nn.layer_norm_params(d, dt))

    params["tokens"] = ad.Tensor(
        rng.normal(0.0, 0.02, size=(cfg.k, d)).astype(dt), requires_grad=True
    )
    for j in range(cfg.decoder_depth):
        for ln in ("ln_c", "ln_k", "ln_f"):
            put(f"dec{j}.{ln}", nn.layer_norm_params(d, dt))
        put(f"dec{j}.att_c", nn.attention_params(rng, d, dt))
        put(f"dec{j}.att_k", nn.attention_params(rng, d, dt))
        put(f"dec{j}.mlp", nn.mlp_params(rng, d, d, d, dt))
    put("dec_out.ln", nn.layer_norm_params(d, dt))

    put("reg.mlp", nn.mlp_params(rng, d, d, TRAJ_CHANNELS, dt))
    put("reg.lstm", nn.lstm_params(rng, d, d, dt))
    params["reg.proj.w"] = nn._glorot(rng, d, TRAJ_CHANNELS, dt)
    params["reg.proj.b"] = nn._zeros_param(TRAJ_CHANNELS, dt)

    put("score.att", nn.attention_params(rng, d, dt))
    put("score.mlp", nn.mlp_params(rng, d, d, 1, dt))

    put("tf.pyr", nn.pyramid_params(rng, d, dt))
    put("tf.mlp", nn.mlp_params(rng, cfg.t_f * d, d, cfg.t_h * 2, dt))
    return params


def _encoder_depth(params):
    i = 0
    while f"enc{i}.mlp.w1" in params:
        i += 1
    return i


def _decoder_depth(params):
    j = 0
    while f"dec{j}.mlp.w1" in params:
        j += 1
    return j


def embed_map(map_tensor, map_mask, params):
    """Per-point MLP then mean-pool each polyline to one feature row [M, D]."""
    h = nn.mlp(map_tensor, _sub(params, "embed.map"))  # [M, P, D]
    pooled = h.mean(axis=1)
    keep = ad.Tensor(map_mask[:, None].astype(pooled.dtype))
    return pooled * keep


def encode(agent_tensor, map_tensor, masks, params, map_enc=None):
    """Axis-factored encoder: per block, time-axis self-attention, agent-axis
    self-attention, cross-attention into map features, and an MLP, all as
    pre-norm residual sub-layers.  Features at invalid positions are zeroed
    after every block so padding can never leak."""
    slot = params["embed.slot"]
    d = params["embed.agent.w"].shape[1]
    a_rows = agent_tensor.shape[0]
    if agent_tensor.shape[-1] != AGENT_FEATURES:
        raise ValueError(f"agent tensor must have {AGENT_FEATURES} features")
    if slot.shape[0] != a_rows:
        raise ValueError(
            f"agent capacity mismatch: tensors have {a_rows} rows, slot table has "
            f"{slot.shape[0]} (reload the checkpoint at this capacity)"
        )
    agent_mask = masks["agent"]
    map_mask = masks["map"]
    t_h = agent_tensor.shape[1]

    if map_enc is None:
        map_enc = embed_map(map_tensor, map_mask, params)

    keep = ad.Tensor(agent_mask[:, :, None].astype(agent_tensor.dtype))
    x = nn.affine(agent_tensor, params["embed.agent.w"], params["embed.agent.b"])
    x = x + params["embed.time"][:t_h].reshape((1, t_h, d))
    x = x + slot.reshape((a_rows, 1, d))
    x = x * keep

    for i in range(_encoder_depth(params)):
        p = f"enc{i}"
        x = x + nn.axis_self_attention(
            nn.layer_norm(x, -1, _sub(params, f"{p}.ln_t")), 1, agent_mask,
            _sub(params, f"{p}.att_t"),
        )
        x = x + nn.axis_self_attention(
            nn.layer_norm(x, -1, _sub(params, f"{p}.ln_a")), 0, agent_mask,
            _sub(params, f"{p}.att_a"),
        )
        x = x + nn.axis_cross_attention(
            nn.layer_norm(x, -1, _sub(params, f"{p}.ln_m")), map_enc, 1, 0, map_mask,
            _sub(params, f"{p}.att_m"),
        )
        x = x + nn.mlp(nn.layer_norm(x, -1, _sub(params, f"{p}.ln_f")), _sub(params, f"{p}.mlp"))
        x = x * keep
    x = nn.layer_norm(x, -1, _sub(params, "enc_out.ln")) * keep
    return MixedFeature(x, agent_mask)


def decode(x_m, x_k, params, t_total=None):
    """Mode tokens attend over the flattened agent-time features, then over
    each other, per decoder block; the time axis is carried so future
    features can be sliced off the result."""
    k, d = x_k.shape
    feats = x_m.features
    a, t_h = feats.shape[0], feats.shape[1]
    t_total = t_total or params["embed.time"].shape[0]
    kv = feats.reshape((a * t_h, d))
    kv_mask = x_m.agent_mask.reshape(a * t_h)

    x = x_k.reshape((k, 1, d)) + params["embed.time"].reshape((1, t_total, d))
    for j in range(_decoder_depth(params)):
        p = f"dec{j}"
        x = x + nn.axis_cross_attention(
            nn.layer_norm(x, -1, _sub(params, f"{p}.ln_c")), kv, 1, 0, kv_mask,
            _sub(params, f"{p}.att_c"),
        )
        x = x + nn.axis_self_attention(
            nn.layer_norm(x, -1, _sub(params, f"{p}.ln_k")), 0, None,
            _sub(params, f"{p}.att_k"),
        )
        x = x + nn.mlp(nn.layer_norm(x, -1, _sub(params, f"{p}.ln_f")), _sub(params, f"{p}.mlp"))
    return nn.layer_norm(x, -1, _sub(params, "dec_out.ln"))


def regression_head(x_pt, params):
    """Trajectory attributes from an MLP branch plus a per-mode recurrent
    branch over time, summed."""
    mlp_branch = nn.mlp(x_pt, _sub(params, "reg.mlp"))
    rec = nn.recurrent_sequence(x_pt, 1, _sub(params, "reg.lstm"))
    rec_branch = nn.affine(rec, params["reg.proj.w"], params["reg.proj.b"])
    return mlp_branch + rec_branch


def score_head(x_pt, map_enc, map_mask, params):
    """Per-mode pooled features cross-attend into the map, an MLP scores each
    mode, softmax normalizes."""
    pooled = x_pt.mean(axis=1)  # [K, D]
    att = nn.axis_cross_attention(pooled, map_enc, 0, 0, map_mask, _sub(params, "score.att"))
    logits = nn.mlp(att, _sub(params, "score.mlp"))  # [K, 1]
    return ad.softmax(logits.reshape((1, logits.shape[0])), axis=-1).reshape((logits.shape[0],))


def temporal_flow_head(x_pt, mode_index, params):
    """Reconstruct history positions from one mode's future features."""
    t_h2 = params["tf.mlp.w2"].shape[1]
    x_f = x_pt[int(mode_index), x_pt.shape[1] - _future_extent(params, x_pt) :, :]
    pyr = nn.temporal_pyramid(x_f, _sub(params, "tf.pyr"))
    flat = pyr.reshape((1, pyr.shape[0] * pyr.shape[1]))
    out = nn.mlp(flat, _sub(params, "tf.mlp"))
    return out.reshape((t_h2 // 2, 2))


def _future_extent(params, x_pt):
    # tf.mlp input width is T_f * D
    return params["tf.mlp.w1"].shape[0] // x_pt.shape[-1]


def forward(ns, cfg, params):
    """Full pipeline on one normalized, filtered scene."""
    agent_np, map_np, masks = sc.to_model_tensors(ns, cfg.a_max, cfg.m_max)
    dt = cfg.np_dtype
    agent_tensor = ad.Tensor(agent_np.astype(dt))
    map_tensor = ad.Tensor(map_np.astype(dt))
    map_enc = embed_map(map_tensor, masks["map"], params)
    x_m = encode(agent_tensor, map_tensor, masks, params, map_enc=map_enc)
    x_pt = decode(x_m, params["tokens"], params, t_total=cfg.t_total)
    trajectories = regression_head(x_pt, params)
    scores = score_head(x_pt, map_enc, masks["map"], params)
    best = int(np.argmax(scores.data))
    h_pred = temporal_flow_head(x_pt, best, params)
    return PredictionBundle(trajectories, scores, h_pred)


# -- checkpointing ------------------------------------------------------------


def save_checkpoint(path, cfg, params):
    names = sorted(params)
    payload = b"".join(
        np.ascontiguousarray(params[n].data, dtype="<f4").tobytes() for n in names
    )
    header = {
        "version": 1,
        "config": dataclasses.asdict(cfg),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path, cfg=None):
    """Read a checkpoint; with `cfg` given, require compatible width/modes and
    adapt the agent slot table to the requested capacity."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        payload = fh.read()
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ValueError(f"{path}: checksum mismatch, file corrupt")

    saved_cfg = ModelConfig(**header["config"])
    target = saved_cfg if cfg is None else cfg
    for field in ("d", "k", "t_h", "t_f", "encoder_depth", "decoder_depth"):
        if getattr(saved_cfg, field) != getattr(target, field):
            raise ValueError(
                f"{path}: checkpoint has {field}={getattr(saved_cfg, field)}, "
                f"requested {getattr(target, field)} (only capacities may change)"
            )
    dt = target.np_dtype
    params = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        params[entry["name"]] = ad.Tensor(arr.astype(dt), requires_grad=True)
    if offset != len(payload):
        raise ValueError(f"{path}: payload size does not match the parameter table")

    slot = params["embed.slot"].data
    if target.a_max != slot.shape[0]:
        resized = np.zeros((target.a_max, slot.shape[1]), dtype=dt)
        keep = min(target.a_max, slot.shape[0])
        resized[:keep] = slot[:keep]
        params["embed.slot"] = ad.Tensor(resized, requires_grad=True)
    cfg_out = dataclasses.replace(saved_cfg, a_max=target.a_max, m_max=target.m_max, dtype=target.dtype)
    return cfg_out, params
