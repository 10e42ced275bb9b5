"""Optimization: Adam with a two-step decay schedule, per-scenario
augmentation, gradient-norm clipping, a seeded validation split, and
hard-example mining with a proxy model.
"""

import csv
import dataclasses
import hashlib

import numpy as np

from . import augment as ag
from . import autodiff as ad
from . import losses as tl
from . import metrics as tmx
from . import model as tm
from . import scenario as sc


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr0: float = 2.5e-4
    decay1_frac: float = 0.85  # lr0/10 from here
    decay2_frac: float = 0.95  # lr0/100 from here
    clip_norm: float = 5.0
    val_fraction: float = 0.10
    seed: int = 0
    augment: ag.AugmentConfig | None = None  # None disables augmentation

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.augment is not None:
            self.augment.validate()
        return self


@dataclasses.dataclass
class HardMiningConfig:
    subset_fraction: float = 0.5
    mined_fraction: float = 0.25
    oversample_factor: int = 3

    def validate(self):
        if not 0.0 < self.mined_fraction < 1.0:
            raise ValueError("mined_fraction must be in (0, 1)")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be >= 1")
        if not 0.0 < self.subset_fraction < 1.0:
            raise ValueError("subset_fraction must be in (0, 1)")
        return self


@dataclasses.dataclass
class MiningResult:
    sampling_list: list  # scenarios, mined ones duplicated
    mined_ids: list
    scores: dict  # scenario_id -> proxy brier-minFDE on the complement


class NumericalAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries the failing batch context."""


def lr_at(epoch, cfg):
    """Piecewise-constant schedule: lr0, then lr0/10, then lr0/100."""
    if epoch >= cfg.decay2_frac * cfg.epochs:
        return cfg.lr0 / 100.0
    if epoch >= cfg.decay1_frac * cfg.epochs:
        return cfg.lr0 / 10.0
    return cfg.lr0


def init_adam_state(params):
    return {
        "step": 0,
        "m": {n: np.zeros_like(p.data) for n, p in params.items()},
        "v": {n: np.zeros_like(p.data) for n, p in params.items()},
    }


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on params and state."""
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


def clip_gradients(grads, max_norm):
    """Scale all gradients by a common factor so the global norm is bounded.
    Returns the pre-clip norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def split_corpus(corpus, cfg):
    """Deterministic hash split: ~val_fraction of scenarios held out."""
    train, val = [], []
    bound = int(cfg.val_fraction * 100)
    for s in corpus:
        digest = hashlib.sha256(f"{cfg.seed}:{s.scenario_id}".encode()).digest()
        (val if digest[0] % 100 < bound else train).append(s)
    return train, val


def _prepared(s):
    return sc.filter_radius(sc.normalize(s))


def _scene_loss(s, model_cfg, params):
    ns = _prepared(s)
    bundle = tm.forward(ns, model_cfg, params)
    return tl.total_loss(bundle, sc.target_track(ns))


def evaluate_brier(scenarios, model_cfg, params):
    """Mean brier-minFDE over scenarios; NaN for an empty list."""
    if not scenarios:
        return float("nan")
    values = []
    for s in scenarios:
        ns = _prepared(s)
        bundle = tm.forward(ns, model_cfg, params)
        t_h = bundle.h_pred.shape[0]
        gt, valid = sc.target_future(ns)
        values.append(
            tmx.brier_min_fde(
                bundle.trajectories.data[:, t_h:, :2], bundle.scores.data, gt, valid
            )
        )
    return float(np.mean(values))


def train(corpus, model_cfg, train_cfg, params=None, on_epoch=None):
    """Run the full loop and return (params, history).

    History has one row per epoch: epoch, lr, mean loss and components over
    the training scenarios, and validation brier-minFDE.  Deterministic for a
    fixed seed and thread configuration.
    """
    train_cfg.validate()
    model_cfg.validate()
    if not corpus:
        raise ValueError("empty corpus")
    if params is None:
        params = tm.init_params(model_cfg)
    state = init_adam_state(params)
    train_set, val_set = split_corpus(corpus, train_cfg)
    if not train_set:
        raise ValueError("validation split consumed every scenario")
    rng = np.random.default_rng([train_cfg.seed, 1])
    history = []

    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        order = rng.permutation(len(train_set))
        sums = {"loss": 0.0, "reg": 0.0, "score": 0.0, "tf": 0.0}
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + train_cfg.batch_size]]
            grad_sum = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in params.items()}
            for s in batch:
                if train_cfg.augment is not None:
                    record = ag.sample_augmentation(train_cfg.augment, rng)
                    s = ag.apply_augmentation(s, record)
                loss, parts = _scene_loss(s, model_cfg, params)
                if not np.isfinite(loss.data):
                    raise NumericalAbort(
                        f"non-finite loss at epoch {epoch}, batch starting {start}, "
                        f"scenario {s.scenario_id}, seed {train_cfg.seed}"
                    )
                grads, _ = ad.gradients(loss, params)
                for name, g in grads.items():
                    grad_sum[name] += g
                sums["loss"] += float(loss.data)
                for key in ("reg", "score", "tf"):
                    sums[key] += parts[key]
            inv = 1.0 / len(batch)
            for g in grad_sum.values():
                g *= inv
            clip_gradients(grad_sum, train_cfg.clip_norm)
            adam_step(params, grad_sum, state, lr)
        n = len(train_set)
        row = {
            "epoch": epoch,
            "lr": lr,
            "loss": sums["loss"] / n,
            "reg": sums["reg"] / n,
            "score": sums["score"] / n,
            "tf": sums["tf"] / n,
            "val_brier_min_fde": evaluate_brier(val_set, model_cfg, params),
        }
        history.append(row)
        if on_epoch is not None and on_epoch(row):
            break
    return params, history


def write_history_csv(path, history):
    keys = ("epoch", "lr", "loss", "reg", "score", "tf", "val_brier_min_fde")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in history:
            writer.writerow([repr(row[k]) for k in keys])


def hard_mine(corpus, model_cfg, train_cfg, mining_cfg):
    """Train a proxy on a random subset, score the complement by
    brier-minFDE, and oversample the worst fraction.

    The returned sampling list keeps the original corpus order and appends
    (oversample_factor - 1) extra copies of each mined scenario.
    """
    mining_cfg.validate()
    rng = np.random.default_rng([train_cfg.seed, 2])
    n_subset = int(mining_cfg.subset_fraction * len(corpus))
    if n_subset < 8:
        raise ValueError(f"proxy subset of {n_subset} scenarios is too small (need >= 8)")
    picks = rng.permutation(len(corpus))
    subset = [corpus[i] for i in sorted(picks[:n_subset])]
    complement = [corpus[i] for i in sorted(picks[n_subset:])]

    proxy_params, _ = train(subset, model_cfg, train_cfg)

    scores = {}
    for s in complement:
        scores[s.scenario_id] = evaluate_brier([s], model_cfg, proxy_params)
    n_mined = int(mining_cfg.mined_fraction * len(complement))
    ranked = sorted(scores, key=lambda sid: (-scores[sid], sid))
    mined = set(ranked[:n_mined])

    sampling = list(corpus)
    for s in corpus:
        if s.scenario_id in mined:
            sampling.extend([s] * (mining_cfg.oversample_factor - 1))
    return MiningResult(sampling, sorted(mined), scores)
