"""Training losses: the score-weighted mixture regression loss, the
max-margin score loss, the history-reconstruction MSE, and their weighted
sum.

All losses take autodiff Tensors for the predicted quantities and plain
arrays for ground truth, and return scalar Tensors ready for backward().
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import scenario as sc


@dataclasses.dataclass
class LossWeights:
    beta1: float = 0.3
    beta2: float = 0.3
    sigma_margin: float = 0.15


def track_attributes(states):
    """Ground-truth attribute rows (x, y, cos h, sin h, v) and validity from
    raw track states; invalid frames are zeroed."""
    states = np.asarray(states, dtype=np.float64)
    valid = states[:, sc.SVALID] > 0.5
    attr = np.stack(
        [
            states[:, sc.SX],
            states[:, sc.SY],
            np.cos(states[:, sc.SHEADING]),
            np.sin(states[:, sc.SHEADING]),
            states[:, sc.SSPEED],
        ],
        axis=-1,
    )
    return attr * valid[:, None], valid


def gmm_loss(trajectories, scores, gt, valid_mask):
    """Negative log-likelihood of a score-weighted unit-variance mixture:

        L = -log sum_i exp(log s_i - 1/2 sum_t sum_c (gt - pred)^2)

    summed over the valid timestamps of the whole track (history and future)
    and all five channels, evaluated through log-sum-exp.
    """
    k, t, c = trajectories.shape
    if scores.shape != (k,):
        raise ValueError(f"scores shape {scores.shape} does not match K={k}")
    if gt.shape != (t, c):
        raise ValueError(f"gt shape {gt.shape} does not match trajectories {(t, c)}")
    if np.any(scores.data <= 0.0):
        raise ValueError("scores must be strictly positive (take them from a softmax)")
    w = valid_mask.astype(trajectories.dtype)[None, :, None]
    resid = (trajectories - ad.Tensor(gt.astype(trajectories.dtype))) * ad.Tensor(w)
    sq = (resid * resid).sum(axis=(1, 2))  # [K]
    return -ad.logsumexp(ad.log(scores) - sq * 0.5)


def pick_positive_mode(traj_future_xy, gt_future_xy, valid_future):
    """Index of the mode closest to ground truth: smallest displacement at the
    last valid future frame, ties broken by average displacement over valid
    future frames, then by lowest index."""
    valid_future = np.asarray(valid_future, dtype=bool)
    if not valid_future.any():
        raise ValueError("target has no valid future frame")
    end = int(np.nonzero(valid_future)[0][-1])
    fde = np.linalg.norm(traj_future_xy[:, end] - gt_future_xy[end], axis=-1)
    dists = np.linalg.norm(traj_future_xy - gt_future_xy[None], axis=-1)
    ade = dists[:, valid_future].mean(axis=1)
    order = np.lexsort((np.arange(len(fde)), ade, fde))
    return int(order[0])


def margin_loss(scores, positive_index, sigma=0.15):
    """Max-margin score loss: mean over the non-positive modes of
    max(0, s_i + sigma - s_positive)."""
    k = scores.shape[0]
    if k < 2:
        raise ValueError("margin loss needs at least 2 modes")
    if not 0 <= positive_index < k:
        raise ValueError(f"positive index {positive_index} out of range for K={k}")
    pos = scores[positive_index]
    terms = ad.relu(scores + sigma - pos)
    keep = np.ones(k, dtype=scores.dtype)
    keep[positive_index] = 0.0
    return (terms * ad.Tensor(keep)).sum() / float(k - 1)


def temporal_flow_loss(h_pred, h_gt):
    """Mean squared error between reconstructed and observed history."""
    if h_pred.shape != h_gt.shape:
        raise ValueError(f"shape mismatch {h_pred.shape} vs {h_gt.shape}")
    diff = h_pred - ad.Tensor(np.asarray(h_gt, dtype=h_pred.dtype))
    return (diff * diff).mean()


def total_loss(bundle, gt_track, weights=None):
    """Weighted sum L = L_reg + beta1 L_score + beta2 L_tf for one scene.

    `gt_track` is the target agent's track in the same (normalized) frame as
    the bundle.  Returns the scalar total and a breakdown dict with float
    components and the selected positive mode.
    """
    weights = weights or LossWeights()
    gt_attr, valid = track_attributes(gt_track.states)
    t_h = bundle.h_pred.shape[0]

    l_reg = gmm_loss(bundle.trajectories, bundle.scores, gt_attr, valid)

    positive = pick_positive_mode(
        bundle.trajectories.data[:, t_h:, :2], gt_attr[t_h:, :2], valid[t_h:]
    )
    l_score = margin_loss(bundle.scores, positive, weights.sigma_margin)

    # invalid history frames are masked out of both sides; the denominator
    # stays T_h x 2 so the loss scale does not depend on track completeness
    hist_mask = valid[:t_h, None].astype(bundle.h_pred.dtype)
    l_tf = temporal_flow_loss(bundle.h_pred * ad.Tensor(hist_mask), gt_attr[:t_h, :2])

    total = l_reg + l_score * weights.beta1 + l_tf * weights.beta2
    breakdown = {
        "reg": float(l_reg.data),
        "score": float(l_score.data),
        "tf": float(l_tf.data),
        "positive_index": positive,
    }
    return total, breakdown
